"""Functional PCA on discretized response curves.

Curves sampled on the shared even nitrogen grid are treated as vectors, where
plain PCA coincides with basis-expansion functional PCA up to quadrature. The
fitted model maps a curve to K scores (projections on the leading
eigenvectors of the sample covariance) and defines the curve-shape distance as
the Euclidean distance between score vectors.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .response import ResponseCurve

Array = np.ndarray


@dataclass(frozen=True)
class FpcaModel:
    """Mean curve plus K orthonormal components of the curve ensemble.

    components[k] is the k-th discretized eigenfunction (unit norm under the
    uniform-grid inner product, largest-magnitude entry positive); eigenvalues
    are nonincreasing and explained_ratio is each one's share of the total
    sample variance.
    """

    mean_curve: Array
    components: Array
    eigenvalues: Array
    explained_ratio: Array

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def steps(self) -> int:
        return self.mean_curve.shape[0]


@dataclass(frozen=True)
class ScoreVector:
    site: tuple[int, int] | None
    scores: Array


def _curve_matrix(curves) -> Array:
    if isinstance(curves, np.ndarray):
        mat = np.asarray(curves, dtype=float)
    else:
        rows = [c.values if isinstance(c, ResponseCurve) else np.asarray(c, dtype=float)
                for c in curves]
        mat = np.stack(rows)
    if mat.ndim != 2:
        raise ValueError("curve set must be two-dimensional (curves x samples)")
    return mat


def _curve_values(curve, steps: int) -> Array:
    vals = curve.values if isinstance(curve, ResponseCurve) else np.asarray(curve, dtype=float)
    if vals.shape != (steps,):
        raise ValueError(f"curve length {vals.shape} does not match model ({steps},)")
    return vals


def fit(curves, variance_target: float = 0.995, k_max: int = 3) -> FpcaModel:
    """Eigen-decompose the sample covariance of the curve ensemble.

    K is the smallest component count whose cumulative explained variance
    reaches variance_target, capped at k_max (a warning notes when the cap
    overrides the rule). Covariance uses the unbiased 1/(m-1) normalization.
    """
    mat = _curve_matrix(curves)
    m, steps = mat.shape
    if m < 2:
        raise ValueError("need at least 2 curves")
    if not 0 < variance_target <= 1.0:
        raise ValueError("variance_target must lie in (0, 1]")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")

    mean = mat.mean(axis=0)
    centered = mat - mean
    cov = centered.T @ centered / (m - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    comps = eigvecs[:, order].T

    total = eigvals.sum()
    if total <= 0 or not np.isfinite(total):
        raise ValueError("degenerate curve set: all curves identical")
    ratios = eigvals / total

    cum = np.cumsum(ratios)
    hit = np.nonzero(cum >= variance_target - 1e-12)[0]
    k_rule = int(hit[0]) + 1 if hit.size else steps
    k = min(k_rule, k_max, steps)
    if k_rule > k_max:
        warnings.warn(f"variance target {variance_target} needs {k_rule} components; "
                      f"capped at k_max={k_max}", stacklevel=2)

    comps = comps[:k].copy()
    # Deterministic sign: largest-magnitude entry of each component positive.
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return FpcaModel(mean, comps, eigvals[:k].copy(), ratios[:k].copy())


def transform(model: FpcaModel, curve) -> ScoreVector:
    """Project a curve onto the model components."""
    vals = _curve_values(curve, model.steps)
    site = curve.site if isinstance(curve, ResponseCurve) else None
    return ScoreVector(site, model.components @ (vals - model.mean_curve))


def transform_many(model: FpcaModel, curves) -> Array:
    """(m, K) score matrix for a curve ensemble."""
    mat = _curve_matrix(curves)
    if mat.shape[1] != model.steps:
        raise ValueError("curve length does not match model")
    return (mat - model.mean_curve) @ model.components.T


def distance(model: FpcaModel, r1, r2) -> float:
    """Curve-shape distance: Euclidean distance between score vectors."""
    s1 = transform(model, r1).scores
    s2 = transform(model, r2).scores
    return float(np.sqrt(np.sum((s1 - s2) ** 2)))


def reconstruct(model: FpcaModel, scores) -> Array:
    """Mean curve plus the score-weighted component sum."""
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (model.k,):
        raise ValueError(f"expected {model.k} scores, got {scores.shape}")
    return model.mean_curve + scores @ model.components


def save_model(model: FpcaModel, path):
    doc = {
        "mean_curve": model.mean_curve.tolist(),
        "components": model.components.tolist(),
        "eigenvalues": model.eigenvalues.tolist(),
        "explained_ratio": model.explained_ratio.tolist(),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_model(path) -> FpcaModel:
    doc = json.loads(Path(path).read_text())
    return FpcaModel(np.asarray(doc["mean_curve"]), np.asarray(doc["components"]),
                     np.asarray(doc["eigenvalues"]), np.asarray(doc["explained_ratio"]))
