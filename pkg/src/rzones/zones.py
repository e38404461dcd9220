"""Management zones: fuzzy c-means over curve-shape scores.

Clustering runs in the K-dimensional score space, where Euclidean distance
equals the curve-shape distance by construction. Membership rows always sum to
one and the clustering objective is asserted nonincreasing at every iteration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .field import FieldRaster
from .fpca import ScoreVector

Array = np.ndarray

ZONE_PROFILES = {"heterogeneous": 4, "homogeneous": 3}


@dataclass(frozen=True)
class ZoneModel:
    """Fitted fuzzy c-means state in score space."""

    c: int
    centroids: Array
    fuzzifier: float
    memberships: Array
    assignments: Array
    seed: int
    objective_history: Array
    sites: list | None = None
    converged: bool = True
    n_iter: int = 0


@dataclass(frozen=True)
class ZoneMap:
    """Per-cell zone ids; -1 marks masked or skipped cells."""

    grid: Array
    c: int


def _score_matrix(scores):
    if isinstance(scores, np.ndarray):
        return np.asarray(scores, dtype=float), None
    pts = np.stack([s.scores if isinstance(s, ScoreVector) else np.asarray(s, dtype=float)
                    for s in scores])
    sites = [s.site for s in scores] if scores and isinstance(scores[0], ScoreVector) else None
    return pts, sites


def _distances(x: Array, centroids: Array) -> Array:
    return np.sqrt(((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2))


def _memberships(dist: Array, fuzzifier: float) -> Array:
    """Standard fuzzy membership u_iz = 1 / sum_w (d_iz / d_iw)^(2/(m-1)),
    with exact centroid hits resolved to one-hot rows."""
    power = 2.0 / (fuzzifier - 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (dist[:, :, None] / dist[:, None, :]) ** power
        u = 1.0 / ratio.sum(axis=2)
    hits = dist == 0.0
    rows = hits.any(axis=1)
    if rows.any():
        u[rows] = 0.0
        u[rows, np.argmax(hits[rows], axis=1)] = 1.0
    return u


def _farthest_point_init(x: Array, c: int, rng: np.random.Generator) -> Array | None:
    """c distinct data points: a seeded start then a greedy farthest sweep."""
    chosen = [int(rng.integers(x.shape[0]))]
    dmin = np.linalg.norm(x - x[chosen[0]], axis=1)
    while len(chosen) < c:
        nxt = int(np.argmax(dmin))
        if dmin[nxt] == 0.0:
            return None
        chosen.append(nxt)
        dmin = np.minimum(dmin, np.linalg.norm(x - x[nxt], axis=1))
    return x[chosen].copy()


def cluster(scores, c: int, fuzzifier: float = 2.0, seed: int = 0,
            max_iter: int = 300, tol: float = 1e-6, init_centroids=None) -> ZoneModel:
    """Fuzzy c-means under Euclidean distance in score space.

    Alternates membership and centroid updates until the largest centroid
    displacement drops below tol or max_iter is hit; deterministic given the
    seed. Degenerate initializations (duplicate points) are retried up to 10
    times. init_centroids overrides the seeded farthest-point start.
    """
    x, sites = _score_matrix(scores)
    m = x.shape[0]
    if c < 2:
        raise ValueError("zone count must be >= 2")
    if m <= c:
        raise ValueError("need more score vectors than zones")
    if fuzzifier <= 1.0:
        raise ValueError("fuzzifier must exceed 1")

    rng = np.random.default_rng(seed)
    if init_centroids is not None:
        centroids = np.asarray(init_centroids, dtype=float).copy()
        if centroids.shape != (c, x.shape[1]):
            raise ValueError("init_centroids must be (c, K)")
    else:
        centroids = None
        for _ in range(10):
            centroids = _farthest_point_init(x, c, rng)
            if centroids is not None:
                break
        if centroids is None:
            raise ValueError("degenerate initialization: fewer distinct points than zones")

    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        u = _memberships(_distances(x, centroids), fuzzifier)
        np.testing.assert_allclose(u.sum(axis=1), 1.0, atol=1e-9)
        um = u ** fuzzifier
        new_centroids = (um.T @ x) / um.sum(axis=0)[:, None]
        obj = float((um * _distances(x, new_centroids) ** 2).sum())
        if history and obj > history[-1] + 1e-9 * max(1.0, abs(history[-1])):
            raise AssertionError(f"objective increased at iteration {it}")
        history.append(obj)
        shift = np.abs(new_centroids - centroids).max()
        centroids = new_centroids
        if shift < tol:
            converged = True
            break

    memberships = _memberships(_distances(x, centroids), fuzzifier)
    assignments = np.argmax(memberships, axis=1)
    return ZoneModel(c, centroids, fuzzifier, memberships, assignments, seed,
                     np.asarray(history), sites, converged, it)


def membership(model: ZoneModel, score) -> tuple[int, Array]:
    """Out-of-sample membership row and its argmax zone (ties -> lowest id)."""
    vec = score.scores if isinstance(score, ScoreVector) else np.asarray(score, dtype=float)
    u = _memberships(_distances(vec[None, :], model.centroids), model.fuzzifier)[0]
    return int(np.argmax(u)), u


def zone_map_grid(model: ZoneModel, shape: tuple[int, int], site_index=None) -> ZoneMap:
    """Assignment raster of the given shape; -1 at masked or uncharted cells."""
    sites = model.sites if site_index is None else site_index
    if sites is None:
        raise ValueError("no site index available for the zone map")
    if len(sites) != model.assignments.shape[0]:
        raise ValueError("site index length does not match fitted scores")
    grid = np.full(shape, -1, dtype=int)
    for (r, c), z in zip(sites, model.assignments):
        grid[r, c] = int(z)
    return ZoneMap(grid, model.c)


def zone_map(model: ZoneModel, field: FieldRaster, site_index=None) -> ZoneMap:
    """Raster of hard assignments on the field's grid."""
    return zone_map_grid(model, (field.height, field.width), site_index)


def zone_counts_default(profile: str, override: int | None = None) -> int:
    """Configured zone count: 4 for heterogeneous fields, 3 for homogeneous,
    any explicit override within [2, 8]."""
    if override is not None:
        if not 2 <= int(override) <= 8:
            raise ValueError("zone count must lie in [2, 8]")
        return int(override)
    if profile not in ZONE_PROFILES:
        raise ValueError(f"unknown field profile {profile!r}")
    return ZONE_PROFILES[profile]


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------

def save_zones(model: ZoneModel, path):
    doc = {
        "c": model.c,
        "fuzzifier": model.fuzzifier,
        "seed": model.seed,
        "centroids": model.centroids.tolist(),
        "sites": None if model.sites is None else [list(s) for s in model.sites],
        "assignments": model.assignments.tolist(),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_zones(path) -> ZoneModel:
    doc = json.loads(Path(path).read_text())
    centroids = np.asarray(doc["centroids"], dtype=float)
    assignments = np.asarray(doc["assignments"], dtype=int)
    sites = None if doc["sites"] is None else [tuple(s) for s in doc["sites"]]
    return ZoneModel(doc["c"], centroids, doc["fuzzifier"],
                     memberships=np.zeros((0, doc["c"])), assignments=assignments,
                     seed=doc["seed"], objective_history=np.zeros(0), sites=sites)


def write_zone_map_csv(zmap: ZoneMap, path):
    lines = [",".join(str(int(v)) for v in row) for row in zmap.grid]
    Path(path).write_text("\n".join(lines) + "\n")


def write_zone_map_pgm(zmap: ZoneMap, path):
    """8-bit ASCII PGM; zone ids spread evenly over [0, 200], masked cells 255."""
    h, w = zmap.grid.shape
    scale = 200 // max(1, zmap.c - 1)
    gray = np.where(zmap.grid < 0, 255, zmap.grid * scale)
    body = "\n".join(" ".join(str(int(v)) for v in row) for row in gray)
    Path(path).write_text(f"P2\n# zones={zmap.c} scale={scale}\n{w} {h}\n255\n{body}\n")
