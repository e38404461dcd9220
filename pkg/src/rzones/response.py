"""Nitrogen response curves: sweep the N channel through a regressor, aggregate
overlapping patch predictions per site, and align curves vertically.

Each valid patch yields a 5x5 array of curves (one per cell) by re-predicting
the patch with channel 0 of every cell overwritten by each grid value. A site's
curve is the element-wise mean of the curves it receives from every valid patch
covering it; subtracting the minimum then leaves only the shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .field import FieldRaster, Patch, window9, _valid_centers, HALF
from .surrogate import PatchRegressor

Array = np.ndarray


@dataclass(frozen=True)
class NGrid:
    """Evenly spaced admissible nitrogen rates (lbs/acre)."""

    n_min: float = 0.0
    n_max: float = 150.0
    steps: int = 151

    def __post_init__(self):
        if not self.n_min < self.n_max:
            raise ValueError("n_min must be below n_max")
        if self.steps < 2:
            raise ValueError("need at least 2 grid steps")

    @property
    def values(self) -> Array:
        return np.linspace(self.n_min, self.n_max, self.steps)


@dataclass
class ResponseCurve:
    """Yield values over the nitrogen grid for one site."""

    site: tuple[int, int] | None
    values: Array
    aligned: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValueError("curve values must be one-dimensional")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("curve values must be finite")


def sweep_patch(regressor: PatchRegressor, cube: Array, grid: NGrid) -> Array:
    """(5, 5, steps) curves for one patch; slice t is the prediction with the
    nitrogen channel of every cell set to grid value t."""
    cube = np.asarray(cube, dtype=float)
    batch = np.repeat(cube[None, :, :, :], grid.steps, axis=0)
    batch[:, :, :, 0] = grid.values[:, None, None]
    preds = regressor.predict_batch(batch)
    return np.transpose(preds, (1, 2, 0))


def window_curve(regressor: PatchRegressor, patches: list[Patch], site: tuple[int, int],
                 grid: NGrid) -> Array:
    """Mean curve a site receives from the given patches (each must cover it)."""
    if not patches:
        raise ValueError(f"no valid patch covers site {site}")
    sr, sc = site
    rows = []
    for p in patches:
        i, j = sr - p.origin[0], sc - p.origin[1]
        if not (0 <= i < p.cube.shape[0] and 0 <= j < p.cube.shape[1]):
            raise ValueError(f"patch at {p.origin} does not cover site {site}")
        rows.append(sweep_patch(regressor, p.cube, grid)[i, j])
    return np.mean(rows, axis=0)


def site_curve(regressor: PatchRegressor, field: FieldRaster, site: tuple[int, int],
               grid: NGrid) -> ResponseCurve:
    """Unaligned response curve for one masked-in site."""
    return ResponseCurve(site, window_curve(regressor, window9(field, site), site, grid))


def align(curve: ResponseCurve) -> ResponseCurve:
    """Subtract the curve minimum; idempotent and shape preserving."""
    return ResponseCurve(curve.site, curve.values - curve.values.min(), aligned=True)


def field_curves(regressor: PatchRegressor, field: FieldRaster,
                 grid: NGrid) -> tuple[list[ResponseCurve], list[tuple[int, int]]]:
    """Aligned curves for every masked-in site with at least one valid patch.

    Patch sweeps are computed once per valid center and shared by every site the
    patch covers, which reproduces per-site window aggregation exactly. Returns
    the curves in row-major site order plus the list of skipped sites.
    """
    centers = list(_valid_centers(field))
    index = {ctr: k for k, ctr in enumerate(centers)}
    sweeps = np.empty((len(centers), 5, 5, grid.steps))
    for k, ctr in enumerate(centers):
        r, c = ctr
        cube = field.data[r - HALF:r + HALF + 1, c - HALF:c + HALF + 1, :]
        sweeps[k] = sweep_patch(regressor, cube, grid)

    curves: list[ResponseCurve] = []
    skipped: list[tuple[int, int]] = []
    for sr in range(field.height):
        for sc in range(field.width):
            if not field.mask[sr, sc]:
                continue
            rows = []
            for r in range(max(HALF, sr - HALF), min(field.height - HALF - 1, sr + HALF) + 1):
                for c in range(max(HALF, sc - HALF), min(field.width - HALF - 1, sc + HALF) + 1):
                    k = index.get((r, c))
                    if k is not None:
                        rows.append(sweeps[k, sr - (r - HALF), sc - (c - HALF)])
            if not rows:
                skipped.append((sr, sc))
                continue
            curves.append(align(ResponseCurve((sr, sc), np.mean(rows, axis=0))))
    if not curves:
        raise ValueError("no site produced a curve")
    return curves, skipped


# ---------------------------------------------------------------------------
# CSV export: site_row, site_col, then one column per grid sample; the header
# carries the grid values themselves.
# ---------------------------------------------------------------------------

def write_curves(path, curves: list[ResponseCurve], grid: NGrid):
    lines = ["site_row,site_col," + ",".join(repr(float(v)) for v in grid.values)]
    for cv in curves:
        if cv.values.shape != (grid.steps,):
            raise ValueError("curve length does not match grid")
        r, c = cv.site
        lines.append(f"{r},{c}," + ",".join(repr(float(v)) for v in cv.values))
    Path(path).write_text("\n".join(lines) + "\n")


def read_curves(path) -> tuple[list[ResponseCurve], NGrid]:
    lines = Path(path).read_text().splitlines()
    head = lines[0].split(",")
    if head[:2] != ["site_row", "site_col"]:
        raise ValueError("curve file header must start with site_row,site_col")
    gvals = [float(t) for t in head[2:]]
    grid = NGrid(gvals[0], gvals[-1], len(gvals))
    curves = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        toks = ln.split(",")
        vals = np.array([float(t) for t in toks[2:]])
        curves.append(ResponseCurve((int(toks[0]), int(toks[1])), vals,
                                    aligned=bool(vals.min() == 0.0)))
    return curves, grid
