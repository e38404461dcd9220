"""Raster field data model: csv-grid ingestion, synthetic fields, patch extraction.

A field is a small image raster: one channel per covariate (nitrogen rate first,
terrain and radar covariates after it) plus a validity mask. Yield lives in a
raster of the same shape. Model training and curve generation both consume
5x5 patches cut from these rasters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as _field
from pathlib import Path

import numpy as np

Array = np.ndarray

SENTINEL = -9999.0
PATCH_SIZE = 5
HALF = PATCH_SIZE // 2
DEFAULT_FEATURE_NAMES = ("N", "S", "E", "TPI", "A", "P", "VV", "VH")


class GridParseError(ValueError):
    """A csv-grid file violates the expected layout."""


@dataclass(frozen=True)
class FieldRaster:
    """Immutable covariate raster with a validity mask.

    Attributes
    ----------
    data : (height, width, n_features) float array. Channel 0 is the nitrogen
        rate; masked-out cells hold a neutral fill (per-channel mean over valid
        cells), never the raw sentinel.
    mask : (height, width) bool array, True inside the field.
    feature_ranges : (n_features, 2) array of (min, max) over masked-in cells.
    """

    height: int
    width: int
    n_features: int
    data: Array
    mask: Array
    feature_names: tuple[str, ...]
    feature_ranges: Array
    cell_size_m: float = 10.0

    def __post_init__(self):
        if self.n_features < 2:
            raise ValueError("need nitrogen plus at least one passive feature")
        if self.data.shape != (self.height, self.width, self.n_features):
            raise ValueError(f"data shape {self.data.shape} does not match "
                             f"({self.height}, {self.width}, {self.n_features})")
        if self.mask.shape != (self.height, self.width):
            raise ValueError("mask shape does not match raster")
        if len(self.feature_names) != self.n_features:
            raise ValueError("one name per feature channel required")
        if self.feature_ranges.shape != (self.n_features, 2):
            raise ValueError("feature_ranges must be (n_features, 2)")
        self.data.flags.writeable = False
        self.mask.flags.writeable = False
        self.feature_ranges.flags.writeable = False

    @classmethod
    def from_data(cls, data, mask=None, feature_names=None, cell_size_m=10.0):
        """Build a raster from an array, computing ranges over masked-in cells."""
        data = np.asarray(data, dtype=float).copy()
        h, w, n = data.shape
        if mask is None:
            mask = np.ones((h, w), dtype=bool)
        else:
            mask = np.asarray(mask, dtype=bool).copy()
        if not mask.any():
            raise ValueError("field has no valid cells")
        if feature_names is None:
            feature_names = tuple(DEFAULT_FEATURE_NAMES[:n]) if n <= len(DEFAULT_FEATURE_NAMES) \
                else tuple(f"X{i}" for i in range(n))
        valid = data[mask]
        ranges = np.stack([valid.min(axis=0), valid.max(axis=0)], axis=1)
        # Neutral fill so downstream patch reads never touch invalid values.
        fill = valid.mean(axis=0)
        data[~mask] = fill
        return cls(h, w, n, data, mask, tuple(feature_names), ranges, float(cell_size_m))


@dataclass(frozen=True)
class YieldRaster:
    """Harvested yield (bu/ac) on the same grid and mask as its FieldRaster."""

    height: int
    width: int
    values: Array
    mask: Array

    def __post_init__(self):
        if self.values.shape != (self.height, self.width):
            raise ValueError("yield values shape does not match raster")
        if self.mask.shape != (self.height, self.width):
            raise ValueError("yield mask shape does not match raster")
        self.values.flags.writeable = False
        self.mask.flags.writeable = False

    @classmethod
    def from_values(cls, values, mask=None):
        values = np.asarray(values, dtype=float).copy()
        h, w = values.shape
        if mask is None:
            mask = np.ones((h, w), dtype=bool)
        else:
            mask = np.asarray(mask, dtype=bool).copy()
        if mask.any():
            values[~mask] = values[mask].mean()
        return cls(h, w, values, mask)


@dataclass(frozen=True)
class Patch:
    """A 5x5 window cut from a field raster.

    origin is the (row, col) of the top-left cell; cube is (5, 5, n_features);
    target is the matching (5, 5) yield patch when the patch is labeled.
    """

    origin: tuple[int, int]
    cube: Array
    target: Array | None = None

    def __post_init__(self):
        if self.cube.shape[:2] != (PATCH_SIZE, PATCH_SIZE) or self.cube.ndim != 3:
            raise ValueError(f"patch cube must be {PATCH_SIZE}x{PATCH_SIZE}xn, got {self.cube.shape}")
        if self.target is not None and self.target.shape != (PATCH_SIZE, PATCH_SIZE):
            raise ValueError("patch target must be 5x5")

    @property
    def center(self) -> tuple[int, int]:
        return (self.origin[0] + HALF, self.origin[1] + HALF)


# ---------------------------------------------------------------------------
# csv-grid ingestion
# ---------------------------------------------------------------------------
#
# Layout:
#   line 1            height,width,n_features,cell_size_m
#   next n lines      channel names, one per line
#   then n blocks     height rows of width comma-separated values each
# -9999 marks masked cells. Yield files use the same layout with n_features=1.

def _parse_row(line: str, width: int, lineno: int) -> list[float]:
    toks = line.split(",")
    if len(toks) != width:
        raise GridParseError(f"line {lineno}: expected {width} values, got {len(toks)}")
    out = []
    for col, tok in enumerate(toks):
        try:
            out.append(float(tok))
        except ValueError:
            raise GridParseError(f"line {lineno}, column {col + 1}: not a number: {tok.strip()!r}") from None
    return out


def _read_grid_file(path) -> tuple[int, int, int, float, list[str], Array]:
    lines = Path(path).read_text().splitlines()
    lines = [ln for ln in lines if ln.strip() != ""]
    if not lines:
        raise GridParseError(f"{path}: empty file")
    head = lines[0].split(",")
    if len(head) != 4:
        raise GridParseError(f"line 1: header must be height,width,n_features,cell_size_m")
    try:
        h, w, n = int(head[0]), int(head[1]), int(head[2])
        cell = float(head[3])
    except ValueError:
        raise GridParseError(f"line 1: malformed header {lines[0]!r}") from None
    if h <= 0 or w <= 0 or n <= 0:
        raise GridParseError("line 1: dimensions must be positive")
    expected = 1 + n + n * h
    if len(lines) != expected:
        raise GridParseError(f"expected {expected} lines for {n} channels of {h} rows, got {len(lines)}")
    names = [lines[1 + i].strip() for i in range(n)]
    data = np.empty((h, w, n), dtype=float)
    pos = 1 + n
    for s in range(n):
        for r in range(h):
            data[r, :, s] = _parse_row(lines[pos], w, pos + 1)
            pos += 1
    return h, w, n, cell, names, data


def load_field(path) -> FieldRaster:
    """Load a covariate raster from a csv-grid file."""
    h, w, n, cell, names, data = _read_grid_file(path)
    if n < 2:
        raise GridParseError("field file needs at least 2 channels")
    mask = ~np.any(data == SENTINEL, axis=2)
    if not mask.any():
        raise GridParseError(f"{path}: every cell is masked out")
    return FieldRaster.from_data(data, mask, names, cell)


def load_yield(path) -> YieldRaster:
    """Load a yield raster from a csv-grid file with a single channel."""
    h, w, n, _cell, _names, data = _read_grid_file(path)
    if n != 1:
        raise GridParseError(f"yield file must have 1 channel, found {n}")
    values = data[:, :, 0]
    mask = values != SENTINEL
    return YieldRaster.from_values(values, mask)


def _write_grid(path, blocks: list[Array], names: list[str], mask: Array, cell_size_m: float):
    h, w = blocks[0].shape
    out = [f"{h},{w},{len(blocks)},{cell_size_m!r}"]
    out.extend(names)
    for block in blocks:
        vals = block.copy()
        vals[~mask] = SENTINEL
        for r in range(h):
            out.append(",".join(repr(float(v)) for v in vals[r]))
    Path(path).write_text("\n".join(out) + "\n")


def save_field(field: FieldRaster, path):
    """Write a raster back to csv-grid form, restoring the mask sentinel."""
    _write_grid(path, [field.data[:, :, s] for s in range(field.n_features)],
                list(field.feature_names), field.mask, field.cell_size_m)


def save_yield(yld: YieldRaster, path, cell_size_m: float = 10.0):
    _write_grid(path, [yld.values], ["yield"], yld.mask, cell_size_m)


# ---------------------------------------------------------------------------
# Synthetic fields with known responsivity classes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SigmoidParams:
    """Logistic response: plateau / (1 + exp(-steepness * (n - midpoint)))."""

    plateau: float
    steepness: float
    midpoint: float

    def __post_init__(self):
        if self.plateau < 0 or self.steepness <= 0:
            raise ValueError("sigmoid params must give a nondecreasing curve")

    def curve(self, n):
        return self.plateau / (1.0 + np.exp(-self.steepness * (np.asarray(n, dtype=float) - self.midpoint)))


DEFAULT_RESPONSE_PARAMS = {
    "low": SigmoidParams(15.0, 0.04, 60.0),
    "medium": SigmoidParams(55.0, 0.06, 70.0),
    "high": SigmoidParams(105.0, 0.08, 80.0),
}
CLASS_NAMES = ("low", "medium", "high")


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic field whose responsivity class per cell is known.

    The designated terrain feature (slope by default) is laid out in three
    contiguous row bands with disjoint value ranges; the latent class of a cell
    is that feature's value thresholded at class_edges. Yield is the class
    sigmoid evaluated at the cell's nitrogen rate plus Gaussian noise.
    """

    seed: int
    height: int
    width: int
    noise_sd: float = 3.0
    n_low: float = 0.0
    n_high: float = 150.0
    base_yield: float = 40.0
    layout_feature: str = "S"
    class_edges: tuple[float, float] = (4.5, 9.5)
    response_params: dict = _field(default_factory=lambda: dict(DEFAULT_RESPONSE_PARAMS))

    def __post_init__(self):
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        if self.n_low > self.n_high:
            raise ValueError("n_low must not exceed n_high")
        if set(self.response_params) != set(CLASS_NAMES):
            raise ValueError(f"response_params must define exactly {CLASS_NAMES}")

    @classmethod
    def from_json(cls, path) -> "SyntheticSpec":
        """Read a flat JSON spec; per-class sigmoid keys look like low_plateau."""
        raw = json.loads(Path(path).read_text())
        params = {}
        for cls_name in CLASS_NAMES:
            dflt = DEFAULT_RESPONSE_PARAMS[cls_name]
            params[cls_name] = SigmoidParams(
                float(raw.pop(f"{cls_name}_plateau", dflt.plateau)),
                float(raw.pop(f"{cls_name}_steepness", dflt.steepness)),
                float(raw.pop(f"{cls_name}_midpoint", dflt.midpoint)),
            )
        edges = (float(raw.pop("edge_low_medium", 4.5)), float(raw.pop("edge_medium_high", 9.5)))
        known = {"seed", "height", "width", "noise_sd", "n_low", "n_high", "base_yield", "layout_feature"}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown synthetic spec keys: {sorted(unknown)}")
        return cls(class_edges=edges, response_params=params, **raw)

    def to_json(self, path):
        flat = {
            "seed": self.seed, "height": self.height, "width": self.width,
            "noise_sd": self.noise_sd, "n_low": self.n_low, "n_high": self.n_high,
            "base_yield": self.base_yield, "layout_feature": self.layout_feature,
            "edge_low_medium": self.class_edges[0], "edge_medium_high": self.class_edges[1],
        }
        for cls_name, p in self.response_params.items():
            flat[f"{cls_name}_plateau"] = p.plateau
            flat[f"{cls_name}_steepness"] = p.steepness
            flat[f"{cls_name}_midpoint"] = p.midpoint
        Path(path).write_text(json.dumps(flat, indent=2, sort_keys=True) + "\n")


def _smooth_unit_field(rng: np.random.Generator, h: int, w: int, cell: int = 8) -> Array:
    """Bilinearly upsampled coarse noise, rescaled into [-1, 1]."""
    gh, gw = max(2, h // cell + 2), max(2, w // cell + 2)
    coarse = rng.standard_normal((gh, gw))
    ry = np.linspace(0.0, gh - 1.0, h)
    rx = np.linspace(0.0, gw - 1.0, w)
    y0 = np.minimum(ry.astype(int), gh - 2)
    x0 = np.minimum(rx.astype(int), gw - 2)
    fy = (ry - y0)[:, None]
    fx = (rx - x0)[None, :]
    a = coarse[np.ix_(y0, x0)]
    b = coarse[np.ix_(y0, x0 + 1)]
    c = coarse[np.ix_(y0 + 1, x0)]
    d = coarse[np.ix_(y0 + 1, x0 + 1)]
    out = (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d)
    peak = np.abs(out).max()
    return out / peak if peak > 0 else out


def synthetic_class_labels(field: FieldRaster, spec: SyntheticSpec) -> Array:
    """Latent class per cell: the layout feature thresholded at class_edges."""
    chan = field.feature_names.index(spec.layout_feature)
    return np.digitize(field.data[:, :, chan], spec.class_edges)


def generate_synthetic(spec: SyntheticSpec) -> tuple[FieldRaster, YieldRaster, Array]:
    """Generate (field, yield, class labels) deterministically from the spec.

    Slope occupies three row bands with value ranges that straddle class_edges,
    so the label map is exactly ``synthetic_class_labels`` and forms contiguous
    bands. All other covariates are smooth decoys that do not influence yield.
    """
    h, w = spec.height, spec.width
    if h <= 0 or w <= 0:
        raise ValueError("zero-area field")
    rng = np.random.default_rng(spec.seed)

    data = np.empty((h, w, len(DEFAULT_FEATURE_NAMES)), dtype=float)
    data[:, :, 0] = rng.uniform(spec.n_low, spec.n_high, (h, w))

    # Slope bands: [1,3], [6,8], [11,13] across row thirds.
    slope = np.empty((h, w))
    r0, r1 = h // 3, (2 * h) // 3
    band_noise = _smooth_unit_field(rng, h, w, cell=4)
    slope[:r0] = 2.0 + band_noise[:r0]
    slope[r0:r1] = 7.0 + band_noise[r0:r1]
    slope[r1:] = 12.0 + band_noise[r1:]
    data[:, :, 1] = slope

    data[:, :, 2] = 1000.0 + 50.0 * _smooth_unit_field(rng, h, w)      # elevation (m)
    data[:, :, 3] = 2.0 * _smooth_unit_field(rng, h, w)                # TPI
    data[:, :, 4] = np.pi * (1.0 + 0.9 * _smooth_unit_field(rng, h, w))  # aspect (rad)
    data[:, :, 5] = 300.0 + 40.0 * _smooth_unit_field(rng, h, w)       # precipitation (mm)
    data[:, :, 6] = -10.0 + 3.0 * _smooth_unit_field(rng, h, w)        # VV backscatter
    data[:, :, 7] = -15.0 + 3.0 * _smooth_unit_field(rng, h, w)        # VH backscatter

    field = FieldRaster.from_data(data, None, DEFAULT_FEATURE_NAMES)
    labels = synthetic_class_labels(field, spec)

    yvals = np.full((h, w), spec.base_yield)
    for k, cls_name in enumerate(CLASS_NAMES):
        sel = labels == k
        yvals[sel] += spec.response_params[cls_name].curve(data[:, :, 0][sel])
    if spec.noise_sd > 0:
        yvals = yvals + rng.normal(0.0, spec.noise_sd, (h, w))
    return field, YieldRaster.from_values(yvals), labels


# ---------------------------------------------------------------------------
# Patch extraction
# ---------------------------------------------------------------------------

def _valid_centers(field: FieldRaster):
    """Masked-in centers whose full 5x5 window lies inside the raster, row-major."""
    for r in range(HALF, field.height - HALF):
        for c in range(HALF, field.width - HALF):
            if field.mask[r, c]:
                yield r, c


def _cut(field: FieldRaster, center: tuple[int, int], target: Array | None = None) -> Patch:
    r, c = center
    cube = field.data[r - HALF:r + HALF + 1, c - HALF:c + HALF + 1, :]
    tgt = None if target is None else target[r - HALF:r + HALF + 1, c - HALF:c + HALF + 1]
    return Patch(origin=(r - HALF, c - HALF), cube=cube, target=tgt)


def extract_patches(field: FieldRaster, yld: YieldRaster) -> list[Patch]:
    """One labeled patch per valid center position, in row-major order."""
    if (field.height, field.width) != (yld.height, yld.width):
        raise ValueError("field and yield rasters differ in shape")
    if not np.array_equal(field.mask, yld.mask):
        raise ValueError("field and yield rasters differ in mask")
    if field.height < PATCH_SIZE or field.width < PATCH_SIZE:
        raise ValueError(f"field smaller than {PATCH_SIZE}x{PATCH_SIZE}")
    return [_cut(field, ctr, yld.values) for ctr in _valid_centers(field)]


def split_patches(patches: list[Patch], fraction: float, seed: int) -> tuple[list[Patch], list[Patch]]:
    """Deterministic shuffled split with at least one patch on each side."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    m = len(patches)
    if m < 2:
        raise ValueError("need at least 2 patches to split")
    k = int(round(fraction * m))
    k = min(max(k, 1), m - 1)
    perm = np.random.default_rng(seed).permutation(m)
    train = [patches[i] for i in perm[:k]]
    val = [patches[i] for i in perm[k:]]
    return train, val


def window9(field: FieldRaster, site: tuple[int, int]) -> list[Patch]:
    """Valid patches whose extent covers ``site``: centers within Chebyshev
    distance 2 of the site that are masked-in with a fully in-bounds window.

    Unlabeled; row-major over centers; at most 25 patches.
    """
    sr, sc = site
    if not (0 <= sr < field.height and 0 <= sc < field.width):
        raise ValueError(f"site {site} outside raster bounds")
    if not field.mask[sr, sc]:
        raise ValueError(f"site {site} is masked out")
    out = []
    for r in range(max(HALF, sr - HALF), min(field.height - HALF - 1, sr + HALF) + 1):
        for c in range(max(HALF, sc - HALF), min(field.width - HALF - 1, sc + HALF) + 1):
            if field.mask[r, c]:
                out.append(_cut(field, (r, c)))
    return out
