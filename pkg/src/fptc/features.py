"""Construction of the normalized input maps fed to the two networks.

The prediction stage consumes four environment-derived channels:

* transmitter position: one-hot pixel at the transmitter cell,
* obstacle top view: obstacle heights scaled by the scene maximum,
* empirical: COST-231 Hata received power, normalized,
* line-of-sight indicator: 1 where the transmitter-receiver segment clears
  every intervening obstacle.

The correction stage consumes three measurement-derived channels:

* sparse measurements: measured power burned into the sampled pixels,
* interpolated: radial-basis-function interpolation of the measurements,
* coarse prediction: the first-stage output, normalized.

All feature maps hold values in [0, 1] and share the scene grid.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import (CapacityError, DegenerateGeometryError, DomainError,
                     NumericalError, ValidationError)
from .scene import (GridSpec, MeasurementSet, NormalizationRange, Scene,
                    normalize_rsrp, _freeze, _set)


class FeatureKind(enum.Enum):
    TX_POSITION = "tx_position"
    OBSTACLE_TOPVIEW = "obstacle_topview"
    EMPIRICAL = "empirical"
    LOS_INDICATOR = "los_indicator"
    SPARSE_MEASUREMENTS = "sparse_measurements"
    INTERPOLATED = "interpolated"
    COARSE_PREDICTION = "coarse_prediction"


PREDICT_CHANNEL_ORDER = (FeatureKind.TX_POSITION, FeatureKind.OBSTACLE_TOPVIEW,
                         FeatureKind.EMPIRICAL, FeatureKind.LOS_INDICATOR)
CORRECT_CHANNEL_ORDER = (FeatureKind.SPARSE_MEASUREMENTS, FeatureKind.INTERPOLATED,
                         FeatureKind.COARSE_PREDICTION)

#: smallest nonzero value a sampled-measurement pixel may carry, so a sampled
#: pixel is always distinguishable from the zero background
MEASUREMENT_FLOOR = 1.0 / 255.0


@dataclass(frozen=True)
class FeatureMap:
    """One normalized input channel tied to a grid."""

    kind: FeatureKind
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ValidationError(
                f"{self.kind.value} map shape {v.shape} does not match grid "
                f"{self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError(f"{self.kind.value} map has non-finite values")
        if np.any(v < 0) or np.any(v > 1):
            raise ValidationError(f"{self.kind.value} map values outside [0, 1]")
        if self.kind is FeatureKind.LOS_INDICATOR and not np.all((v == 0) | (v == 1)):
            raise ValidationError("line-of-sight map must be binary")
        if self.kind is FeatureKind.TX_POSITION:
            nz = np.flatnonzero(v)
            if nz.size != 1 or v.flat[nz[0]] != 1.0:
                raise ValidationError(
                    "transmitter position map must have exactly one pixel set to 1")
        _set(self, "values", _freeze(v))


@dataclass(frozen=True)
class InputStack:
    """Ordered channel bundle for one network stage."""

    stage: str                       # "predict" | "correct"
    channels: tuple[FeatureMap, ...]

    def __post_init__(self):
        if self.stage not in ("predict", "correct"):
            raise ValidationError(f"unknown stage '{self.stage}'")
        _set(self, "channels", tuple(self.channels))

    @property
    def grid(self) -> GridSpec:
        return self.channels[0].grid

    def array(self) -> np.ndarray:
        """(C, H, W) float32 array in the stack's fixed channel order."""
        return np.stack([c.values for c in self.channels]).astype(np.float32)


def assemble_input_stack(stage: str, parts) -> InputStack:
    """Validate and order feature maps into the fixed stack for a stage."""
    if stage == "predict":
        expected = PREDICT_CHANNEL_ORDER
    elif stage == "correct":
        expected = CORRECT_CHANNEL_ORDER
    else:
        raise ValidationError(f"unknown stage '{stage}'")
    parts = list(parts)
    got = sorted(p.kind.value for p in parts)
    want = sorted(k.value for k in expected)
    if got != want:
        raise ValidationError(
            f"stage '{stage}' needs channels {want}, got {got}")
    by_kind = {p.kind: p for p in parts}
    grid = parts[0].grid
    for p in parts:
        if p.grid != grid:
            raise ValidationError("input stack channels use different grids")
    return InputStack(stage=stage, channels=tuple(by_kind[k] for k in expected))


# ---------------------------------------------------------------------------
# environment-derived maps

def transmitter_position_map(scene: Scene) -> FeatureMap:
    """One-hot map: 1 at the transmitter cell, 0 elsewhere."""
    v = np.zeros(scene.grid.shape)
    v[scene.tx.y_px, scene.tx.x_px] = 1.0
    return FeatureMap(FeatureKind.TX_POSITION, scene.grid, v)


def obstacle_topview_map(scene: Scene) -> FeatureMap:
    """Obstacle heights scaled by the scene maximum (all 0 if no obstacles)."""
    hmax = float(scene.heights.max()) if scene.heights.size else 0.0
    v = scene.heights / hmax if hmax > 0 else np.zeros(scene.grid.shape)
    return FeatureMap(FeatureKind.OBSTACLE_TOPVIEW, scene.grid, v)


def cost231_pathloss(f_mhz, h_b_m, h_r_m, d_km):
    """COST-231 Hata urban path loss in dB.

    ``f_mhz`` carrier frequency, ``h_b_m`` base-station antenna height,
    ``h_r_m`` receiver antenna height, ``d_km`` link distance.  Accepts
    scalars or broadcastable arrays; every argument must be positive.
    """
    f = np.asarray(f_mhz, dtype=np.float64)
    hb = np.asarray(h_b_m, dtype=np.float64)
    hr = np.asarray(h_r_m, dtype=np.float64)
    d = np.asarray(d_km, dtype=np.float64)
    for name, a in (("f_mhz", f), ("h_b_m", hb), ("h_r_m", hr), ("d_km", d)):
        if not np.all(np.isfinite(a)) or np.any(a <= 0):
            raise DomainError(f"cost231_pathloss requires positive finite {name}")
    # urban mobile-antenna correction term and metropolitan-center offset
    ah_m = 3.20 * np.log10(11.75 * hr) ** 2 - 4.97
    c_m = 3.0
    pl = (46.3 + 33.9 * np.log10(f) - 13.82 * np.log10(hb) - ah_m
          + (44.9 - 6.55 * np.log10(hb)) * np.log10(d) + c_m)
    if pl.ndim == 0:
        return float(pl)
    return pl


def _distance_grid_m(scene: Scene) -> np.ndarray:
    """Per-pixel distance to the transmitter in meters, clamped at half a cell."""
    yy, xx = np.indices(scene.grid.shape)
    cell = scene.grid.cell_size_m
    d = np.hypot(xx - scene.tx.x_px, yy - scene.tx.y_px) * cell
    return np.maximum(d, 0.5 * cell)


def empirical_rsrp_dbm(scene: Scene) -> np.ndarray:
    """Received power grid (dBm) from the COST-231 Hata model, uncalibrated.

    The transmitter's own pixel uses a clamped distance of half a cell so the
    logarithm stays finite; that pixel carries the grid maximum.
    """
    d_km = _distance_grid_m(scene) / 1000.0
    pl = cost231_pathloss(scene.tx.freq_mhz, scene.tx.h_b_m, scene.rx_height_m, d_km)
    return scene.tx.power_dbm - pl


def empirical_radio_map(scene: Scene, rng: NormalizationRange) -> FeatureMap:
    """Normalized COST-231 Hata received-power channel."""
    v = normalize_rsrp(empirical_rsrp_dbm(scene), rng)
    return FeatureMap(FeatureKind.EMPIRICAL, scene.grid, v)


# ---------------------------------------------------------------------------
# line-of-sight geometry

def los_boundary_height(point, rx, tx, h_b_m: float, h_r_m: float) -> float:
    """Height of the transmitter-receiver sight line above a line point.

    The sight line drops linearly from the antenna height over the
    transmitter to the receiver height over the receiver; an obstacle cell
    whose height reaches this boundary blocks the link.  ``point``, ``rx``
    and ``tx`` are (x, y) pixel pairs.
    """
    if not h_r_m < h_b_m:
        raise ValidationError("receiver height must be below transmitter height")
    d_total = math.hypot(tx[0] - rx[0], tx[1] - rx[1])
    if d_total == 0:
        raise DegenerateGeometryError("transmitter and receiver share a cell")
    d_point = math.hypot(point[0] - rx[0], point[1] - rx[1])
    return h_r_m + d_point / d_total * abs(h_b_m - h_r_m)


def supercover_cells(x0: int, y0: int, x1: int, y1: int):
    """Yield every grid cell touched by the segment between two cell centers.

    Integer arithmetic throughout.  When the segment passes exactly through a
    cell corner, both corner-adjacent cells are yielded, so the cover never
    leaks diagonally.  The first yield is ``(x0, y0)`` and the last is
    ``(x1, y1)``.
    """
    yield x0, y0
    dx = x1 - x0
    dy = y1 - y0
    xstep = 1 if dx >= 0 else -1
    ystep = 1 if dy >= 0 else -1
    dx = abs(dx)
    dy = abs(dy)
    ddx = 2 * dx
    ddy = 2 * dy
    x, y = x0, y0
    if ddx >= ddy:
        errorprev = error = dx
        for _ in range(dx):
            x += xstep
            error += ddy
            if error > ddx:
                y += ystep
                error -= ddx
                if error + errorprev < ddx:      # crossed the horizontal edge first
                    yield x, y - ystep
                elif error + errorprev > ddx:    # crossed the vertical edge first
                    yield x - xstep, y
                else:                            # exactly through the corner
                    yield x, y - ystep
                    yield x - xstep, y
            yield x, y
            errorprev = error
    else:
        errorprev = error = dy
        for _ in range(dy):
            y += ystep
            error += ddx
            if error > ddy:
                x += xstep
                error -= ddy
                if error + errorprev < ddy:
                    yield x - xstep, y
                elif error + errorprev > ddy:
                    yield x, y - ystep
                else:
                    yield x - xstep, y
                    yield x, y - ystep
            yield x, y
            errorprev = error


def blocked_cell_counts(heights: np.ndarray, tx_x: int, tx_y: int,
                        h_b_m: float, h_r_m: float, cap: int | None = None) -> np.ndarray:
    """Per-pixel count of obstacle cells blocking the sight line from the tx.

    For each target pixel the segment from the transmitter cell is walked
    with :func:`supercover_cells`; an intermediate cell blocks when its
    height reaches the sight-line boundary evaluated at that cell's center.
    The transmitter and target cells themselves never count.  ``cap`` stops
    counting early (``cap=1`` turns this into a line-of-sight test).
    """
    if not h_r_m < h_b_m:
        raise ValidationError("receiver height must be below transmitter height")
    H, W = heights.shape
    counts = np.zeros((H, W), dtype=np.int32)
    if float(heights.max(initial=0.0)) <= 0.0:
        return counts
    dh = h_b_m - h_r_m
    hyp = math.hypot
    hv = heights
    for y in range(H):
        dy2 = (y - tx_y) ** 2
        row = counts[y]
        for x in range(W):
            if x == tx_x and y == tx_y:
                continue
            d_total = math.sqrt((x - tx_x) ** 2 + dy2)
            n = 0
            walker = supercover_cells(tx_x, tx_y, x, y)
            next(walker)                       # skip the transmitter cell
            for cx, cy in walker:
                if cx == x and cy == y:        # target cell never blocks
                    break
                h = hv[cy, cx]
                if h <= 0.0:
                    continue
                if h >= h_r_m + hyp(cx - x, cy - y) / d_total * dh:
                    n += 1
                    if cap is not None and n >= cap:
                        break
            row[x] = n
    return counts


def los_indicator_map(scene: Scene) -> FeatureMap:
    """Binary map: 1 where the transmitter sight line clears all obstacles."""
    counts = blocked_cell_counts(scene.heights, scene.tx.x_px, scene.tx.y_px,
                                 scene.tx.h_b_m, scene.rx_height_m, cap=1)
    return FeatureMap(FeatureKind.LOS_INDICATOR, scene.grid,
                      (counts == 0).astype(np.float64))


# ---------------------------------------------------------------------------
# measurement-derived maps

def sample_measurements(scene: Scene, count: int, seed: int) -> MeasurementSet:
    """Draw ``count`` distinct obstacle-free pixels and read off ground truth."""
    if scene.ground_truth is None:
        raise ValidationError("cannot sample measurements without ground truth")
    if count < 1:
        raise ValidationError("measurement count must be positive")
    free_y, free_x = np.nonzero(scene.heights == 0)
    if count > free_y.size:
        raise CapacityError(
            f"requested {count} measurements but only {free_y.size} "
            f"obstacle-free cells are available")
    rng = np.random.default_rng(seed)
    pick = rng.choice(free_y.size, size=count, replace=False)
    gt = scene.ground_truth.values_dbm
    samples = tuple((int(free_x[i]), int(free_y[i]), float(gt[free_y[i], free_x[i]]))
                    for i in pick)
    return MeasurementSet(samples=samples)


def measurement_map(m: MeasurementSet, grid: GridSpec,
                    rng: NormalizationRange) -> FeatureMap:
    """Burn normalized measured powers into their pixels; background stays 0.

    Sampled values are clamped up to ``MEASUREMENT_FLOOR`` so a measured pixel
    can never collide with the zero background.
    """
    v = np.zeros(grid.shape)
    seen = set()
    for x, y, value in m.samples:
        if not grid.contains(x, y):
            raise ValidationError(f"measurement at ({x}, {y}) outside grid")
        if (x, y) in seen:
            raise ValidationError(f"duplicate measurement position ({x}, {y})")
        seen.add((x, y))
        v[y, x] = min(max(normalize_rsrp(value, rng), MEASUREMENT_FLOOR), 1.0)
    return FeatureMap(FeatureKind.SPARSE_MEASUREMENTS, grid, v)


# ---------------------------------------------------------------------------
# radial basis function interpolation

@dataclass(frozen=True)
class RbfConfig:
    """Kernel choice and conditioning for measurement interpolation.

    ``shape_epsilon="auto"`` scales the kernel width with the mean sample
    spacing ``sqrt(grid_pixels / n_samples)``.
    """

    kernel: str = "gaussian"
    shape_epsilon: float | str = "auto"
    ridge: float = 1e-8

    def __post_init__(self):
        if self.kernel not in ("gaussian", "multiquadric", "thin_plate"):
            raise ValidationError(f"unknown RBF kernel '{self.kernel}'")
        if self.shape_epsilon != "auto":
            eps = float(self.shape_epsilon)
            if not (eps > 0 and math.isfinite(eps)):
                raise ValidationError("shape_epsilon must be positive or 'auto'")
            _set(self, "shape_epsilon", eps)
        if not (self.ridge >= 0 and math.isfinite(self.ridge)):
            raise ValidationError("ridge must be non-negative")


def _rbf_kernel(r: np.ndarray, kernel: str, eps: float) -> np.ndarray:
    if kernel == "gaussian":
        return np.exp(-(eps * r) ** 2)
    if kernel == "multiquadric":
        return np.sqrt(1.0 + (eps * r) ** 2)
    # thin plate: r^2 log r, continuously extended with 0 at r = 0
    out = np.zeros_like(r)
    nz = r > 0
    out[nz] = r[nz] ** 2 * np.log(r[nz])
    return out


def resolve_shape_epsilon(cfg: RbfConfig, grid: GridSpec, n_samples: int) -> float:
    if cfg.shape_epsilon != "auto":
        return float(cfg.shape_epsilon)
    mean_spacing = math.sqrt(grid.n_pixels / n_samples)
    return 1.0 / mean_spacing


def rbf_interpolate_dbm(m: MeasurementSet, grid: GridSpec,
                        cfg: RbfConfig | None = None) -> np.ndarray:
    """Interpolate sparse dBm measurements onto the full grid.

    Solves ``(K + ridge*I) w = v`` for the kernel weights, then evaluates the
    expansion at every pixel center.  With ``ridge=0`` the interpolant
    reproduces the sample values (up to solver precision).
    """
    cfg = cfg or RbfConfig()
    if len(m) < 1:
        raise ValidationError("interpolation needs at least one measurement")
    pos = m.positions.astype(np.float64)
    if len(np.unique(pos, axis=0)) != len(pos):
        raise ValidationError("duplicate measurement positions")
    for x, y, _ in m.samples:
        if not grid.contains(x, y):
            raise ValidationError(f"measurement at ({x}, {y}) outside grid")
    v = m.values_dbm
    eps = resolve_shape_epsilon(cfg, grid, len(m))

    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    a = _rbf_kernel(dist, cfg.kernel, eps)
    a[np.diag_indices_from(a)] += cfg.ridge
    try:
        w = np.linalg.solve(a, v)
        if cfg.ridge == 0:
            # one step of iterative refinement keeps the fit at the samples
            # near machine precision even for badly conditioned kernels
            w = w + np.linalg.solve(a, v - a @ w)
    except np.linalg.LinAlgError:
        w = np.full(len(v), np.nan)
    if not np.all(np.isfinite(w)):
        cond = float(np.linalg.cond(a))
        raise NumericalError(
            f"RBF system is singular or unstable (condition estimate {cond:.3e})")

    yy, xx = np.indices(grid.shape)
    px = np.column_stack([xx.ravel(), yy.ravel()]).astype(np.float64)
    d = np.hypot(px[:, None, 0] - pos[None, :, 0], px[:, None, 1] - pos[None, :, 1])
    values = _rbf_kernel(d, cfg.kernel, eps) @ w
    return values.reshape(grid.shape)


def rbf_interpolate(m: MeasurementSet, grid: GridSpec, rng: NormalizationRange,
                    cfg: RbfConfig | None = None) -> FeatureMap:
    """Normalized interpolated-measurement channel."""
    v = normalize_rsrp(rbf_interpolate_dbm(m, grid, cfg), rng)
    return FeatureMap(FeatureKind.INTERPOLATED, grid, v)


def coarse_prediction_map(p_pre, rng: NormalizationRange) -> FeatureMap:
    """Wrap a first-stage radio map as the correction stack's third channel."""
    v = normalize_rsrp(p_pre.values_dbm, rng)
    return FeatureMap(FeatureKind.COARSE_PREDICTION, p_pre.grid, v)
