"""Scene data model: grids, radio maps, measurements, ingestion and splits.

Coordinate convention used throughout the package: ``x`` is the column index,
``y`` is the row index, origin at the top-left corner.  Grids are stored
row-major, so ``array[y, x]`` addresses pixel ``(x, y)``.  Pixel centers sit at
integer coordinates and each cell covers a half-open unit square around its
center; physical distance between adjacent pixel centers is
``cell_size_m`` meters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IngestionError, RangeError, ValidationError

HEIGHTS_FILE = "heights.csv"
GROUND_TRUTH_FILE = "ground_truth.csv"
META_FILE = "meta.json"
_META_KEYS = ("tx_x", "tx_y", "tx_height_m", "tx_power_dbm", "freq_mhz",
              "rx_height_m", "cell_size_m")

SPLIT_NAMES = ("train_predict", "train_correct", "val_predict", "val_correct", "test")
SPLIT_WEIGHTS = (4, 3, 1, 1, 1)


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _set(obj, name, value):
    object.__setattr__(obj, name, value)


@dataclass(frozen=True)
class GridSpec:
    """Pixel dimensions of a raster and its physical resolution."""

    width_px: int
    height_px: int
    cell_size_m: float = 1.0

    def __post_init__(self):
        if int(self.width_px) != self.width_px or int(self.height_px) != self.height_px:
            raise ValidationError("grid dimensions must be integers")
        _set(self, "width_px", int(self.width_px))
        _set(self, "height_px", int(self.height_px))
        _set(self, "cell_size_m", float(self.cell_size_m))
        if self.width_px < 1 or self.height_px < 1:
            raise ValidationError("grid dimensions must be positive")
        if not (self.cell_size_m > 0 and math.isfinite(self.cell_size_m)):
            raise ValidationError("cell_size_m must be positive and finite")

    @property
    def shape(self) -> tuple[int, int]:
        """(rows, columns) for numpy array allocation."""
        return (self.height_px, self.width_px)

    @property
    def n_pixels(self) -> int:
        return self.width_px * self.height_px

    def contains(self, x: int, y: int) -> bool:
        return 0 <= x < self.width_px and 0 <= y < self.height_px


@dataclass(frozen=True)
class TransmitterConfig:
    """Transmitter placement and radio parameters for one scene."""

    x_px: int
    y_px: int
    h_b_m: float            # antenna height above ground, meters
    power_dbm: float
    freq_mhz: float

    def __post_init__(self):
        _set(self, "x_px", int(self.x_px))
        _set(self, "y_px", int(self.y_px))
        _set(self, "h_b_m", float(self.h_b_m))
        _set(self, "power_dbm", float(self.power_dbm))
        _set(self, "freq_mhz", float(self.freq_mhz))
        if not (self.h_b_m > 0 and math.isfinite(self.h_b_m)):
            raise ValidationError("transmitter height must be positive")
        if not (self.freq_mhz > 0 and math.isfinite(self.freq_mhz)):
            raise ValidationError("carrier frequency must be positive")
        if not math.isfinite(self.power_dbm):
            raise ValidationError("transmit power must be finite")


@dataclass(frozen=True)
class RadioMap:
    """Dense grid of received power values in dBm."""

    grid: GridSpec
    values_dbm: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values_dbm, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ValidationError(
                f"radio map shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("radio map contains non-finite values")
        _set(self, "values_dbm", _freeze(v))


@dataclass(frozen=True)
class MeasurementSet:
    """Sparse on-site measurements: ``(x, y, rsrp_dbm)`` triples."""

    samples: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        norm = tuple((int(x), int(y), float(v)) for x, y, v in self.samples)
        _set(self, "samples", norm)
        for _, _, v in norm:
            if not math.isfinite(v):
                raise ValidationError("measurement values must be finite")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def positions(self) -> np.ndarray:
        """(N, 2) integer array of (x, y) pixel positions."""
        if not self.samples:
            return np.zeros((0, 2), dtype=np.int64)
        return np.array([(x, y) for x, y, _ in self.samples], dtype=np.int64)

    @property
    def values_dbm(self) -> np.ndarray:
        return np.array([v for _, _, v in self.samples], dtype=np.float64)


@dataclass(frozen=True)
class Scene:
    """One environment: obstacle raster plus transmitter and receiver setup."""

    grid: GridSpec
    heights: np.ndarray     # obstacle heights in meters, 0 == free space
    tx: TransmitterConfig
    rx_height_m: float
    ground_truth: RadioMap | None = None
    scene_id: str = ""

    def __post_init__(self):
        h = np.asarray(self.heights, dtype=np.float64)
        if h.shape != self.grid.shape:
            raise ValidationError(
                f"heights shape {h.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(h)):
            raise ValidationError("heights contain non-finite values")
        if np.any(h < 0):
            raise ValidationError("obstacle heights must be non-negative")
        _set(self, "heights", _freeze(h))
        _set(self, "rx_height_m", float(self.rx_height_m))
        if not self.grid.contains(self.tx.x_px, self.tx.y_px):
            raise ValidationError(
                f"transmitter ({self.tx.x_px}, {self.tx.y_px}) outside grid")
        if not (self.rx_height_m > 0 and math.isfinite(self.rx_height_m)):
            raise ValidationError("receiver height must be positive")
        if not self.rx_height_m < self.tx.h_b_m:
            raise ValidationError(
                "receiver height must be below the transmitter antenna height")
        if self.ground_truth is not None and self.ground_truth.grid != self.grid:
            raise ValidationError("ground truth grid does not match scene grid")


@dataclass(frozen=True)
class NormalizationRange:
    """Fixed dBm range mapped linearly onto [0, 1] for network IO."""

    rsrp_min_dbm: float = -150.0
    rsrp_max_dbm: float = -40.0

    def __post_init__(self):
        lo, hi = float(self.rsrp_min_dbm), float(self.rsrp_max_dbm)
        _set(self, "rsrp_min_dbm", lo)
        _set(self, "rsrp_max_dbm", hi)
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ValidationError("normalization range must satisfy min < max")

    @property
    def span(self) -> float:
        return self.rsrp_max_dbm - self.rsrp_min_dbm


def normalize_rsrp(values, rng: NormalizationRange, direction: str = "forward"):
    """Map dBm values onto [0, 1] (``forward``) or back (``inverse``).

    Forward clamps into the range first, so out-of-range powers saturate at 0
    or 1.  Inverse is the exact linear inverse and requires inputs in [0, 1].
    """
    v = np.asarray(values, dtype=np.float64)
    if direction == "forward":
        if not np.all(np.isfinite(v)):
            raise ValidationError("cannot normalize non-finite values")
        out = (np.clip(v, rng.rsrp_min_dbm, rng.rsrp_max_dbm) - rng.rsrp_min_dbm) / rng.span
    elif direction == "inverse":
        if not np.all(np.isfinite(v)):
            raise ValidationError("cannot denormalize non-finite values")
        if np.any(v < -1e-9) or np.any(v > 1 + 1e-9):
            raise ValidationError("inverse normalization expects values in [0, 1]")
        out = rng.rsrp_min_dbm + np.clip(v, 0.0, 1.0) * rng.span
    else:
        raise ValidationError(f"unknown normalization direction '{direction}'")
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# ingestion

def _load_grid_csv(path: Path) -> np.ndarray:
    if not path.is_file():
        raise IngestionError(f"missing file: {path}")
    try:
        arr = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise IngestionError(f"cannot parse {path}: {exc}") from None
    return arr


def load_scene(path, scene_id: str | None = None) -> Scene:
    """Read one scene directory (heights.csv, meta.json, optional ground_truth.csv)."""
    path = Path(path)
    heights = _load_grid_csv(path / HEIGHTS_FILE)
    meta_path = path / META_FILE
    if not meta_path.is_file():
        raise IngestionError(f"missing file: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise IngestionError(f"cannot parse {meta_path}: {exc}") from None
    for key in _META_KEYS:
        if key not in meta:
            raise IngestionError(f"{meta_path} missing key '{key}'")

    grid = GridSpec(width_px=heights.shape[1], height_px=heights.shape[0],
                    cell_size_m=meta["cell_size_m"])
    tx = TransmitterConfig(x_px=meta["tx_x"], y_px=meta["tx_y"],
                           h_b_m=meta["tx_height_m"],
                           power_dbm=meta["tx_power_dbm"],
                           freq_mhz=meta["freq_mhz"])
    gt = None
    gt_path = path / GROUND_TRUTH_FILE
    if gt_path.is_file():
        gt_values = _load_grid_csv(gt_path)
        if gt_values.shape != heights.shape:
            raise ValidationError(
                f"ground truth shape {gt_values.shape} does not match "
                f"heights shape {heights.shape} in {path}")
        gt = RadioMap(grid=grid, values_dbm=gt_values)
    return Scene(grid=grid, heights=heights, tx=tx,
                 rx_height_m=meta["rx_height_m"], ground_truth=gt,
                 scene_id=scene_id if scene_id is not None else path.name)


def save_scene(scene: Scene, path) -> None:
    """Write a scene directory in the same layout ``load_scene`` reads."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    np.savetxt(path / HEIGHTS_FILE, scene.heights, delimiter=",", fmt="%.10g")
    meta = {
        "tx_x": scene.tx.x_px, "tx_y": scene.tx.y_px,
        "tx_height_m": scene.tx.h_b_m, "tx_power_dbm": scene.tx.power_dbm,
        "freq_mhz": scene.tx.freq_mhz, "rx_height_m": scene.rx_height_m,
        "cell_size_m": scene.grid.cell_size_m,
    }
    (path / META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if scene.ground_truth is not None:
        np.savetxt(path / GROUND_TRUTH_FILE, scene.ground_truth.values_dbm,
                   delimiter=",", fmt="%.10g")


def list_scene_ids(root) -> list[str]:
    """Sorted scene directory names under a dataset root."""
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"missing dataset directory: {root}")
    return sorted(p.name for p in root.iterdir() if (p / META_FILE).is_file())


def crop_interest_area(scene: Scene, origin: tuple[int, int], size: int) -> Scene:
    """Cut a square window out of a scene, translating the transmitter.

    ``origin`` is the top-left pixel (x, y) of the window; the window must lie
    fully inside the source grid and must contain the transmitter.
    """
    ox, oy = int(origin[0]), int(origin[1])
    size = int(size)
    if size < 1:
        raise ValidationError("crop size must be positive")
    if ox < 0 or oy < 0 or ox + size > scene.grid.width_px or oy + size > scene.grid.height_px:
        raise RangeError(
            f"crop window origin=({ox}, {oy}) size={size} exceeds "
            f"{scene.grid.width_px}x{scene.grid.height_px} grid")
    tx_x, tx_y = scene.tx.x_px - ox, scene.tx.y_px - oy
    if not (0 <= tx_x < size and 0 <= tx_y < size):
        raise ValidationError("crop window does not contain the transmitter")
    grid = GridSpec(width_px=size, height_px=size, cell_size_m=scene.grid.cell_size_m)
    heights = scene.heights[oy:oy + size, ox:ox + size].copy()
    gt = None
    if scene.ground_truth is not None:
        gt = RadioMap(grid=grid,
                      values_dbm=scene.ground_truth.values_dbm[oy:oy + size, ox:ox + size].copy())
    tx = TransmitterConfig(x_px=tx_x, y_px=tx_y, h_b_m=scene.tx.h_b_m,
                           power_dbm=scene.tx.power_dbm, freq_mhz=scene.tx.freq_mhz)
    return Scene(grid=grid, heights=heights, tx=tx, rx_height_m=scene.rx_height_m,
                 ground_truth=gt, scene_id=scene.scene_id)


# ---------------------------------------------------------------------------
# dataset splits

@dataclass(frozen=True)
class DatasetSplits:
    """Disjoint scene-id lists for the five pipeline roles (4:3:1:1:1)."""

    train_predict: tuple[str, ...]
    train_correct: tuple[str, ...]
    val_predict: tuple[str, ...]
    val_correct: tuple[str, ...]
    test: tuple[str, ...]

    def __post_init__(self):
        for name in SPLIT_NAMES:
            _set(self, name, tuple(getattr(self, name)))
        all_ids = [i for name in SPLIT_NAMES for i in getattr(self, name)]
        if len(set(all_ids)) != len(all_ids):
            raise ValidationError("dataset splits overlap")

    def as_dict(self) -> dict[str, list[str]]:
        return {name: list(getattr(self, name)) for name in SPLIT_NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSplits":
        missing = [n for n in SPLIT_NAMES if n not in d]
        if missing:
            raise ValidationError(f"split manifest missing keys: {missing}")
        return cls(**{n: tuple(d[n]) for n in SPLIT_NAMES})


def apportion(total: int, weights=SPLIT_WEIGHTS) -> list[int]:
    """Largest-remainder apportionment of ``total`` items over ``weights``.

    Ties on fractional remainders break toward the earlier bucket, so the
    result is deterministic.
    """
    if total < 0:
        raise ValidationError("cannot apportion a negative total")
    wsum = sum(weights)
    quotas = [total * w / wsum for w in weights]
    counts = [int(math.floor(q)) for q in quotas]
    leftover = total - sum(counts)
    order = sorted(range(len(weights)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def split_dataset(scene_ids, seed: int) -> DatasetSplits:
    """Shuffle scene ids with a seeded RNG and partition them 4:3:1:1:1."""
    ids = [str(s) for s in scene_ids]
    if len(ids) < len(SPLIT_NAMES):
        raise ValidationError(
            f"need at least {len(SPLIT_NAMES)} scenes to split, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ValidationError("scene ids must be unique")
    rng = np.random.default_rng(seed)
    shuffled = [ids[i] for i in rng.permutation(len(ids))]
    counts = apportion(len(ids))
    parts = {}
    at = 0
    for name, n in zip(SPLIT_NAMES, counts):
        parts[name] = tuple(shuffled[at:at + n])
        at += n
    return DatasetSplits(**parts)
