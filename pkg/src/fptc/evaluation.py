"""Map-quality metrics, split evaluation, ablations, and density sweeps.

RMSE and MAE are computed directly in dBm.  SSIM and PSNR treat the maps as
8-bit images: values are normalized with the run's shared
:class:`~fptc.scene.NormalizationRange` (clamping out-of-range power) and
scaled to [0, 255].  SSIM uses local statistics under an 11x11 Gaussian
window (sigma 1.5) over fully interior windows; the window settings are
written into every report's metadata sidecar so numbers stay comparable.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import time
from dataclasses import dataclass
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from PIL import Image
from scipy.signal import convolve2d

from .errors import ConfigurationError, ValidationError
from .features import RbfConfig, sample_measurements
from .scene import (DatasetSplits, NormalizationRange, RadioMap, Scene,
                    load_scene, normalize_rsrp)
from .training import (Checkpoint, TrainConfig, _TAG_EVAL_SAMPLES,
                       correct_radio_map, derive_seed, predict_radio_map,
                       train_stage)

METRICS_CSV_COLUMNS = ("scene_id", "stage", "rmse_dbm", "mae_dbm", "ssim",
                       "psnr_db", "infer_seconds")
MEAN_SCENE_ID = "mean"

SSIM_WINDOW_PX = 11
SSIM_SIGMA = 1.5
PIXEL_LEVELS = 255.0
SSIM_C1 = (0.01 * PIXEL_LEVELS) ** 2
SSIM_C2 = (0.03 * PIXEL_LEVELS) ** 2

#: channels each Table-2-style ablation retrains without, by stage
ABLATION_CHANNELS = {
    "predict": ("empirical", "los_indicator", "tx_position"),
    "correct": ("interpolated",),
}


@dataclass(frozen=True)
class MetricsRecord:
    """One evaluated map (or a mean over maps)."""

    scene_id: str
    stage: str
    rmse_dbm: float
    mae_dbm: float
    ssim: float
    psnr_db: float          # math.inf for identical maps
    infer_seconds: float

    def __post_init__(self):
        if self.rmse_dbm < 0 or self.mae_dbm < 0:
            raise ValidationError("rmse and mae must be non-negative")
        if not -1.0 <= self.ssim <= 1.0 + 1e-12:
            raise ValidationError(f"ssim {self.ssim} outside [-1, 1]")
        if self.mae_dbm > self.rmse_dbm * (1 + 1e-12) + 1e-12:
            raise ValidationError("mae cannot exceed rmse")


def _paired(p: RadioMap, q: RadioMap) -> tuple[np.ndarray, np.ndarray]:
    if p.values_dbm.shape != q.values_dbm.shape:
        raise ValidationError(
            f"map shapes differ: {p.values_dbm.shape} vs {q.values_dbm.shape}")
    return p.values_dbm, q.values_dbm


def rmse_dbm(p: RadioMap, q: RadioMap) -> float:
    """Root mean squared error over all pixels, in dBm."""
    a, b = _paired(p, q)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def mae_dbm(p: RadioMap, q: RadioMap) -> float:
    """Mean absolute error over all pixels, in dBm."""
    a, b = _paired(p, q)
    return float(np.mean(np.abs(a - b)))


def to_pixel_scale(m: RadioMap, rng: NormalizationRange) -> np.ndarray:
    """Map dBm values onto the [0, 255] image scale (clamped, not quantized)."""
    return normalize_rsrp(m.values_dbm, rng) * PIXEL_LEVELS


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(p: RadioMap, q: RadioMap, rng: NormalizationRange) -> float:
    """Mean local structural similarity on the 8-bit pixel scale."""
    a, b = _paired(p, q)
    h, w = a.shape
    if h < SSIM_WINDOW_PX or w < SSIM_WINDOW_PX:
        raise ValidationError(
            f"image {h}x{w} smaller than the {SSIM_WINDOW_PX}x{SSIM_WINDOW_PX} "
            "similarity window")
    x = to_pixel_scale(p, rng)
    y = to_pixel_scale(q, rng)
    win = _gaussian_window(SSIM_WINDOW_PX, SSIM_SIGMA)
    mu_x = convolve2d(x, win, mode="valid")
    mu_y = convolve2d(y, win, mode="valid")
    var_x = convolve2d(x * x, win, mode="valid") - mu_x ** 2
    var_y = convolve2d(y * y, win, mode="valid") - mu_y ** 2
    cov = convolve2d(x * y, win, mode="valid") - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(num / den))


def psnr_db(p: RadioMap, q: RadioMap, rng: NormalizationRange) -> float:
    """Peak signal-to-noise ratio on the 8-bit pixel scale; inf if identical."""
    x = to_pixel_scale(p, rng)
    y = to_pixel_scale(q, rng)
    if x.shape != y.shape:
        raise ValidationError(f"map shapes differ: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(PIXEL_LEVELS ** 2 / mse)


def compute_metrics(scene_id: str, stage: str, pred: RadioMap, truth: RadioMap,
                    rng: NormalizationRange, infer_seconds: float = 0.0) -> MetricsRecord:
    """All four map metrics for one predicted/true pair."""
    return MetricsRecord(scene_id=scene_id, stage=stage,
                         rmse_dbm=rmse_dbm(pred, truth),
                         mae_dbm=mae_dbm(pred, truth),
                         ssim=ssim(pred, truth, rng),
                         psnr_db=psnr_db(pred, truth, rng),
                         infer_seconds=infer_seconds)


def mean_record(rows, stage: str) -> tuple[MetricsRecord, int]:
    """Mean over per-scene rows; infinite-PSNR rows are excluded from the
    PSNR mean (their count is returned) rather than capped."""
    rows = [r for r in rows if r.stage == stage]
    if not rows:
        raise ValidationError(f"no rows for stage '{stage}'")
    finite_psnr = [r.psnr_db for r in rows if math.isfinite(r.psnr_db)]
    n_inf = len(rows) - len(finite_psnr)
    mean_psnr = float(np.mean(finite_psnr)) if finite_psnr else math.inf
    rec = MetricsRecord(
        scene_id=MEAN_SCENE_ID, stage=stage,
        rmse_dbm=float(np.mean([r.rmse_dbm for r in rows])),
        mae_dbm=float(np.mean([r.mae_dbm for r in rows])),
        ssim=float(np.mean([r.ssim for r in rows])),
        psnr_db=mean_psnr,
        infer_seconds=float(np.mean([r.infer_seconds for r in rows])))
    return rec, n_inf


# ---------------------------------------------------------------------------
# split evaluation

@dataclass(frozen=True)
class PipelineSplits:
    """Loaded scenes grouped by their role in the two-stage pipeline."""

    train_predict: tuple[Scene, ...]
    train_correct: tuple[Scene, ...]
    val_predict: tuple[Scene, ...]
    val_correct: tuple[Scene, ...]
    test: tuple[Scene, ...]


def load_pipeline_splits(data_dir, splits: DatasetSplits) -> PipelineSplits:
    """Load every scene named by a split assignment from a dataset root."""
    root = Path(data_dir)

    def _load(ids):
        return tuple(load_scene(root / sid, scene_id=sid) for sid in ids)

    return PipelineSplits(train_predict=_load(splits.train_predict),
                          train_correct=_load(splits.train_correct),
                          val_predict=_load(splits.val_predict),
                          val_correct=_load(splits.val_correct),
                          test=_load(splits.test))


@dataclass(frozen=True)
class EvalReport:
    """Per-scene rows plus one mean row per evaluated stage."""

    rows: tuple[MetricsRecord, ...]
    means: tuple[MetricsRecord, ...]
    psnr_inf_counts: dict

    def mean_for(self, stage: str) -> MetricsRecord:
        for rec in self.means:
            if rec.stage == stage:
                return rec
        raise ValidationError(f"report has no stage '{stage}'")


def _as_predictor(rmp):
    if isinstance(rmp, Checkpoint):
        return lambda scene: predict_radio_map(rmp, scene)
    if callable(rmp):
        return rmp
    raise ConfigurationError("rmp must be a checkpoint or a scene -> map callable")


def _as_corrector(rmc):
    if isinstance(rmc, Checkpoint):
        return lambda p_pre, m: correct_radio_map(rmc, p_pre, m)
    if callable(rmc):
        return rmc
    raise ConfigurationError("rmc must be a checkpoint or a (map, measurements) "
                             "-> map callable")


def evaluate_split(rmp, rmc, scenes, *, norm_range: NormalizationRange,
                   seed: int = 0, measurement_count: int | None = None,
                   out_dir=None) -> EvalReport:
    """Evaluate the prediction stage, and the correction stage if ``rmc``
    is given, over a split.

    ``rmp``/``rmc`` are normally checkpoints but any callable with the same
    signature as the corresponding inference function is accepted.
    Measurement sets are drawn per scene from seeds derived from ``seed``.
    When ``out_dir`` is set, writes ``metrics.csv`` and ``eval_meta.txt``.
    """
    scenes = list(scenes)
    if not scenes:
        raise ValidationError("cannot evaluate an empty split")
    for s in scenes:
        if s.ground_truth is None:
            raise ValidationError(f"scene '{s.scene_id}' has no ground truth")
    predict = _as_predictor(rmp)
    correct = _as_corrector(rmc) if rmc is not None else None
    if correct is not None and measurement_count is None:
        if isinstance(rmc, Checkpoint):
            measurement_count = rmc.train_config.measurement_count
        else:
            raise ConfigurationError(
                "measurement_count is required when rmc is not a checkpoint")

    rows: list[MetricsRecord] = []
    for idx, scene in enumerate(scenes):
        t0 = time.perf_counter()
        p_pre = predict(scene)
        dt = time.perf_counter() - t0
        rows.append(compute_metrics(scene.scene_id, "predict", p_pre,
                                    scene.ground_truth, norm_range, dt))
        if correct is None:
            continue
        mset = sample_measurements(scene, measurement_count,
                                   derive_seed(seed, _TAG_EVAL_SAMPLES, idx))
        t0 = time.perf_counter()
        p_cor = correct(p_pre, mset)
        dt = time.perf_counter() - t0
        rows.append(compute_metrics(scene.scene_id, "correct", p_cor,
                                    scene.ground_truth, norm_range, dt))

    stages = ["predict"] + (["correct"] if correct is not None else [])
    means, inf_counts = [], {}
    for stage in stages:
        rec, n_inf = mean_record(rows, stage)
        means.append(rec)
        inf_counts[stage] = n_inf
    report = EvalReport(rows=tuple(rows), means=tuple(means),
                        psnr_inf_counts=inf_counts)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ordered = []
        for stage in stages:
            ordered.extend(r for r in report.rows if r.stage == stage)
            ordered.append(report.mean_for(stage))
        write_metrics_csv(ordered, out_dir / "metrics.csv")
        _write_eval_meta(out_dir / "eval_meta.txt", norm_range, seed,
                         measurement_count, inf_counts)
    return report


def write_metrics_csv(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_CSV_COLUMNS)
        for r in records:
            writer.writerow([r.scene_id, r.stage, repr(r.rmse_dbm),
                             repr(r.mae_dbm), repr(r.ssim),
                             "inf" if math.isinf(r.psnr_db) else repr(r.psnr_db),
                             f"{r.infer_seconds:.6f}"])


def _write_eval_meta(path, norm_range, seed, measurement_count, inf_counts):
    lines = {
        "ssim_window_px": SSIM_WINDOW_PX,
        "ssim_sigma": SSIM_SIGMA,
        "ssim_c1": SSIM_C1,
        "ssim_c2": SSIM_C2,
        "pixel_levels": PIXEL_LEVELS,
        "rsrp_min_dbm": norm_range.rsrp_min_dbm,
        "rsrp_max_dbm": norm_range.rsrp_max_dbm,
        "seed": seed,
        "measurement_count": measurement_count,
    }
    for stage, count in inf_counts.items():
        lines[f"psnr_inf_rows_{stage}"] = count
    Path(path).write_text(
        "\n".join(f"{k}={v}" for k, v in lines.items()) + "\n")


# ---------------------------------------------------------------------------
# map export

def export_radio_map(m: RadioMap, rng: NormalizationRange, png_path,
                     csv_path) -> None:
    """Write one map as an 8-bit grayscale PNG plus a raw dBm CSV."""
    pixels = np.round(to_pixel_scale(m, rng)).astype(np.uint8)
    Image.fromarray(pixels, mode="L").save(Path(png_path))
    np.savetxt(Path(csv_path), m.values_dbm, delimiter=",", fmt="%.10g")


# ---------------------------------------------------------------------------
# ablation suite

@dataclass(frozen=True)
class AblationRow:
    """Mean test metrics for one input configuration."""

    label: str              # "baseline" or "-<channel>"
    stage: str
    metrics: MetricsRecord


def ablation_suite(splits, cfg_predict: TrainConfig, cfg_correct: TrainConfig, *,
                   norm_range: NormalizationRange,
                   rbf_config: RbfConfig | None = None,
                   gen_spec_predict=None, disc_spec_predict=None,
                   gen_spec_correct=None, disc_spec_correct=None,
                   eval_seed: int = 0, out_dir=None) -> tuple[AblationRow, ...]:
    """Retrain with each auxiliary input channel zeroed and compare test RMSE.

    Produces two baseline rows (full-input prediction and correction) and one
    row per removed channel: empirical, line-of-sight and transmitter maps
    for the prediction stage, the interpolation map for the correction stage.
    ``splits`` is a :class:`PipelineSplits` (or anything with its fields).
    """

    def _trained_predict(cfg):
        return train_stage(splits.train_predict, splits.val_predict, cfg,
                           norm_range=norm_range, rbf_config=rbf_config,
                           gen_spec=gen_spec_predict, disc_spec=disc_spec_predict)

    def _trained_correct(cfg, priors):
        return train_stage(splits.train_correct, splits.val_correct, cfg,
                           norm_range=norm_range, rbf_config=rbf_config,
                           gen_spec=gen_spec_correct, disc_spec=disc_spec_correct,
                           priors=priors)

    rows: list[AblationRow] = []
    baseline_rmp = _trained_predict(cfg_predict)
    report = evaluate_split(baseline_rmp, None, splits.test,
                            norm_range=norm_range, seed=eval_seed)
    rows.append(AblationRow("baseline", "predict", report.mean_for("predict")))
    for channel in ABLATION_CHANNELS["predict"]:
        ck = _trained_predict(dataclasses.replace(cfg_predict,
                                                  zero_channels=(channel,)))
        report = evaluate_split(ck, None, splits.test,
                                norm_range=norm_range, seed=eval_seed)
        rows.append(AblationRow(f"-{channel}", "predict",
                                report.mean_for("predict")))

    baseline_rmc = _trained_correct(cfg_correct, baseline_rmp)
    report = evaluate_split(baseline_rmp, baseline_rmc, splits.test,
                            norm_range=norm_range, seed=eval_seed)
    rows.append(AblationRow("baseline", "correct", report.mean_for("correct")))
    for channel in ABLATION_CHANNELS["correct"]:
        ck = _trained_correct(dataclasses.replace(cfg_correct,
                                                  zero_channels=(channel,)),
                              baseline_rmp)
        report = evaluate_split(baseline_rmp, ck, splits.test,
                                norm_range=norm_range, seed=eval_seed)
        rows.append(AblationRow(f"-{channel}", "correct",
                                report.mean_for("correct")))

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_ablation_csv(rows, out_dir / "ablation.csv")
        _plot_ablation(rows, out_dir / "ablation.png")
    return tuple(rows)


def _write_ablation_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("label", "stage", "rmse_dbm", "mae_dbm", "ssim",
                         "psnr_db"))
        for row in rows:
            m = row.metrics
            writer.writerow([row.label, row.stage, repr(m.rmse_dbm),
                             repr(m.mae_dbm), repr(m.ssim),
                             "inf" if math.isinf(m.psnr_db) else repr(m.psnr_db)])


def _plot_ablation(rows, path):
    labels = [f"{r.stage}\n{r.label}" for r in rows]
    values = [r.metrics.rmse_dbm for r in rows]
    colors = ["tab:blue" if r.label == "baseline" else "tab:orange" for r in rows]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.bar(range(len(rows)), values, color=colors)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("test RMSE (dBm)")
    ax.set_title("Input-channel ablations")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# measurement-density sweep

@dataclass(frozen=True)
class DensityPoint:
    """Mean correction-stage test metrics at one measurement density."""

    percentage: float
    measurement_count: int
    metrics: MetricsRecord


def measurement_count_for(percentage: float, grid) -> int:
    """Measurement count for a coverage percentage of the grid, at least 1."""
    if percentage <= 0 or percentage > 100:
        raise ValidationError(f"percentage {percentage} outside (0, 100]")
    return max(1, round(percentage / 100.0 * grid.n_pixels))


def density_sweep(percentages, splits, rmp: Checkpoint,
                  cfg_correct: TrainConfig, *,
                  norm_range: NormalizationRange,
                  rbf_config: RbfConfig | None = None,
                  gen_spec_correct=None, disc_spec_correct=None,
                  retrain: bool = False, rmc: Checkpoint | None = None,
                  eval_seed: int = 0, out_dir=None) -> tuple[DensityPoint, ...]:
    """Correction quality as a function of measurement density.

    With ``retrain`` the corrector is retrained at each density; otherwise a
    single trained ``rmc`` is re-evaluated with resampled measurement sets.
    Densities are percentages of grid pixels, converted per the test grid.
    """
    percentages = sorted(float(p) for p in percentages)
    if not percentages:
        raise ValidationError("density sweep needs at least one percentage")
    if not retrain and rmc is None:
        raise ConfigurationError(
            "density sweep without retraining needs a trained rmc checkpoint")
    grid = splits.test[0].grid
    points: list[DensityPoint] = []
    for pct in percentages:
        count = measurement_count_for(pct, grid)
        if retrain:
            cfg = dataclasses.replace(cfg_correct, measurement_count=count)
            model = train_stage(splits.train_correct, splits.val_correct, cfg,
                                norm_range=norm_range, rbf_config=rbf_config,
                                gen_spec=gen_spec_correct,
                                disc_spec=disc_spec_correct, priors=rmp)
        else:
            model = rmc
        report = evaluate_split(rmp, model, splits.test, norm_range=norm_range,
                                seed=eval_seed, measurement_count=count)
        points.append(DensityPoint(pct, count, report.mean_for("correct")))

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_sweep_csv(points, out_dir / "density_sweep.csv")
        _plot_sweep(points, out_dir / "density_sweep.png")
    return tuple(points)


def _write_sweep_csv(points, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("percentage", "measurement_count", "rmse_dbm",
                         "mae_dbm", "ssim", "psnr_db"))
        for p in points:
            m = p.metrics
            writer.writerow([repr(p.percentage), p.measurement_count,
                             repr(m.rmse_dbm), repr(m.mae_dbm), repr(m.ssim),
                             "inf" if math.isinf(m.psnr_db) else repr(m.psnr_db)])


def _plot_sweep(points, path):
    pct = [p.percentage for p in points]
    panels = (("rmse_dbm", "RMSE (dBm)"), ("mae_dbm", "MAE (dBm)"),
              ("ssim", "SSIM"), ("psnr_db", "PSNR (dB)"))
    fig, axes = plt.subplots(2, 2, figsize=(8, 6))
    for ax, (attr, label) in zip(axes.flat, panels):
        ax.plot(pct, [getattr(p.metrics, attr) for p in points], marker="o")
        ax.set_xlabel("measurements (% of pixels)")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    fig.suptitle("Correction quality vs. measurement density")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
