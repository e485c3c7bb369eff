"""Two-stage training and inference.

Stage ``predict`` learns a coarse radio map from the four environment
channels; stage ``correct`` learns to refine a frozen first-stage output
using sparse measurements.  Both stages train a conditional GAN with
alternating discriminator/generator Adam steps; the checkpoint returned is
the epoch with the best validation RMSE.

Everything is seed-deterministic: parameter init, batch order, dropout and
measurement resampling all derive from ``TrainConfig.seed``.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigurationError, ValidationError
from .features import (CORRECT_CHANNEL_ORDER, PREDICT_CHANNEL_ORDER,
                       FeatureKind, RbfConfig, assemble_input_stack,
                       coarse_prediction_map, empirical_radio_map,
                       los_indicator_map, measurement_map,
                       obstacle_topview_map, rbf_interpolate,
                       sample_measurements, transmitter_position_map)
from .networks import (Discriminator, DiscriminatorSpec, Generator,
                       GeneratorSpec, adversarial_loss,
                       default_discriminator_spec, default_generator_spec,
                       generator_adversarial_loss, reconstruction_loss)
from .scene import (MeasurementSet, NormalizationRange, RadioMap, Scene,
                    normalize_rsrp, _set)

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "best.ckpt"
CHECKPOINT_META_FILE = "best.meta.txt"
TRAINING_LOG_FILE = "training_log.csv"
TRAINING_LOG_COLUMNS = ("epoch", "d_loss", "g_adv", "g_l2", "val_rmse")

# seed-derivation tags, one per independent random stream
_TAG_ORDER, _TAG_TRAIN_SAMPLES, _TAG_VAL_SAMPLES, _TAG_EVAL_SAMPLES = 11, 13, 17, 19


def derive_seed(*parts: int) -> int:
    """Mix integers into one reproducible 32-bit seed."""
    entropy = [int(p) & 0xFFFFFFFFFFFFFFFF for p in parts]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings for one stage."""

    stage: str                        # "predict" | "correct"
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 8
    epochs: int = 100
    lambda_l2: float = 100.0
    seed: int = 0
    measurement_count: int = 120      # correct stage only
    zero_channels: tuple[str, ...] = ()   # ablation: channels forced to 0

    def __post_init__(self):
        _set(self, "zero_channels", tuple(self.zero_channels))
        if self.stage not in ("predict", "correct"):
            raise ValidationError(f"unknown stage '{self.stage}'")
        if self.learning_rate <= 0:
            raise ValidationError("learning rate must be positive")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0 < b < 1:
                raise ValidationError(f"{name} must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch size and epochs must be positive")
        if self.lambda_l2 < 0:
            raise ValidationError("lambda_l2 must be non-negative")
        if self.measurement_count < 1:
            raise ValidationError("measurement count must be positive")
        order = _channel_order(self.stage)
        valid = {k.value for k in order}
        for name in self.zero_channels:
            if name not in valid:
                raise ValidationError(
                    f"cannot zero unknown channel '{name}' for stage "
                    f"'{self.stage}' (valid: {sorted(valid)})")


def _channel_order(stage: str):
    return PREDICT_CHANNEL_ORDER if stage == "predict" else CORRECT_CHANNEL_ORDER


def apply_channel_mask(arr: np.ndarray, stage: str,
                       zero_channels: tuple[str, ...]) -> np.ndarray:
    """Zero out named channels of a (C, H, W) stack, keeping arity."""
    if not zero_channels:
        return arr
    order = [k.value for k in _channel_order(stage)]
    out = arr.copy()
    for name in zero_channels:
        out[order.index(name)] = 0.0
    return out


# ---------------------------------------------------------------------------
# checkpoints

def _spec_fingerprint(stage: str, image_px: int, gen_spec: GeneratorSpec,
                      disc_spec: DiscriminatorSpec) -> str:
    blob = json.dumps({
        "stage": stage, "image_px": image_px,
        "generator": _gen_spec_dict(gen_spec),
        "discriminator": _disc_spec_dict(disc_spec),
    }, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _gen_spec_dict(s: GeneratorSpec) -> dict:
    return {"in_channels": s.in_channels, "levels": s.levels,
            "base_channels": s.base_channels, "max_channels": s.max_channels,
            "sa_resolutions": list(s.sa_resolutions),
            "rc_block_count": s.rc_block_count,
            "dropout_rate": s.dropout_rate, "leaky_slope": s.leaky_slope}


def _disc_spec_dict(s: DiscriminatorSpec) -> dict:
    return {"in_channels": s.in_channels, "levels": s.levels,
            "base_channels": s.base_channels, "max_channels": s.max_channels}


def _train_config_dict(c: TrainConfig) -> dict:
    return {"stage": c.stage, "learning_rate": c.learning_rate,
            "beta1": c.beta1, "beta2": c.beta2, "batch_size": c.batch_size,
            "epochs": c.epochs, "lambda_l2": c.lambda_l2, "seed": c.seed,
            "measurement_count": c.measurement_count,
            "zero_channels": list(c.zero_channels)}


def _rbf_config_dict(c: RbfConfig) -> dict:
    return {"kernel": c.kernel, "shape_epsilon": c.shape_epsilon, "ridge": c.ridge}


@dataclass
class Checkpoint:
    """Frozen training outcome: parameters plus everything needed to infer."""

    stage: str
    image_px: int
    gen_spec: GeneratorSpec
    disc_spec: DiscriminatorSpec
    gen_state: dict
    disc_state: dict
    train_config: TrainConfig
    norm_range: NormalizationRange
    rbf_config: RbfConfig
    epoch: int
    history: tuple[dict, ...]
    fingerprint: str = ""
    _model_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        expected = _spec_fingerprint(self.stage, self.image_px,
                                     self.gen_spec, self.disc_spec)
        if not self.fingerprint:
            self.fingerprint = expected
        elif self.fingerprint != expected:
            raise ConfigurationError(
                "checkpoint fingerprint mismatch: stored "
                f"{self.fingerprint[:12]}..., computed {expected[:12]}...")

    def generator(self) -> Generator:
        """Eval-mode generator built once per checkpoint and reused."""
        if "gen" not in self._model_cache:
            g = Generator(self.gen_spec, self.image_px)
            g.load_state_dict(self.gen_state)
            g.eval()
            self._model_cache["gen"] = g
        return self._model_cache["gen"]

    @property
    def best_val_rmse(self) -> float:
        return float(self.history[self.epoch - 1]["val_rmse"])


def save_checkpoint(ckpt: Checkpoint, directory) -> Path:
    """Write ``best.ckpt`` plus the plain-text ``best.meta.txt`` sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = {
        "stage": ckpt.stage, "image_px": ckpt.image_px,
        "gen_spec": _gen_spec_dict(ckpt.gen_spec),
        "disc_spec": _disc_spec_dict(ckpt.disc_spec),
        "gen_state": ckpt.gen_state, "disc_state": ckpt.disc_state,
        "train_config": _train_config_dict(ckpt.train_config),
        "norm_range": {"rsrp_min_dbm": ckpt.norm_range.rsrp_min_dbm,
                       "rsrp_max_dbm": ckpt.norm_range.rsrp_max_dbm},
        "rbf_config": _rbf_config_dict(ckpt.rbf_config),
        "epoch": ckpt.epoch,
        "history": [dict(row) for row in ckpt.history],
        "fingerprint": ckpt.fingerprint,
    }
    path = directory / CHECKPOINT_FILE
    torch.save(payload, path)
    meta = {
        "stage": ckpt.stage, "image_px": ckpt.image_px,
        "best_epoch": ckpt.epoch, "epochs": ckpt.train_config.epochs,
        "seed": ckpt.train_config.seed,
        "batch_size": ckpt.train_config.batch_size,
        "learning_rate": ckpt.train_config.learning_rate,
        "lambda_l2": ckpt.train_config.lambda_l2,
        "measurement_count": ckpt.train_config.measurement_count,
        "zero_channels": ",".join(ckpt.train_config.zero_channels),
        "rsrp_min_dbm": ckpt.norm_range.rsrp_min_dbm,
        "rsrp_max_dbm": ckpt.norm_range.rsrp_max_dbm,
        "best_val_rmse": ckpt.best_val_rmse,
        "fingerprint": ckpt.fingerprint,
    }
    lines = [f"{k}={meta[k]}" for k in meta]
    (directory / CHECKPOINT_META_FILE).write_text("\n".join(lines) + "\n")
    return path


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint file or a directory containing ``best.ckpt``."""
    path = Path(path)
    if path.is_dir():
        path = path / CHECKPOINT_FILE
    if not path.is_file():
        raise ConfigurationError(f"missing checkpoint: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    gs = payload["gen_spec"]
    gen_spec = GeneratorSpec(in_channels=gs["in_channels"], levels=gs["levels"],
                             base_channels=gs["base_channels"],
                             max_channels=gs["max_channels"],
                             sa_resolutions=tuple(gs["sa_resolutions"]),
                             rc_block_count=gs["rc_block_count"],
                             dropout_rate=gs["dropout_rate"],
                             leaky_slope=gs["leaky_slope"])
    ds = payload["disc_spec"]
    disc_spec = DiscriminatorSpec(in_channels=ds["in_channels"], levels=ds["levels"],
                                  base_channels=ds["base_channels"],
                                  max_channels=ds["max_channels"])
    tc = payload["train_config"]
    train_config = TrainConfig(stage=tc["stage"], learning_rate=tc["learning_rate"],
                               beta1=tc["beta1"], beta2=tc["beta2"],
                               batch_size=tc["batch_size"], epochs=tc["epochs"],
                               lambda_l2=tc["lambda_l2"], seed=tc["seed"],
                               measurement_count=tc["measurement_count"],
                               zero_channels=tuple(tc["zero_channels"]))
    rc = payload["rbf_config"]
    return Checkpoint(
        stage=payload["stage"], image_px=payload["image_px"],
        gen_spec=gen_spec, disc_spec=disc_spec,
        gen_state=payload["gen_state"], disc_state=payload["disc_state"],
        train_config=train_config,
        norm_range=NormalizationRange(**payload["norm_range"]),
        rbf_config=RbfConfig(kernel=rc["kernel"], shape_epsilon=rc["shape_epsilon"],
                             ridge=rc["ridge"]),
        epoch=payload["epoch"], history=tuple(payload["history"]),
        fingerprint=payload["fingerprint"])


def write_training_log(history, path) -> None:
    """CSV log with one row per epoch; float formatting is reproducible."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAINING_LOG_COLUMNS)
        for row in history:
            writer.writerow([row["epoch"]] + [repr(float(row[k]))
                                              for k in TRAINING_LOG_COLUMNS[1:]])


# ---------------------------------------------------------------------------
# stack construction

def predict_stack_array(scene: Scene, norm: NormalizationRange) -> np.ndarray:
    """(4, H, W) float32 prediction-stage input for one scene."""
    stack = assemble_input_stack("predict", [
        transmitter_position_map(scene),
        obstacle_topview_map(scene),
        empirical_radio_map(scene, norm),
        los_indicator_map(scene),
    ])
    return stack.array()


def correct_stack_array(p_pre: RadioMap, m: MeasurementSet,
                        norm: NormalizationRange, rbf: RbfConfig) -> np.ndarray:
    """(3, H, W) float32 correction-stage input.

    An empty measurement set is allowed: both measurement channels fall back
    to all-background zeros (with a warning), leaving only the coarse map.
    """
    grid = p_pre.grid
    pre = coarse_prediction_map(p_pre, norm)
    if len(m) == 0:
        logger.warning("empty measurement set: measurement and interpolation "
                       "channels fall back to all-background")
        zeros = np.zeros((2,) + grid.shape, dtype=np.float32)
        return np.concatenate([zeros, pre.values[None].astype(np.float32)])
    stack = assemble_input_stack("correct", [
        measurement_map(m, grid, norm),
        rbf_interpolate(m, grid, norm, rbf),
        pre,
    ])
    return stack.array()


# ---------------------------------------------------------------------------
# inference

def predict_radio_map(ckpt: Checkpoint, scene: Scene) -> RadioMap:
    """Run the prediction generator on one scene and denormalize to dBm."""
    if ckpt.stage != "predict":
        raise ConfigurationError(
            f"predict_radio_map needs a predict-stage checkpoint, got '{ckpt.stage}'")
    arr = predict_stack_array(scene, ckpt.norm_range)
    arr = apply_channel_mask(arr, "predict", ckpt.train_config.zero_channels)
    with torch.no_grad():
        out = ckpt.generator()(torch.from_numpy(arr[None]))
    values = normalize_rsrp(out[0, 0].numpy().astype(np.float64),
                            ckpt.norm_range, "inverse")
    return RadioMap(grid=scene.grid, values_dbm=values)


def correct_radio_map(ckpt: Checkpoint, p_pre: RadioMap,
                      m: MeasurementSet) -> RadioMap:
    """Refine a coarse radio map with sparse measurements."""
    if ckpt.stage != "correct":
        raise ConfigurationError(
            f"correct_radio_map needs a correct-stage checkpoint, got '{ckpt.stage}'")
    arr = correct_stack_array(p_pre, m, ckpt.norm_range, ckpt.rbf_config)
    arr = apply_channel_mask(arr, "correct", ckpt.train_config.zero_channels)
    with torch.no_grad():
        out = ckpt.generator()(torch.from_numpy(arr[None]))
    values = normalize_rsrp(out[0, 0].numpy().astype(np.float64),
                            ckpt.norm_range, "inverse")
    return RadioMap(grid=p_pre.grid, values_dbm=values)


# ---------------------------------------------------------------------------
# training

def _require_square_scenes(scenes, what: str) -> int:
    sizes = {(s.grid.width_px, s.grid.height_px) for s in scenes}
    if len(sizes) != 1:
        raise ValidationError(f"{what} scenes use mixed grid sizes: {sorted(sizes)}")
    w, h = next(iter(sizes))
    if w != h:
        raise ValidationError(f"{what} scenes must be square, got {w}x{h}")
    return w


def _scene_targets(scenes, norm: NormalizationRange) -> torch.Tensor:
    rows = []
    for s in scenes:
        if s.ground_truth is None:
            raise ValidationError(f"scene '{s.scene_id}' has no ground truth")
        rows.append(normalize_rsrp(s.ground_truth.values_dbm, norm)[None])
    return torch.from_numpy(np.stack(rows).astype(np.float32))


def _correct_inputs(scenes, p_pres, cfg: TrainConfig, norm, rbf,
                    seed_tag: int, epoch: int) -> torch.Tensor:
    rows = []
    for idx, scene in enumerate(scenes):
        mset = sample_measurements(
            scene, cfg.measurement_count,
            derive_seed(cfg.seed, seed_tag, epoch, idx))
        arr = correct_stack_array(p_pres[idx], mset, norm, rbf)
        rows.append(apply_channel_mask(arr, "correct", cfg.zero_channels))
    return torch.from_numpy(np.stack(rows))


def _val_rmse_dbm(gen: Generator, x_val: torch.Tensor, val_scenes,
                  norm: NormalizationRange) -> float:
    gen.eval()
    with torch.no_grad():
        pred = gen(x_val)[:, 0].numpy().astype(np.float64)
    gen.train()
    total = 0.0
    for i, scene in enumerate(val_scenes):
        dbm = normalize_rsrp(pred[i], norm, "inverse")
        diff = dbm - scene.ground_truth.values_dbm
        total += float(np.sqrt(np.mean(diff * diff)))
    return total / len(val_scenes)


def train_stage(train_scenes, val_scenes, cfg: TrainConfig, *,
                norm_range: NormalizationRange,
                rbf_config: RbfConfig | None = None,
                gen_spec: GeneratorSpec | None = None,
                disc_spec: DiscriminatorSpec | None = None,
                priors: Checkpoint | None = None,
                log_path=None) -> Checkpoint:
    """Train one stage and return the best-validation-RMSE checkpoint.

    ``priors`` is the frozen prediction checkpoint the correction stage uses
    to generate its coarse input maps; it is required there and rejected for
    the prediction stage.
    """
    train_scenes = list(train_scenes)
    val_scenes = list(val_scenes)
    if not train_scenes or not val_scenes:
        raise ValidationError("training and validation splits must be non-empty")
    if cfg.stage == "correct" and priors is None:
        raise ConfigurationError(
            "correction training needs the prediction checkpoint as priors")
    if cfg.stage == "predict" and priors is not None:
        raise ConfigurationError("priors only apply to the correction stage")
    rbf_config = rbf_config or RbfConfig()
    image_px = _require_square_scenes(train_scenes + val_scenes, "training")
    gen_spec = gen_spec or default_generator_spec(cfg.stage)
    disc_spec = disc_spec or default_discriminator_spec(cfg.stage)

    torch.manual_seed(derive_seed(cfg.seed, 2))
    gen = Generator(gen_spec, image_px)
    disc = Discriminator(disc_spec, image_px)
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.learning_rate,
                             betas=(cfg.beta1, cfg.beta2))
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.learning_rate,
                             betas=(cfg.beta1, cfg.beta2))

    y_train = _scene_targets(train_scenes, norm_range)
    y_val = _scene_targets(val_scenes, norm_range)  # validates ground truth
    del y_val

    if cfg.stage == "predict":
        x_train = torch.from_numpy(np.stack(
            [apply_channel_mask(predict_stack_array(s, norm_range), "predict",
                                cfg.zero_channels) for s in train_scenes]))
        x_val = torch.from_numpy(np.stack(
            [apply_channel_mask(predict_stack_array(s, norm_range), "predict",
                                cfg.zero_channels) for s in val_scenes]))
    else:
        # coarse maps come from the frozen prediction stage, generated once
        pre_train = [predict_radio_map(priors, s) for s in train_scenes]
        pre_val = [predict_radio_map(priors, s) for s in val_scenes]
        x_val = _correct_inputs(val_scenes, pre_val, cfg, norm_range,
                                rbf_config, _TAG_VAL_SAMPLES, 0)

    n = len(train_scenes)
    history: list[dict] = []
    best = {"val_rmse": float("inf"), "epoch": 0, "gen": None, "disc": None}
    gen.train()
    disc.train()
    for epoch in range(1, cfg.epochs + 1):
        if cfg.stage == "correct":
            x_train = _correct_inputs(train_scenes, pre_train, cfg, norm_range,
                                      rbf_config, _TAG_TRAIN_SAMPLES, epoch)
        order = np.random.default_rng(
            derive_seed(cfg.seed, _TAG_ORDER, epoch)).permutation(n)
        sums = {"d_loss": 0.0, "g_adv": 0.0, "g_l2": 0.0}
        steps = 0
        for at in range(0, n, cfg.batch_size):
            idx = torch.from_numpy(order[at:at + cfg.batch_size])
            x, y = x_train[idx], y_train[idx]

            fake = gen(x)
            d_loss = -adversarial_loss(disc(x, y), disc(x, fake.detach()))
            opt_d.zero_grad(set_to_none=True)
            d_loss.backward()
            opt_d.step()

            g_adv = generator_adversarial_loss(disc(x, fake))
            g_l2 = reconstruction_loss(y, fake)
            opt_g.zero_grad(set_to_none=True)
            (g_adv + cfg.lambda_l2 * g_l2).backward()
            opt_g.step()

            sums["d_loss"] += float(d_loss.detach())
            sums["g_adv"] += float(g_adv.detach())
            sums["g_l2"] += float(g_l2.detach())
            steps += 1

        val_rmse = _val_rmse_dbm(gen, x_val, val_scenes, norm_range)
        history.append({"epoch": epoch,
                        "d_loss": sums["d_loss"] / steps,
                        "g_adv": sums["g_adv"] / steps,
                        "g_l2": sums["g_l2"] / steps,
                        "val_rmse": val_rmse})
        if val_rmse < best["val_rmse"]:
            best.update(val_rmse=val_rmse, epoch=epoch,
                        gen=copy.deepcopy(gen.state_dict()),
                        disc=copy.deepcopy(disc.state_dict()))

    if log_path is not None:
        write_training_log(history, log_path)

    return Checkpoint(stage=cfg.stage, image_px=image_px,
                      gen_spec=gen_spec, disc_spec=disc_spec,
                      gen_state=best["gen"], disc_state=best["disc"],
                      train_config=cfg, norm_range=norm_range,
                      rbf_config=rbf_config, epoch=best["epoch"],
                      history=tuple(history))
