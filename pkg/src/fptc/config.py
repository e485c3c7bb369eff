"""Flat key=value run configuration shared by every command.

A config file holds one ``key = value`` pair per line (``#`` comments
allowed); command-line overrides use the same ``key=value`` syntax.  Keys
are typed against a fixed schema — an unknown key or an unparsable value is
a configuration error naming the key.  The global ``seed`` falls back to
the ``FPTC_SEED`` environment variable when neither the file nor an
override sets it.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigurationError
from .features import RbfConfig
from .networks import DiscriminatorSpec, GeneratorSpec
from .scene import GridSpec, NormalizationRange
from .synth import OracleParams, SynthParams
from .training import TrainConfig

SEED_ENV_VAR = "FPTC_SEED"

# key -> (type tag, default); tags: int, float, str, bool, ints, floats,
# float_or_auto
SCHEMA = {
    "data.dir": ("str", "data"),
    "out.dir": ("str", "out"),
    "seed": ("int", 0),
    "norm.rsrp_min_dbm": ("float", -150.0),
    "norm.rsrp_max_dbm": ("float", -40.0),
    "rbf.kernel": ("str", "gaussian"),
    "rbf.shape_epsilon": ("float_or_auto", "auto"),
    "rbf.ridge": ("float", 1e-8),
    "synth.count": ("int", 200),
    "synth.grid_px": ("int", 128),
    "synth.cell_size_m": ("float", 2.0),
    "synth.buildings_min": ("int", 4),
    "synth.buildings_max": ("int", 10),
    "synth.footprint_min_px": ("int", 6),
    "synth.footprint_max_px": ("int", 16),
    "synth.height_min_m": ("float", 6.0),
    "synth.height_max_m": ("float", 25.0),
    "synth.tx_margin_px": ("int", 6),
    "synth.tx_height_m": ("float", 30.0),
    "synth.tx_power_dbm": ("float", 30.0),
    "synth.freq_mhz": ("float", 2000.0),
    "synth.rx_height_m": ("float", 1.5),
    "oracle.block_loss_db": ("float", 3.0),
    "oracle.block_cap": ("int", 10),
    "oracle.shadow_sigma_db": ("float", 2.0),
    "oracle.shadow_smooth_px": ("float", 8.0),
    "net.levels": ("int", 6),
    "net.base_channels": ("int", 64),
    "net.max_channels": ("int", 352),
    "net.disc_levels": ("int", 5),
    "net.sa_resolutions": ("ints", (32,)),
    "net.rc_blocks": ("int", 2),
    "net.dropout_rate": ("float", 0.5),
    "train.beta1": ("float", 0.5),
    "train.beta2": ("float", 0.999),
    "train.lambda_l2": ("float", 100.0),
    "train.measurement_count": ("int", 120),
    "train.predict.epochs": ("int", 100),
    "train.predict.batch_size": ("int", 8),
    "train.predict.learning_rate": ("float", 2e-4),
    "train.correct.epochs": ("int", 100),
    "train.correct.batch_size": ("int", 8),
    "train.correct.learning_rate": ("float", 2e-4),
    "eval.split": ("str", "test"),
    "sweep.percentages": ("floats", (0.25, 0.5, 1.0, 2.0)),
    "sweep.retrain": ("bool", False),
}

_BOOL_WORDS = {"true": True, "yes": True, "1": True,
               "false": False, "no": False, "0": False}


def parse_value(key: str, raw: str):
    """Parse one raw string against the schema; errors name the key."""
    if key not in SCHEMA:
        raise ConfigurationError(f"unknown config key '{key}'")
    tag = SCHEMA[key][0]
    raw = raw.strip()
    try:
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "str":
            return raw
        if tag == "bool":
            if raw.lower() not in _BOOL_WORDS:
                raise ValueError(raw)
            return _BOOL_WORDS[raw.lower()]
        if tag == "float_or_auto":
            return "auto" if raw == "auto" else float(raw)
        if tag == "ints":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if tag == "floats":
            return tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigurationError(
            f"invalid value for config key '{key}': {raw!r}") from exc
    raise ConfigurationError(f"unhandled schema tag '{tag}' for '{key}'")


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration: schema defaults, file values, overrides."""

    values: dict
    overrides: dict     # the subset set on the command line, for manifests

    def __getitem__(self, key: str):
        if key not in self.values:
            raise ConfigurationError(f"unknown config key '{key}'")
        return self.values[key]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def as_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v)
                for k, v in sorted(self.values.items())}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines into typed values."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(
                f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        values[key.strip()] = parse_value(key.strip(), raw)
    return values


def load_run_config(path=None, overrides=()) -> RunConfig:
    """Assemble the run configuration from file, overrides and environment."""
    values = {key: default for key, (_, default) in SCHEMA.items()}
    explicit = set()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"missing config file: {path}")
        file_values = parse_config_text(path.read_text(), str(path))
        values.update(file_values)
        explicit.update(file_values)
    parsed_overrides = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(
                f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        parsed_overrides[key.strip()] = parse_value(key.strip(), raw)
    values.update(parsed_overrides)
    explicit.update(parsed_overrides)
    if "seed" not in explicit and SEED_ENV_VAR in os.environ:
        raw = os.environ[SEED_ENV_VAR]
        try:
            values["seed"] = int(raw)
        except ValueError as exc:
            raise ConfigurationError(
                f"invalid value for environment variable "
                f"{SEED_ENV_VAR}: {raw!r}") from exc
    return RunConfig(values=values, overrides=parsed_overrides)


# ---------------------------------------------------------------------------
# builders: RunConfig -> domain objects

def norm_range(cfg: RunConfig) -> NormalizationRange:
    return NormalizationRange(rsrp_min_dbm=cfg["norm.rsrp_min_dbm"],
                              rsrp_max_dbm=cfg["norm.rsrp_max_dbm"])


def rbf_config(cfg: RunConfig) -> RbfConfig:
    return RbfConfig(kernel=cfg["rbf.kernel"],
                     shape_epsilon=cfg["rbf.shape_epsilon"],
                     ridge=cfg["rbf.ridge"])


def grid_spec(cfg: RunConfig) -> GridSpec:
    return GridSpec(width_px=cfg["synth.grid_px"], height_px=cfg["synth.grid_px"],
                    cell_size_m=cfg["synth.cell_size_m"])


def synth_params(cfg: RunConfig) -> SynthParams:
    return SynthParams(
        n_buildings=(cfg["synth.buildings_min"], cfg["synth.buildings_max"]),
        footprint_px=(cfg["synth.footprint_min_px"], cfg["synth.footprint_max_px"]),
        height_m=(cfg["synth.height_min_m"], cfg["synth.height_max_m"]),
        tx_margin_px=cfg["synth.tx_margin_px"], seed=cfg.seed,
        tx_height_m=cfg["synth.tx_height_m"],
        tx_power_dbm=cfg["synth.tx_power_dbm"],
        freq_mhz=cfg["synth.freq_mhz"], rx_height_m=cfg["synth.rx_height_m"])


def oracle_params(cfg: RunConfig) -> OracleParams:
    return OracleParams(block_loss_db=cfg["oracle.block_loss_db"],
                        block_cap=cfg["oracle.block_cap"],
                        shadow_sigma_db=cfg["oracle.shadow_sigma_db"],
                        shadow_smooth_px=cfg["oracle.shadow_smooth_px"],
                        seed=cfg.seed)


def generator_spec(cfg: RunConfig, stage: str) -> GeneratorSpec:
    if stage == "predict":
        return GeneratorSpec(in_channels=4, levels=cfg["net.levels"],
                             base_channels=cfg["net.base_channels"],
                             max_channels=cfg["net.max_channels"],
                             sa_resolutions=cfg["net.sa_resolutions"],
                             dropout_rate=cfg["net.dropout_rate"])
    return GeneratorSpec(in_channels=3, levels=cfg["net.levels"],
                         base_channels=cfg["net.base_channels"],
                         max_channels=cfg["net.max_channels"],
                         rc_block_count=cfg["net.rc_blocks"],
                         dropout_rate=cfg["net.dropout_rate"])


def discriminator_spec(cfg: RunConfig, stage: str) -> DiscriminatorSpec:
    in_channels = 5 if stage == "predict" else 4
    return DiscriminatorSpec(in_channels=in_channels,
                             levels=cfg["net.disc_levels"],
                             base_channels=cfg["net.base_channels"],
                             max_channels=cfg["net.max_channels"])


def train_config(cfg: RunConfig, stage: str) -> TrainConfig:
    if stage not in ("predict", "correct"):
        raise ConfigurationError(f"unknown training stage '{stage}'")
    return TrainConfig(stage=stage,
                       learning_rate=cfg[f"train.{stage}.learning_rate"],
                       beta1=cfg["train.beta1"], beta2=cfg["train.beta2"],
                       batch_size=cfg[f"train.{stage}.batch_size"],
                       epochs=cfg[f"train.{stage}.epochs"],
                       lambda_l2=cfg["train.lambda_l2"], seed=cfg.seed,
                       measurement_count=cfg["train.measurement_count"])
