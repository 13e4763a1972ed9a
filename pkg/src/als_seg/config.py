"""Experiment configuration: flat key=value files, presets, seed discipline.

Config values flow defaults -> config file -> preset -> CLI flags, and the
effective configuration is echoed into the run directory so every run is
diff-able and hash-able.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .active_learner import LearnerSpec, SelectionConfig
from .s4gan import GanConfig


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps this to exit code 2."""


@dataclass
class ExperimentConfig:
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    dataset_path: str = ""
    output_dir: str = ""
    seed: int = 0
    eval_split_fraction: float = 0.2

    def __post_init__(self):
        if not (0.0 < self.eval_split_fraction < 1.0):
            raise ConfigError(
                f"eval_split_fraction must be in (0, 1), got {self.eval_split_fraction}"
            )


def _parse_bool(raw: str) -> bool:
    if raw.lower() in ("true", "1", "yes"):
        return True
    if raw.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_optional_float(raw: str):
    if raw in ("-", "none", ""):
        return None
    return float(raw)


def _parse_optional_size(raw: str):
    if raw in ("-", "none", ""):
        return None
    parts = [int(p) for p in raw.replace("x", ",").split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected H,W, got {raw!r}")
    return (parts[0], parts[1])


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


# key -> (parser, "section.attr")
_SCHEMA = {
    "seed": int,
    "dataset_path": str,
    "output_dir": str,
    "eval_split_fraction": float,
    "selection.labeled_ratio": float,
    "selection.alpha_init": float,
    "selection.beta_q": float,
    "selection.strategy": str,
    "selection.learner.architecture": str,
    "selection.learner.epochs_per_teach": int,
    "selection.learner.batch_size": int,
    "selection.learner.base_lr": float,
    "selection.learner.momentum": float,
    "selection.learner.lr_step_epochs": int,
    "selection.learner.lr_step_factor": float,
    "selection.learner.reinit_each_teach": _parse_bool,
    "gan.lambda_fm": float,
    "gan.lambda_st": float,
    "gan.tau": float,
    "gan.iterations": int,
    "gan.gen_lr": float,
    "gan.gen_momentum": float,
    "gan.gen_weight_decay": float,
    "gan.disc_lr": float,
    "gan.batch_size": int,
    "gan.num_classes": int,
    "gan.crop_size": _parse_optional_size,
    "gan.fm_norm": str,
    "gan.ephemeral_st": _parse_bool,
    "gan.seg_architecture": str,
    "gan.disc_base_channels": int,
    "gan.disc_dropout": float,
    "gan.checkpoint_every": int,
    "gan.poly_power": _parse_optional_float,
    "gan.st_start_iteration": int,
    "gan.grad_clip_norm": _parse_optional_float,
}

# Reference hyperparameter bundle behind the `paper` preset name.
PAPER_PRESET = {
    "selection.alpha_init": "0.1",
    "selection.beta_q": "0.5",
    "gan.tau": "0.6",
    "gan.lambda_fm": "0.1",
    "gan.lambda_st": "1.0",
}

PRESETS = {"paper": PAPER_PRESET}


def flatten(config: ExperimentConfig) -> dict[str, str]:
    sel, learner, gan = config.selection, config.selection.learner, config.gan
    values = {
        "seed": config.seed,
        "dataset_path": config.dataset_path,
        "output_dir": config.output_dir,
        "eval_split_fraction": config.eval_split_fraction,
        "selection.labeled_ratio": sel.labeled_ratio,
        "selection.alpha_init": sel.alpha_init,
        "selection.beta_q": sel.beta_q,
        "selection.strategy": sel.strategy,
        "selection.learner.architecture": learner.architecture,
        "selection.learner.epochs_per_teach": learner.epochs_per_teach,
        "selection.learner.batch_size": learner.batch_size,
        "selection.learner.base_lr": learner.base_lr,
        "selection.learner.momentum": learner.momentum,
        "selection.learner.lr_step_epochs": learner.lr_step_epochs,
        "selection.learner.lr_step_factor": learner.lr_step_factor,
        "selection.learner.reinit_each_teach": learner.reinit_each_teach,
        "gan.lambda_fm": gan.lambda_fm,
        "gan.lambda_st": gan.lambda_st,
        "gan.tau": gan.tau,
        "gan.iterations": gan.iterations,
        "gan.gen_lr": gan.gen_lr,
        "gan.gen_momentum": gan.gen_momentum,
        "gan.gen_weight_decay": gan.gen_weight_decay,
        "gan.disc_lr": gan.disc_lr,
        "gan.batch_size": gan.batch_size,
        "gan.num_classes": gan.num_classes,
        "gan.crop_size": gan.crop_size,
        "gan.fm_norm": gan.fm_norm,
        "gan.ephemeral_st": gan.ephemeral_st,
        "gan.seg_architecture": gan.seg_architecture,
        "gan.disc_base_channels": gan.disc_base_channels,
        "gan.disc_dropout": gan.disc_dropout,
        "gan.checkpoint_every": gan.checkpoint_every,
        "gan.poly_power": gan.poly_power,
        "gan.st_start_iteration": gan.st_start_iteration,
        "gan.grad_clip_norm": gan.grad_clip_norm,
    }
    return {key: _fmt(value) for key, value in values.items()}


def build_config(flat: dict[str, str]) -> ExperimentConfig:
    """Construct a validated ExperimentConfig from flat key=value strings."""
    unknown = set(flat) - set(_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    parsed: dict[str, object] = {}
    for key, raw in flat.items():
        try:
            parsed[key] = _SCHEMA[key](raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc

    def section(prefix: str) -> dict[str, object]:
        plen = len(prefix)
        return {
            key[plen:]: value
            for key, value in parsed.items()
            if key.startswith(prefix) and "." not in key[plen:]
        }

    try:
        learner = LearnerSpec(**section("selection.learner."))
        sel_kwargs = section("selection.")
        sel_kwargs.pop("learner", None)
        selection = SelectionConfig(learner=learner, **sel_kwargs)
        gan = GanConfig(**section("gan."))
        top = {k: v for k, v in parsed.items() if "." not in k}
        config = ExperimentConfig(selection=selection, gan=gan, **top)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    # The selection loop derives all its sub-seeds from the root seed.
    config.selection.seed = config.seed
    return config


def parse_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = stripped.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def merge_config(
    config_file: str | None = None,
    preset: str | None = None,
    overrides: dict[str, str] | None = None,
) -> ExperimentConfig:
    """Defaults <- config file <- preset <- explicit overrides."""
    flat = flatten(ExperimentConfig())
    if config_file:
        flat.update(parse_config_file(config_file))
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
        flat.update(PRESETS[preset])
    if overrides:
        flat.update(overrides)
    return build_config(flat)


def effective_config_text(config: ExperimentConfig) -> str:
    flat = flatten(config)
    return "\n".join(f"{key}={flat[key]}" for key in sorted(flat)) + "\n"


def config_hash(config: ExperimentConfig) -> str:
    """Hash of the experiment parameters; storage paths are provenance, not
    parameters, so runs in different directories compare equal."""
    flat = flatten(config)
    flat.pop("output_dir", None)
    flat.pop("dataset_path", None)
    text = "\n".join(f"{key}={flat[key]}" for key in sorted(flat))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def write_effective_config(config: ExperimentConfig, out_dir) -> Path:
    out = Path(out_dir) / "config.txt"
    out.write_text(effective_config_text(config), encoding="utf-8")
    return out
