"""Plain-text run configuration.

A config file holds one ``dotted.key = value`` per line; ``#`` starts a
comment. ``--set key=value`` flags override the file. Every key must exist in
the command's defaults, and values are parsed to the default's type (lists are
comma-separated).
"""
from __future__ import annotations

import copy
from pathlib import Path


class ConfigError(ValueError):
    pass


DATA_DEFAULTS = {
    "data.n": 20000,
    "data.ring_radius": 1.0,
    "data.ring_noise": 0.1,
    "data.square_half_width": 1.0,
    "data.bimodal_means": [1.5, 0.0, -1.5, 0.0],
    "data.bimodal_std": 0.3,
    "data.mixing_seed": 0,
}

INPUT_DEFAULTS = {
    "input.dataset": "dataset.csv",
    "input.spec": "spec.json",
}

SYNTH_DEFAULTS = {
    "train.learning_rate": 1e-3,
    "train.batch_size": 256,
    "train.iterations": 5000,
    "train.ortho_weight": 1e-2,
    "train.mask_policy": "iid-half",
    "train.eval_pairs": 20000,
}

DIFFUSION_DEFAULTS = {
    "diffusion.T": 1000,
    "diffusion.lam": 0.0,
    "diffusion.lr": 1e-3,
    "diffusion.disc_lr": 1e-3,
    "diffusion.batch_size": 128,
    "diffusion.iterations": 5000,
    "diffusion.ddim_steps": 50,
    "diffusion.hidden": 128,
    "diffusion.mask_policy": "iid-half",
}

COVERAGE_DEFAULTS = {
    "coverage.n": 50,
    "coverage.lams": [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0],
    "coverage.n_failure": 3,
    "coverage.n_success": 60,
    "coverage.failure_mass0": 0.8,
    "coverage.failure_scale": 0.3,
    "coverage.concentration_rate": 0.5,
}

COMMAND_DEFAULTS = {
    "gen-data": {**DATA_DEFAULTS},
    "train-synth": {**INPUT_DEFAULTS, **SYNTH_DEFAULTS},
    "eval": {**INPUT_DEFAULTS, "input.checkpoint": "", "eval.pairs": 20000},
    "train-diffusion": {**INPUT_DEFAULTS, **DIFFUSION_DEFAULTS},
    "sample": {
        **INPUT_DEFAULTS,
        "input.checkpoint": "diffusion.ckpt",
        "sample.mode": "reconstruct",
        "sample.n": 500,
        "sample.block": 0,
        "sample.mask": "random",
        "sample.steps": 50,
    },
    "sweep": {
        **INPUT_DEFAULTS,
        **DIFFUSION_DEFAULTS,
        "sweep.lams": [0.0, 0.001, 0.003, 0.01, 0.1],
        "sweep.seeds": [0],
        "sweep.n_eval": 2000,
    },
    "theory": {
        "theory.n_joints": 1000,
        "theory.n_closure": 200,
        "theory.n_poe": 50,
        "theory.n_coverage": 20,
        "theory.coverage_trials": 10000,
        "theory.extra_pmf": "",
    },
    "coverage": {**COVERAGE_DEFAULTS},
}


def _parse_value(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            items = [v.strip() for v in raw.split(",") if v.strip()]
            kind = type(default[0]) if default else float
            return [kind(v) for v in items]
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_text(text: str) -> dict[str, str]:
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def resolve(command: str, config_path=None, overrides=()) -> dict:
    """Defaults for ``command`` updated by the config file, then by overrides."""
    if command not in COMMAND_DEFAULTS:
        raise ConfigError(f"unknown command {command!r}")
    defaults = COMMAND_DEFAULTS[command]
    cfg = copy.deepcopy(defaults)
    raw: dict[str, str] = {}
    if config_path:
        try:
            raw.update(parse_text(Path(config_path).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        raw[k.strip()] = v
    for key, value in raw.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {key!r} for command {command}")
        cfg[key] = _parse_value(key, value, defaults[key])
    return cfg


def dump(cfg: dict) -> str:
    lines = []
    for key in sorted(cfg):
        v = cfg[key]
        lines.append(f"{key} = {','.join(map(str, v)) if isinstance(v, list) else v}")
    return "\n".join(lines) + "\n"
