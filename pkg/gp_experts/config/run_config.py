"""
Effective run configuration: settings defaults, then per-command defaults,
then a dotenv-style config file, then the --fast profile, then explicit
command-line flags.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import dotenv_values

from . import settings
from ..core.errors import ConfigError, InvalidParameterError
from ..core.models import HmcConfig, ModelTag, PriorTable
from ..utils.random_utils import parse_seed_range

DATASET_CHOICES = ("demo", "1", "2", "3", "4", "5", "all")
MODEL_CHOICES = ModelTag.ALL + ("all",)

# Config-file key -> RunConfig field
FILE_KEYS = {
    "MODEL": "model",
    "DATASET": "dataset",
    "SEEDS": "seeds",
    "ITERS": "total_iterations",
    "BURNIN": "burn_in",
    "THIN": "thin",
    "OUT": "out",
    "WORKERS": "workers",
    "PER_RECORD_RMSE": "per_record_rmse",
}

PRIOR_KEYS = {
    "SIGMA2": "sigma2",
    "LENGTH_SCALE": "length_scale",
    "NOISE_VAR": "noise_var",
    "KERNEL_WIDTH": "kernel_width",
    "RG_BETA": "rg_beta",
}

HMC_KEYS = {
    "LEAPFROG_STEPS": ("leapfrog_steps", int),
    "STEP_CAP": ("step_cap", float),
    "TARGET_ACCEPT": ("target_accept", float),
    "INITIAL_STEP": ("initial_step", float),
}


@dataclass
class RunConfig:
    model: str = "all"
    dataset: str = "all"
    seeds: List[int] = field(default_factory=lambda: parse_seed_range(settings.SEEDS))
    total_iterations: int = settings.TOTAL_ITERATIONS
    burn_in: int = settings.BURN_IN
    thin: int = settings.THIN
    out: Path = Path(settings.OUTPUT_DIR)
    workers: int = settings.WORKERS
    resume: bool = False
    per_record_rmse: bool = False
    priors: PriorTable = field(default_factory=PriorTable)
    hmc: HmcConfig = field(default_factory=HmcConfig)

    @property
    def models(self) -> List[str]:
        return list(ModelTag.ALL) if self.model == "all" else [self.model]

    @property
    def dataset_ids(self) -> List[int]:
        return [1, 2, 3, 4, 5] if self.dataset == "all" else [int(self.dataset)]

    @property
    def retained_records(self) -> int:
        return (self.total_iterations - self.burn_in) // self.thin

    def validate(self):
        bad = []
        if self.model not in MODEL_CHOICES:
            bad.append(("model", f"must be one of {MODEL_CHOICES}"))
        if self.dataset not in DATASET_CHOICES:
            bad.append(("dataset", f"must be one of {DATASET_CHOICES}"))
        if not self.seeds:
            bad.append(("seeds", "no seeds selected"))
        if self.total_iterations < 1:
            bad.append(("total_iterations", "must be positive"))
        if not 0 <= self.burn_in < self.total_iterations:
            bad.append(("burn_in", f"must lie in [0, total_iterations={self.total_iterations})"))
        elif self.thin < 1 or (self.total_iterations - self.burn_in) % self.thin:
            bad.append(("thin", f"must divide total_iterations - burn_in = {self.total_iterations - self.burn_in}"))
        if self.workers < 1:
            bad.append(("workers", "must be at least 1"))
        if bad:
            raise ConfigError("; ".join(f"{name}: {reason}" for name, reason in bad), [name for name, _ in bad])
        return self

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "dataset": self.dataset,
            "seeds": self.seeds,
            "total_iterations": self.total_iterations,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "out": str(self.out),
            "workers": self.workers,
            "resume": self.resume,
            "per_record_rmse": self.per_record_rmse,
            "priors": self.priors.to_dict(),
            "hmc": {
                "leapfrog_steps": self.hmc.leapfrog_steps,
                "step_cap": self.hmc.step_cap,
                "target_accept": self.hmc.target_accept,
                "initial_step": self.hmc.initial_step,
                "dual_averaging_enabled": self.hmc.dual_averaging_enabled,
            },
        }

    def write_effective(self, directory: Optional[Path] = None) -> Path:
        directory = Path(directory or self.out)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / "effective_config.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def _coerce(name: str, raw: str, kind):
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot read {raw!r} as {kind.__name__}", [name])


def _coerce_flag(name: str, raw) -> bool:
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"{name}: cannot read {raw!r} as a flag", [name])


def _apply(values: Dict[str, object], config: RunConfig) -> RunConfig:
    for key, value in values.items():
        if value is None:
            continue
        if key == "seeds":
            try:
                config.seeds = parse_seed_range(value) if isinstance(value, str) else list(value)
            except ValueError as e:
                raise ConfigError(f"seeds: {e}", ["seeds"])
        elif key == "out":
            config.out = Path(value)
        elif key in ("total_iterations", "burn_in", "thin", "workers"):
            setattr(config, key, _coerce(key, value, int))
        elif key == "per_record_rmse":
            config.per_record_rmse = _coerce_flag(key, value)
        else:
            setattr(config, key, value)
    return config


def read_config_file(path) -> Dict[str, object]:
    """
    Read KEY=value lines. Run keys map straight onto RunConfig fields;
    <PRIOR>_SHAPE / <PRIOR>_SCALE, P_ALPHA, P_BETA and the HMC keys are
    collected under 'priors' and 'hmc'.
    """
    raw = dotenv_values(path)
    values: Dict[str, object] = {}
    priors: Dict[str, list] = {}
    hmc: Dict[str, object] = {}
    unknown = []
    for key, value in raw.items():
        upper = key.upper()
        if upper in FILE_KEYS:
            values[FILE_KEYS[upper]] = value
        elif upper in HMC_KEYS:
            name, kind = HMC_KEYS[upper]
            hmc[name] = _coerce(upper, value, kind)
        elif upper in ("P_ALPHA", "P_BETA"):
            priors[upper.lower()] = _coerce(upper, value, float)
        elif upper.rsplit("_", 1)[0] in PRIOR_KEYS and upper.endswith(("_SHAPE", "_SCALE")):
            prefix, part = upper.rsplit("_", 1)
            priors.setdefault(PRIOR_KEYS[prefix], [None, None])[0 if part == "SHAPE" else 1] = _coerce(upper, value, float)
        else:
            unknown.append(key)
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(unknown)}", unknown)
    values["priors"] = priors
    values["hmc"] = hmc
    return values


def _override_priors(base: PriorTable, overrides: Dict[str, object]) -> PriorTable:
    table = base.to_dict()
    for name, pair in overrides.items():
        if name in ("p_alpha", "p_beta"):
            table[name] = pair
            continue
        current = list(table[name])
        table[name] = [current[i] if pair[i] is None else pair[i] for i in range(2)]
    try:
        return PriorTable.from_dict(table)
    except InvalidParameterError as e:
        raise ConfigError(f"priors: {e}", list(overrides))


def _override_hmc(base: HmcConfig, overrides: Dict[str, object]) -> HmcConfig:
    try:
        return HmcConfig(
            leapfrog_steps=overrides.get("leapfrog_steps", base.leapfrog_steps),
            step_cap=overrides.get("step_cap", base.step_cap),
            target_accept=overrides.get("target_accept", base.target_accept),
            dual_averaging_enabled=base.dual_averaging_enabled,
            adaptation_iterations=base.adaptation_iterations,
            initial_step=overrides.get("initial_step", base.initial_step),
        )
    except InvalidParameterError as e:
        raise ConfigError(f"hmc: {e}", list(overrides))


def build_run_config(
    flags: Optional[Dict[str, object]] = None,
    config_file=None,
    fast: bool = False,
    defaults: Optional[Dict[str, object]] = None,
) -> RunConfig:
    """Layer settings, command defaults, config file, --fast and flags, later winning."""
    config = _apply(dict(defaults or {}), RunConfig())
    if config_file is not None:
        file_values = read_config_file(config_file)
        config.priors = _override_priors(config.priors, file_values.pop("priors"))
        config.hmc = _override_hmc(config.hmc, file_values.pop("hmc"))
        _apply(file_values, config)
    if fast:
        _apply(dict(settings.FAST_PROFILE), config)
    _apply(dict(flags or {}), config)
    return config.validate()