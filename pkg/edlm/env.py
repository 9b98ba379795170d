# -*- coding: utf-8 -*-
"""Конфигурация запуска: CLI > файл конфигурации (EDLM_*) > умолчания."""
import os
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Mapping, Optional

from dotenv import dotenv_values

from .constants import (
    CONFIG_ENV_VAR,
    CONFIG_PREFIX,
    DEFAULT_AR_ORDER,
    DEFAULT_AR_SMOOTHING,
    DEFAULT_BATCH_SIZE,
    DEFAULT_BENCH_WORKERS,
    DEFAULT_BOUNDS_N,
    DEFAULT_CONTEXT_RADIUS,
    DEFAULT_DENOISER_ARCH,
    DEFAULT_DISCRETE_T,
    DEFAULT_ENERGY,
    DEFAULT_ESS_VARIANT,
    DEFAULT_ESTIMATOR,
    DEFAULT_HELDOUT_SIZE,
    DEFAULT_HIDDEN,
    DEFAULT_IMPORTANCE_SIZE,
    DEFAULT_LOG_LEVEL,
    DEFAULT_LR,
    DEFAULT_MAX_GRAD_NORM,
    DEFAULT_MC_SAMPLES,
    DEFAULT_NCE_BATCH,
    DEFAULT_NCE_LR,
    DEFAULT_NCE_STEPS,
    DEFAULT_NUM_SAMPLES,
    DEFAULT_SAMPLE_STEPS,
    DEFAULT_SCHEDULE,
    DEFAULT_SCHEDULE_EPS,
    DEFAULT_SCHEDULE_POWER,
    DEFAULT_SENTENCES,
    DEFAULT_SEQ_LEN,
    DEFAULT_TRAIN_STEPS,
    DEFAULT_VOCAB_POLICY,
    DEFAULT_WINDOW,
    DENOISER_ARCHS,
    ENERGY_KINDS,
    ESS_VARIANTS,
    ESTIMATORS,
    SCHEDULE_KINDS,
    VOCAB_POLICIES,
)
from .errors import ConfigError
from .logging_conf import get_logger
from .utils import digest

log = get_logger("edlm.env")

COMMANDS = ("make-corpus", "fit-ar", "train-denoiser", "train-nce",
            "sample", "eval", "bench", "verify")

# в дайджест не входят: куда писать и как логировать
_NOT_DIGESTED = ("out", "trace", "log_level", "config")


@dataclass(frozen=True)
class RunConfig:
    command: str
    seed: int = 0
    log_level: str = DEFAULT_LOG_LEVEL
    config: Optional[str] = None

    # пути
    corpus: Optional[str] = None
    model: Optional[str] = None
    ar: Optional[str] = None
    energy_model: Optional[str] = None
    grid: Optional[str] = None
    out: Optional[str] = None
    trace: Optional[str] = None

    # данные и расписание
    vocab_policy: str = DEFAULT_VOCAB_POLICY
    seq_len: int = DEFAULT_SEQ_LEN
    heldout_size: int = DEFAULT_HELDOUT_SIZE
    sentences: int = DEFAULT_SENTENCES
    schedule: str = DEFAULT_SCHEDULE
    schedule_eps: float = DEFAULT_SCHEDULE_EPS
    schedule_power: float = DEFAULT_SCHEDULE_POWER

    # модели и обучение
    order: int = DEFAULT_AR_ORDER
    smoothing: float = DEFAULT_AR_SMOOTHING
    architecture: str = DEFAULT_DENOISER_ARCH
    context_radius: int = DEFAULT_CONTEXT_RADIUS
    hidden: int = DEFAULT_HIDDEN
    train_steps: int = DEFAULT_TRAIN_STEPS
    lr: float = DEFAULT_LR
    batch_size: int = DEFAULT_BATCH_SIZE
    max_grad_norm: float = DEFAULT_MAX_GRAD_NORM

    # сэмплер
    energy: str = DEFAULT_ENERGY
    sample_steps: int = DEFAULT_SAMPLE_STEPS
    k: int = DEFAULT_IMPORTANCE_SIZE
    window: float = DEFAULT_WINDOW
    num_samples: int = DEFAULT_NUM_SAMPLES

    # оценка и бенч
    estimator: str = DEFAULT_ESTIMATOR
    mc_samples: int = DEFAULT_MC_SAMPLES
    discrete_steps: int = DEFAULT_DISCRETE_T
    bounds_n: int = DEFAULT_BOUNDS_N
    stratified: bool = True
    ess_variant: str = DEFAULT_ESS_VARIANT
    diagnostics: bool = False
    workers: int = DEFAULT_BENCH_WORKERS
    timing: bool = False

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def digest(self) -> str:
        data = {k: v for k, v in self.as_dict().items()
                if k not in _NOT_DIGESTED}
        return digest(data)


_ENUMS = {
    "command": COMMANDS,
    "schedule": SCHEDULE_KINDS,
    "vocab_policy": VOCAB_POLICIES,
    "architecture": DENOISER_ARCHS,
    "energy": ENERGY_KINDS,
    "estimator": ESTIMATORS,
    "ess_variant": ESS_VARIANTS,
}

# умолчания, зависящие от команды
_COMMAND_DEFAULTS = {
    "train-nce": {"train_steps": DEFAULT_NCE_STEPS, "lr": DEFAULT_NCE_LR,
                  "batch_size": DEFAULT_NCE_BATCH},
}


def _to_int(val: str, default: int, key: str) -> int:
    try:
        return int(val)
    except Exception:
        log.warning("config %s=%r is not an int, using %s", key, val,
                    default)
        return default


def _to_float(val: str, default: float, key: str) -> float:
    try:
        return float(val)
    except Exception:
        log.warning("config %s=%r is not a float, using %s", key, val,
                    default)
        return default


def _to_bool(val: str, default: bool, key: str) -> bool:
    v = (val or "").strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    log.warning("config %s=%r is not a bool, using %s", key, val, default)
    return default


def _parse(name: str, raw: str, default: Any, kind: Any) -> Any:
    key = CONFIG_PREFIX + name.upper()
    if kind is bool:
        return _to_bool(raw, default, key)
    if kind is int:
        return _to_int(raw, default, key)
    if kind is float:
        return _to_float(raw, default, key)
    v = (raw or "").strip()
    return v or default


def read_config_file(path: Optional[str]) -> Dict[str, Optional[str]]:
    if not path:
        return {}
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    values = dotenv_values(path)
    unknown = sorted(
        k for k in values
        if k.startswith(CONFIG_PREFIX) and k[len(CONFIG_PREFIX):].lower()
        not in {f.name for f in fields(RunConfig)}
    )
    if unknown:
        log.warning("config %s: unknown keys ignored: %s", path, unknown)
    return dict(values)


def load_config(command: str, cli: Optional[Mapping[str, Any]] = None,
                environ: Optional[Mapping[str, str]] = None) -> RunConfig:
    """Склеивает источники; None в cli означает "флаг не задан"."""
    cli = dict(cli or {})
    environ = os.environ if environ is None else environ
    path = cli.get("config") or environ.get(CONFIG_ENV_VAR)
    file_values = read_config_file(path)

    defaults = _COMMAND_DEFAULTS.get(command, {})
    values: Dict[str, Any] = {"command": command, "config": path}
    for f in fields(RunConfig):
        if f.name in ("command", "config"):
            continue
        default = defaults.get(f.name, f.default)
        if cli.get(f.name) is not None:
            values[f.name] = cli[f.name]
            continue
        raw = file_values.get(CONFIG_PREFIX + f.name.upper())
        if raw is None:
            values[f.name] = default
        else:
            values[f.name] = _parse(f.name, raw, default, f.type)

    for name, allowed in _ENUMS.items():
        if values[name] not in allowed:
            raise ConfigError(
                f"{name}={values[name]!r} is not one of {list(allowed)}"
            )
    return RunConfig(**values)
