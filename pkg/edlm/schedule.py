# -*- coding: utf-8 -*-
"""Расписания шума alpha_t для маскирующей диффузии.

linear:    alpha_t = 1 - t
loglinear: alpha_t = 1 - t**c (c = power; c = 1 совпадает с linear)

alpha клампится в [eps, 1 - eps]; производная берётся у неклампированной
формулы.
"""
from dataclasses import dataclass
from typing import Union

import numpy as np

from .constants import (
    DEFAULT_SCHEDULE,
    DEFAULT_SCHEDULE_EPS,
    DEFAULT_SCHEDULE_POWER,
    SCHEDULE_KINDS,
)
from .errors import DomainError

Time = Union[float, np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str = DEFAULT_SCHEDULE
    eps: float = DEFAULT_SCHEDULE_EPS
    power: float = DEFAULT_SCHEDULE_POWER

    def __post_init__(self) -> None:
        if self.kind not in SCHEDULE_KINDS:
            raise DomainError(f"unknown schedule kind: {self.kind!r}")
        if not 0.0 < self.eps < 0.5:
            raise DomainError(f"eps must be in (0, 0.5), got {self.eps}")
        if self.power <= 0:
            raise DomainError(f"power must be > 0, got {self.power}")


def _check_time(t: Time) -> np.ndarray:
    arr = np.asarray(t, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"time outside [0, 1]: {t}")
    return arr


def _unclamped(schedule: NoiseSchedule, t: np.ndarray) -> np.ndarray:
    if schedule.kind == "linear":
        return 1.0 - t
    return 1.0 - np.power(t, schedule.power)


def _out(arr: np.ndarray, t: Time) -> Time:
    return float(arr) if np.ndim(t) == 0 else arr


def alpha(schedule: NoiseSchedule, t: Time) -> Time:
    tt = _check_time(t)
    a = np.clip(_unclamped(schedule, tt), schedule.eps, 1.0 - schedule.eps)
    return _out(a, t)


def alpha_prime(schedule: NoiseSchedule, t: Time) -> Time:
    tt = _check_time(t)
    if schedule.kind == "linear":
        d = np.full_like(tt, -1.0)
    else:
        c = schedule.power
        with np.errstate(divide="ignore"):
            d = -c * np.power(tt, c - 1.0)
    return _out(d, t)


def alpha_ratio(schedule: NoiseSchedule, s: Time, t: Time) -> Time:
    """alpha_{t|s} = alpha_t / alpha_s для s <= t."""
    ss = _check_time(s)
    tt = _check_time(t)
    if np.any(ss > tt):
        raise DomainError(f"alpha_ratio needs s <= t, got s={s}, t={t}")
    r = np.asarray(alpha(schedule, tt)) / np.asarray(alpha(schedule, ss))
    return _out(r, t if np.ndim(t) else s)
