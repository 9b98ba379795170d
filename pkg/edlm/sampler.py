# -*- coding: utf-8 -*-
"""Предковый сэмплер и EDLM-денойзер с выборкой по значимости.

Сетка tau_n = 1 - n/N, n = 0..N. На шаге tau_n -> tau_{n+1}:
  окно активно (w > 0 и tau_n >= 1 - w): k кандидатов x0 ~ p_theta,
  один выбирается с вероятностью softmax(-e); иначе один x0 ~ p_theta.
  Затем x_{tau_{n+1}} ~ q(. | x_{tau_n}, x0).

Расход rng на шаге: предсказание не тратит rng; кандидаты берут один блок
(B, k, L); при k > 1 ещё блок (B,) на выбор; затем блок (B, L) на
раскрытие. При k = 1 выбор не тянет случайных чисел, поэтому путь
совпадает с базовым бит-в-бит.

Базовый шаг (x0 ~ mu_theta, затем posterior_sample) распределён так же,
как reverse_step(x_t, mu_theta); через x0 идут оба пути, чтобы k = 1 и
w = 0 тянули одни и те же случайные числа.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .constants import (
    DEFAULT_IMPORTANCE_SIZE,
    DEFAULT_SAMPLE_STEPS,
    DEFAULT_SEQ_LEN,
    DEFAULT_WINDOW,
    LOG_EVERY,
)
from .diffusion import (
    TokenSeq,
    categorical,
    factorized_predict,
    posterior_sample,
)
from .energy import EnergyModel
from .errors import DomainError, SamplerError
from .evaluation import ess
from .logging_conf import get_logger
from .schedule import NoiseSchedule

log = get_logger("edlm.sampler")

_WINDOW_TOL = 1e-12


@dataclass(frozen=True)
class SamplerConfig:
    num_steps: int = DEFAULT_SAMPLE_STEPS
    importance_size: int = DEFAULT_IMPORTANCE_SIZE
    window: float = DEFAULT_WINDOW
    seq_len: int = DEFAULT_SEQ_LEN
    grid: Optional[Sequence[float]] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_steps < 1:
            raise DomainError(f"num_steps must be >= 1, got {self.num_steps}")
        if self.importance_size < 1:
            raise DomainError(
                f"importance_size must be >= 1, got {self.importance_size}"
            )
        if not 0.0 <= self.window <= 1.0:
            raise DomainError(f"window must be in [0, 1], got {self.window}")
        if self.seq_len < 1:
            raise DomainError(f"seq_len must be >= 1, got {self.seq_len}")
        if self.grid is not None:
            g = np.asarray(self.grid, dtype=np.float64)
            if g.shape != (self.num_steps + 1,):
                raise DomainError("grid must hold num_steps + 1 times")
            if np.any(np.diff(g) >= 0) or g[0] > 1.0 or g[-1] < 0.0:
                raise DomainError("grid must decrease strictly inside [0, 1]")

    def times(self) -> np.ndarray:
        if self.grid is not None:
            return np.asarray(self.grid, dtype=np.float64)
        n = np.arange(self.num_steps + 1)
        return 1.0 - n / self.num_steps

    def in_window(self, tau: float) -> bool:
        return self.window > 0 and tau >= 1.0 - self.window - _WINDOW_TOL


@dataclass
class SamplerTrace:
    """Диагностика: ESS на каждом шаге с выборкой по значимости."""

    ess: List[float] = field(default_factory=list)
    is_steps: int = 0

    @property
    def mean_ess(self) -> float:
        return float(np.mean(self.ess)) if self.ess else float("nan")


def _selection_probs(energies: np.ndarray) -> np.ndarray:
    """softmax(-e) по последней оси со сдвигом на максимум.

    +inf -> нулевой вес; NaN, -inf или все +inf -> SamplerError.
    """
    e = np.asarray(energies, dtype=np.float64)
    if e.shape[-1] == 0:
        raise DomainError("empty energy array")
    if np.any(np.isnan(e)) or np.any(e == -np.inf):
        raise SamplerError("candidate energies contain NaN or -inf")
    if np.any(np.all(~np.isfinite(e), axis=-1)):
        raise SamplerError("all candidate energies are non-finite")
    a = -e
    a = a - a.max(axis=-1, keepdims=True)
    w = np.exp(a)
    return w / w.sum(axis=-1, keepdims=True)


def resample_index(energies: Sequence[float],
                   rng: np.random.Generator) -> int:
    """Индекс i с вероятностью exp(-e_i) / sum_j exp(-e_j)."""
    probs = _selection_probs(np.asarray(energies, dtype=np.float64))
    if probs.ndim != 1:
        raise DomainError("resample_index takes a 1-D energy array")
    return int(categorical(probs, np.asarray(rng.random())))


def _run(denoiser, energy: Optional[EnergyModel], config: SamplerConfig,
         schedule: NoiseSchedule, rng: np.random.Generator, rows: int,
         trace: Optional[SamplerTrace]) -> TokenSeq:
    v = denoiser.vocab_size
    taus = config.times()
    k = config.importance_size
    x = np.full((rows, config.seq_len), v, dtype=np.int64)
    use_energy = energy is not None and energy.kind != "none"
    for n in range(config.num_steps):
        t, s = float(taus[n]), float(taus[n + 1])
        out = factorized_predict(denoiser, x, t)
        if use_energy and config.in_window(t):
            cands = out.sample(rng, k)
            if k > 1:
                e = np.asarray(energy.energy(cands, x, t, out))
                probs = _selection_probs(e)
                idx = categorical(probs, rng.random(rows))
                x0 = cands[np.arange(rows), idx]
                if trace is not None:
                    trace.ess.append(float(np.mean(ess(e))))
            else:
                x0 = cands[:, 0]
            if trace is not None:
                trace.is_steps += 1
        else:
            x0 = out.sample(rng, 1)[:, 0]
        x = posterior_sample(x, x0, s, t, schedule, rng, v,
                             reveal_all=s <= 0.0)
        if (n + 1) % LOG_EVERY == 0:
            log.debug("sampler step %s/%s", n + 1, config.num_steps)
    if np.any(x == v):
        raise SamplerError(
            f"{int((x == v).sum())} masks left after the last step; "
            f"grid ends at t={taus[-1]}"
        )
    return x


def sample_base(denoiser, config: SamplerConfig, schedule: NoiseSchedule,
                rng: np.random.Generator,
                num_samples: Optional[int] = None) -> TokenSeq:
    """Цепочка от полностью маскированной последовательности.

    num_samples=None -> одна последовательность (L,), иначе (B, L).
    """
    x = _run(denoiser, None, config, schedule, rng, num_samples or 1, None)
    return x if num_samples is not None else x[0]


def sample_edlm(denoiser, energy: EnergyModel, config: SamplerConfig,
                schedule: NoiseSchedule, rng: np.random.Generator,
                num_samples: Optional[int] = None,
                trace: Optional[SamplerTrace] = None) -> TokenSeq:
    x = _run(denoiser, energy, config, schedule, rng, num_samples or 1,
             trace)
    return x if num_samples is not None else x[0]
