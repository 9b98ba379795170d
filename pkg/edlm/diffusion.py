# -*- coding: utf-8 -*-
"""Маскирующая (absorbing) диффузия: прямой процесс, постериор, шаг назад.

Последовательности: int64-массивы формы (..., L); id маски = vocab_size.
Случайные числа берутся блоками формы входа (построчно, слева направо),
поэтому прогон воспроизводим бит-в-бит для одного seed.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import log_softmax, softmax

from .constants import NORM_ATOL
from .errors import (
    DomainError,
    InconsistentPairError,
    ModelError,
    PreconditionError,
)
from .schedule import NoiseSchedule, Time, alpha, alpha_ratio

TokenSeq = np.ndarray


def as_tokens(x, vocab_size: int, allow_mask: bool = True) -> TokenSeq:
    arr = np.asarray(x, dtype=np.int64)
    hi = vocab_size if allow_mask else vocab_size - 1
    if arr.size and (arr.min() < 0 or arr.max() > hi):
        if not allow_mask and arr.max() == vocab_size:
            raise PreconditionError("mask token in a clean sequence")
        raise PreconditionError(f"token id outside [0, {hi}]")
    return arr


def _row_time(t: Time, ndim: int) -> np.ndarray:
    """Время на строку -> форма, транслируемая на (..., L)."""
    tt = np.asarray(t, dtype=np.float64)
    return tt.reshape(tt.shape + (1,) * (ndim - tt.ndim))


def categorical(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Обратная функция распределения: probs (..., V), u (...) -> (...)."""
    cdf = np.cumsum(probs, axis=-1)
    idx = (cdf <= u[..., None]).sum(axis=-1)
    # округление может оставить cdf[-1] < u: берём последний ненулевой
    last = probs.shape[-1] - 1 - np.argmax(probs[..., ::-1] > 0, axis=-1)
    return np.minimum(idx, last)


@dataclass
class DenoiserOutput:
    """mu_theta(x_t, t): по-позиционные распределения над V токенами.

    На немаскированных позициях one-hot токена x_t (ветка копирования),
    на маскированных softmax логитов; у маски нулевая масса.
    """

    probs: np.ndarray
    log_probs: np.ndarray
    x_t: TokenSeq
    vocab_size: int

    @classmethod
    def from_logits(cls, logits: np.ndarray, x_t: TokenSeq,
                    vocab_size: int) -> "DenoiserOutput":
        logits = np.asarray(logits, dtype=np.float64)
        if not np.all(np.isfinite(logits)):
            raise ModelError("non-finite denoiser logits")
        return cls._with_copy(softmax(logits, axis=-1),
                              log_softmax(logits, axis=-1), x_t, vocab_size)

    @classmethod
    def from_probs(cls, probs: np.ndarray, x_t: TokenSeq,
                   vocab_size: int) -> "DenoiserOutput":
        probs = np.asarray(probs, dtype=np.float64)
        with np.errstate(divide="ignore"):
            log_probs = np.log(probs)
        return cls._with_copy(probs, log_probs, x_t, vocab_size)

    @classmethod
    def _with_copy(cls, probs, log_probs, x_t, vocab_size):
        x_t = np.asarray(x_t, dtype=np.int64)
        if probs.shape != x_t.shape + (vocab_size,):
            raise ModelError(
                f"predictor shape {probs.shape} does not match "
                f"{x_t.shape + (vocab_size,)}"
            )
        keep = x_t != vocab_size
        probs = probs.copy()
        log_probs = log_probs.copy()
        onehot = np.eye(vocab_size)[np.where(keep, x_t, 0)]
        probs[keep] = onehot[keep]
        with np.errstate(divide="ignore"):
            log_probs[keep] = np.log(onehot[keep])
        out = cls(probs, log_probs, x_t, vocab_size)
        out.check()
        return out

    @property
    def masked(self) -> np.ndarray:
        return self.x_t == self.vocab_size

    def check(self) -> None:
        sums = self.probs.sum(axis=-1)
        if (not np.all(np.isfinite(self.probs))
                or np.any(np.abs(sums - 1.0) > NORM_ATOL)
                or np.any(self.probs < 0)):
            raise ModelError("degenerate predictor: rows not normalized")

    def _expand(self, x0: np.ndarray):
        extra = x0.ndim - self.x_t.ndim
        if extra not in (0, 1):
            raise PreconditionError(
                f"sequence rank {x0.ndim} vs x_t rank {self.x_t.ndim}"
            )
        lp, m = self.log_probs, self.masked
        if extra:
            lp = lp[..., None, :, :]
            m = m[..., None, :]
        return lp, m

    def token_log_probs(self, x0: TokenSeq) -> np.ndarray:
        """log mu^i(x0^i) на маскированных позициях, 0 на остальных."""
        x0 = np.asarray(x0, dtype=np.int64)
        lp, m = self._expand(x0)
        lp = np.broadcast_to(lp, x0.shape + (self.vocab_size,))
        safe = np.where(x0 < self.vocab_size, x0, 0)
        picked = np.take_along_axis(lp, safe[..., None], axis=-1)[..., 0]
        return np.where(np.broadcast_to(m, x0.shape), picked, 0.0)

    def log_prob(self, x0: TokenSeq) -> np.ndarray:
        """log p_theta(x0 | x_t) = сумма по маскированным позициям.

        x0 формы x_t.shape или x_t.shape[:-1] + (K, L) для K кандидатов.
        """
        return self.token_log_probs(x0).sum(axis=-1)

    def sample(self, rng: np.random.Generator,
               k: Optional[int] = None) -> TokenSeq:
        """Факторизованная выборка x0 ~ p_theta(.|x_t).

        k=None -> форма x_t; иначе (..., k, L). Расход rng одинаков для
        k=1 и для одиночной выборки с последующим reshape.
        """
        shape = self.x_t.shape
        probs = self.probs
        if k is not None:
            shape = shape[:-1] + (k, shape[-1])
            probs = probs[..., None, :, :]
        u = rng.random(shape)
        return categorical(np.broadcast_to(probs, shape + probs.shape[-1:]),
                           u)


@dataclass(frozen=True)
class PosteriorStep:
    """q(x_s | x_t, x0): на позиции либо токен (p_token), либо маска."""

    s: float
    t: float
    token: np.ndarray
    p_token: np.ndarray
    p_mask: np.ndarray


def forward_sample(x0: TokenSeq, t: Time, schedule: NoiseSchedule,
                   rng: np.random.Generator, vocab_size: int) -> TokenSeq:
    """q(x_t | x0): токен остаётся с вероятностью alpha_t, иначе маска."""
    x0 = as_tokens(x0, vocab_size, allow_mask=False)
    a = _row_time(alpha(schedule, t), x0.ndim)
    keep = rng.random(x0.shape) < a
    return np.where(keep, x0, vocab_size)


def forward_transition(x_s: TokenSeq, s: Time, t: Time,
                       schedule: NoiseSchedule, rng: np.random.Generator,
                       vocab_size: int) -> TokenSeq:
    """q(x_t | x_s), s <= t: немаскированный токен маскируется с
    вероятностью 1 - alpha_{t|s}; маска поглощающая."""
    x_s = as_tokens(x_s, vocab_size)
    r = _row_time(alpha_ratio(schedule, s, t), x_s.ndim)
    keep = rng.random(x_s.shape) < r
    return np.where(keep, x_s, vocab_size)


def _check_pair(x_t: TokenSeq, x0: TokenSeq, vocab_size: int) -> None:
    bad = (x_t != vocab_size) & (x_t != x0)
    if np.any(bad):
        pos = np.argwhere(bad)[0].tolist()
        raise InconsistentPairError(
            f"x_t disagrees with x0 at unmasked position {pos}"
        )


def _unmask_prob(schedule: NoiseSchedule, s: float, t: float) -> float:
    if s > t:
        raise DomainError(f"posterior needs s <= t, got s={s}, t={t}")
    a_s, a_t = alpha(schedule, s), alpha(schedule, t)
    return (a_s - a_t) / (1.0 - a_t)


def posterior(x_t: TokenSeq, x0: TokenSeq, s: float, t: float,
              schedule: NoiseSchedule, vocab_size: int) -> PosteriorStep:
    x_t = as_tokens(x_t, vocab_size)
    x0 = as_tokens(x0, vocab_size, allow_mask=False)
    _check_pair(x_t, x0, vocab_size)
    p_rev = _unmask_prob(schedule, s, t)
    masked = x_t == vocab_size
    p_token = np.where(masked, p_rev, 1.0)
    p_mask = np.where(masked, 1.0 - p_rev, 0.0)
    return PosteriorStep(float(s), float(t), np.where(masked, x0, x_t),
                         p_token, p_mask)


def posterior_sample(x_t: TokenSeq, x0: TokenSeq, s: float, t: float,
                     schedule: NoiseSchedule, rng: np.random.Generator,
                     vocab_size: int, reveal_all: bool = False) -> TokenSeq:
    """x_s ~ q(x_s | x_t, x0).

    reveal_all: финальный шаг сэмплера, все оставшиеся маски
    заполняются из x0 (rng расходуется так же).
    """
    step = posterior(x_t, x0, s, t, schedule, vocab_size)
    u = rng.random(step.token.shape)
    reveal = (u < step.p_token) | reveal_all
    return np.where(reveal, step.token, vocab_size)


def factorized_predict(denoiser, x_t: TokenSeq, t: Time) -> DenoiserOutput:
    """mu_theta(x_t, t) с веткой копирования на немаскированных позициях.

    denoiser: любой объект с vocab_size и predict(x_t, t).
    """
    x_t = as_tokens(x_t, denoiser.vocab_size)
    out = denoiser.predict(x_t, t)
    if not isinstance(out, DenoiserOutput):
        raise ModelError("denoiser.predict must return DenoiserOutput")
    return out


def reverse_step(x_t: TokenSeq, mu: DenoiserOutput, s: float, t: float,
                 schedule: NoiseSchedule,
                 rng: np.random.Generator) -> TokenSeq:
    """x_s ~ q(x_s | x_t, x0 = mu): маскированная позиция раскрывается с
    вероятностью (alpha_s - alpha_t)/(1 - alpha_t), токен из mu."""
    vocab_size = mu.vocab_size
    x_t = as_tokens(x_t, vocab_size)
    mu.check()
    p_rev = _unmask_prob(schedule, s, t)
    reveal = rng.random(x_t.shape) < p_rev
    drawn = categorical(mu.probs, rng.random(x_t.shape))
    masked = x_t == vocab_size
    return np.where(masked & reveal, drawn, x_t)
