# -*- coding: utf-8 -*-
"""Остаточные энергии E_phi(x0, x_t, t).

x0 может нести лишнюю ось кандидатов: x_t (..., L), x0 (..., K, L);
тогда энергия имеет форму (..., K).
"""
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .diffusion import (
    DenoiserOutput,
    TokenSeq,
    as_tokens,
    factorized_predict,
)
from .errors import DomainError, InconsistentPairError, ModelError
from .models import ARModel
from .schedule import Time

Score = Union[float, np.ndarray]


def _scalar(x: np.ndarray) -> Score:
    return float(x) if np.ndim(x) == 0 else x


def _aligned(x0: TokenSeq, x_t: TokenSeq, vocab_size: int):
    """Проверка пары и выравнивание x_t под ось кандидатов x0."""
    x0 = as_tokens(x0, vocab_size, allow_mask=False)
    x_t = as_tokens(x_t, vocab_size)
    extra = x0.ndim - x_t.ndim
    if extra not in (0, 1):
        raise DomainError(f"x0 rank {x0.ndim} vs x_t rank {x_t.ndim}")
    xt = x_t[..., None, :] if extra else x_t
    bad = (xt != vocab_size) & (xt != x0)
    if np.any(bad):
        pos = np.argwhere(bad)[0].tolist()
        raise InconsistentPairError(
            f"x0 disagrees with x_t at unmasked position {pos}"
        )
    return x0, xt


def _lead_time(t: Time, lead_ndim: int) -> np.ndarray:
    tt = np.asarray(t, dtype=np.float64)
    if tt.ndim == 0:
        return tt
    return tt.reshape(tt.shape + (1,) * (lead_ndim - tt.ndim))


def _predict(denoiser, x_t, t, out: Optional[DenoiserOutput]):
    return out if out is not None else factorized_predict(denoiser, x_t, t)


# --- AR / coAR -----------------------------------------------------------

def carried_logprob(ar: ARModel, x0: TokenSeq, x_t: TokenSeq) -> Score:
    """sum по немаскированным позициям x_t от log p_AR(x0^i | x0^{<i})."""
    x0, xt = _aligned(x0, x_t, ar.vocab_size)
    lp = ar.token_logprobs(x0)
    return _scalar(np.where(xt != ar.vocab_size, lp, 0.0).sum(axis=-1))


def energy_ar(ar: ARModel, denoiser, x0: TokenSeq, x_t: TokenSeq, t: Time,
              out: Optional[DenoiserOutput] = None) -> Score:
    """-log p_AR(x0) + log p_theta(x0 | x_t)."""
    x0, _ = _aligned(x0, x_t, ar.vocab_size)
    out = _predict(denoiser, x_t, t, out)
    e = -ar.token_logprobs(x0).sum(axis=-1) + out.log_prob(x0)
    return _scalar(e)


def energy_coar(ar: ARModel, denoiser, x0: TokenSeq, x_t: TokenSeq,
                t: Time, out: Optional[DenoiserOutput] = None) -> Score:
    """Как energy_ar, но перенесённые токены получают p_AR = 1."""
    x0, xt = _aligned(x0, x_t, ar.vocab_size)
    out = _predict(denoiser, x_t, t, out)
    lp = np.where(xt == ar.vocab_size, ar.token_logprobs(x0), 0.0)
    return _scalar(-lp.sum(axis=-1) + out.log_prob(x0))


# --- NCE -----------------------------------------------------------------
#
# Признаки (нормированы на L):
#   [0, 2V)          токен x0^i с флагом маски x_t^i
#   [2V, 2V + V^2)   биграмма (x0^i, x0^{i+1}), если хоть одна позиция
#                    маскирована в x_t
#   2V + V^2         t
#   2V + V^2 + 1     смещение

def nce_dim(vocab_size: int) -> int:
    return 2 * vocab_size + vocab_size * vocab_size + 2


def nce_vocab_size(params: np.ndarray) -> int:
    d = int(np.asarray(params).shape[-1])
    v = int(round(np.sqrt(d - 1))) - 1
    if v < 1 or nce_dim(v) != d:
        raise DomainError(f"parameter length {d} is not an NCE size")
    return v


def _nce_index(x0: np.ndarray, xt: np.ndarray, vocab_size: int):
    masked = xt == vocab_size
    unigram = x0 + vocab_size * masked
    touch = masked[..., :-1] | masked[..., 1:]
    bigram = 2 * vocab_size + x0[..., :-1] * vocab_size + x0[..., 1:]
    return unigram, bigram, touch


def energy_nce(params: np.ndarray, x0: TokenSeq, x_t: TokenSeq,
               t: Time) -> Score:
    """phi . features(x0, x_t, t); признаки не материализуются."""
    params = np.asarray(params, dtype=np.float64)
    v = nce_vocab_size(params)
    if not np.all(np.isfinite(params)):
        raise ModelError("non-finite NCE parameters")
    x0, xt = _aligned(x0, x_t, v)
    tt = _lead_time(t, x0.ndim - 1)
    if not np.all(np.isfinite(tt)):
        raise ModelError("non-finite time feature")
    xt = np.broadcast_to(xt, x0.shape)
    length = x0.shape[-1]
    unigram, bigram, touch = _nce_index(x0, xt, v)
    e = params[unigram].sum(axis=-1)
    e = e + np.where(touch, params[bigram], 0.0).sum(axis=-1)
    e = e / length + params[-2] * tt + params[-1]
    return _scalar(e)


def nce_features(x0: TokenSeq, x_t: TokenSeq, t: Time,
                 vocab_size: int) -> np.ndarray:
    """Материализованные признаки (..., D) для градиента по phi."""
    x0, xt = _aligned(x0, x_t, vocab_size)
    xt = np.broadcast_to(xt, x0.shape)
    tt = np.broadcast_to(_lead_time(t, x0.ndim - 1), x0.shape[:-1])
    length = x0.shape[-1]
    unigram, bigram, touch = _nce_index(x0, xt, vocab_size)
    feats = np.zeros(x0.shape[:-1] + (nce_dim(vocab_size),))
    lead = feats.reshape(-1, feats.shape[-1])
    rows = np.arange(lead.shape[0])
    uni = unigram.reshape(lead.shape[0], -1)
    bi = bigram.reshape(lead.shape[0], -1)
    tw = touch.reshape(lead.shape[0], -1).astype(np.float64)
    np.add.at(lead, (rows[:, None], uni), 1.0 / length)
    np.add.at(lead, (rows[:, None], bi), tw / length)
    lead[:, -2] = tt.reshape(-1)
    lead[:, -1] = 1.0
    if not np.all(np.isfinite(lead)):
        raise ModelError("non-finite NCE features")
    return lead.reshape(feats.shape)


# --- Модель энергии ------------------------------------------------------

@dataclass
class EnergyModel:
    """Энергия поверх замороженного денойзера.

    kind: ar | coar | nce | none. ar и coar держат ARModel, nce держит phi.
    """

    kind: str
    denoiser: object = None
    ar: Optional[ARModel] = None
    params: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.kind not in ("ar", "coar", "nce", "none"):
            raise DomainError(f"unknown energy kind: {self.kind!r}")
        if self.kind in ("ar", "coar") and self.ar is None:
            raise DomainError(f"{self.kind} energy needs an AR model")
        if self.kind == "nce" and self.params is None:
            raise DomainError("nce energy needs parameters")

    @classmethod
    def none(cls, denoiser=None) -> "EnergyModel":
        return cls("none", denoiser)

    @property
    def is_self_normalized(self) -> bool:
        """Z_phi(x_t) = 1 тождественно (coAR и нулевая энергия)."""
        return self.kind in ("coar", "none")

    def energy(self, x0: TokenSeq, x_t: TokenSeq, t: Time,
               out: Optional[DenoiserOutput] = None) -> Score:
        if self.kind == "ar":
            return energy_ar(self.ar, self.denoiser, x0, x_t, t, out)
        if self.kind == "coar":
            return energy_coar(self.ar, self.denoiser, x0, x_t, t, out)
        if self.kind == "nce":
            return energy_nce(self.params, x0, x_t, t)
        x0 = np.asarray(x0)
        return _scalar(np.zeros(x0.shape[:-1]))


def joint_logprob_unnormalized(energy: EnergyModel, denoiser, x0: TokenSeq,
                               x_t: TokenSeq, t: Time,
                               out: Optional[DenoiserOutput] = None,
                               ) -> Score:
    """log p_theta(x0|x_t) - E_phi(x0, x_t, t), т.е. совместная модель
    с точностью до log Z_phi(x_t)."""
    out = _predict(denoiser, x_t, t, out)
    score = out.log_prob(x0) - np.asarray(
        energy.energy(x0, x_t, t, out)
    )
    return _scalar(score)
