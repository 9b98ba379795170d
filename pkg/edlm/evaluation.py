# -*- coding: utf-8 -*-
"""Оценки правдоподобия, границы log Z и метрики (BPC, PPL, Gen PPL)."""
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .constants import (
    DEFAULT_BOUNDS_N,
    DEFAULT_DISCRETE_T,
    DEFAULT_ESS_VARIANT,
    DEFAULT_ESTIMATOR,
    DEFAULT_MC_SAMPLES,
    DIAGNOSTIC_NEGATIVES,
    DIAGNOSTIC_TIMES,
    ESTIMATORS,
)
from .diffusion import TokenSeq, as_tokens, factorized_predict, forward_sample
from .errors import DataError, DomainError, ModelError, PreconditionError
from .logging_conf import get_logger
from .models import ARModel
from .rng import stream
from .schedule import NoiseSchedule, alpha, alpha_prime

log = get_logger("edlm.evaluation")

LN2 = math.log(2.0)


@dataclass(frozen=True)
class BoundPair:
    """Нижняя log Z_n и верхняя (2n-1) log Z_n - 2(n-1) mean log Z_{n-1}."""

    lower: float
    upper: float
    n: int
    variance: float


@dataclass(frozen=True)
class MetricsRow:
    unit: str
    tokens: int
    nelbo: float
    bpc: float
    ppl: float
    gen_ppl: float = float("nan")
    entropy: float = float("nan")
    ess: float = float("nan")

    @classmethod
    def from_nelbo(cls, unit: str, nelbo_total: float,
                   tokens: int) -> "MetricsRow":
        per_token = nelbo_total / tokens
        return cls(unit, tokens, per_token, per_token / LN2,
                   math.exp(per_token))

    def as_dict(self) -> Dict[str, object]:
        return asdict(self)


@dataclass(frozen=True)
class EvalConfig:
    estimator: str = DEFAULT_ESTIMATOR
    mc_samples: int = DEFAULT_MC_SAMPLES
    discrete_steps: int = DEFAULT_DISCRETE_T
    bounds_n: int = DEFAULT_BOUNDS_N
    stratified: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.estimator not in ESTIMATORS:
            raise DomainError(f"unknown estimator: {self.estimator!r}")


# --- ESS -----------------------------------------------------------------

def ess(energies, variant: str = DEFAULT_ESS_VARIANT):
    """Эффективный размер выборки по последней оси.

    weights:  w = softmax(-e), ESS = 1 / sum w^2 в [1, k]
    energies: e_hat = e / sum e, ESS = (sum e_hat)^2 / sum e_hat^2
    """
    e = np.asarray(energies, dtype=np.float64)
    if e.ndim == 0 or e.shape[-1] == 0:
        raise DomainError("ess needs a non-empty energy array")
    if variant == "weights":
        a = -e - np.max(-e, axis=-1, keepdims=True)
        w = np.exp(a)
        w = w / w.sum(axis=-1, keepdims=True)
        out = 1.0 / np.sum(w * w, axis=-1)
    elif variant == "energies":
        total = e.sum(axis=-1, keepdims=True)
        if np.any(total == 0):
            raise DomainError("energies sum to zero")
        eh = e / total
        out = eh.sum(axis=-1) ** 2 / np.sum(eh * eh, axis=-1)
    else:
        raise DomainError(f"unknown ESS variant: {variant!r}")
    return float(out) if np.ndim(out) == 0 else out


# --- Границы log Z -------------------------------------------------------

def partition_bounds(energies: np.ndarray) -> BoundPair:
    """Границы по готовым энергиям n кандидатов x0 ~ p_theta(.|x_t)."""
    e = np.asarray(energies, dtype=np.float64).ravel()
    n = e.size
    if n < 2:
        raise DomainError(f"partition bounds need n >= 2, got {n}")
    if np.any(np.isnan(e)) or np.any(e == -np.inf):
        raise ModelError("NaN or -inf energy in partition estimate")
    a = -e
    lower = float(logsumexp(a) - math.log(n))
    keep = 1.0 - np.eye(n)
    loo = logsumexp(np.broadcast_to(a, (n, n)), b=keep, axis=1) \
        - math.log(n - 1)
    mean_loo = float(loo.mean())
    if not (math.isfinite(lower) and math.isfinite(mean_loo)):
        raise ModelError("partition estimate is not finite")
    upper = (2 * n - 1) * lower - 2 * (n - 1) * mean_loo
    variance = float((n - 1) / n * np.sum((loo - mean_loo) ** 2))
    # по неравенству Йенсена mean_loo <= lower; гасим ошибку округления
    upper = max(upper, lower)
    return BoundPair(lower, float(upper), n, variance)


def log_partition_bounds(energy, denoiser, x_t: TokenSeq, t: float, n: int,
                         rng: np.random.Generator, out=None) -> BoundPair:
    """n кандидатов x0 ~ p_theta(.|x_t) и границы log Z_phi(x_t)."""
    if n < 2:
        raise DomainError(f"partition bounds need n >= 2, got {n}")
    x_t = as_tokens(x_t, denoiser.vocab_size)
    if x_t.ndim != 1:
        raise DomainError("log_partition_bounds takes one sequence")
    out = out if out is not None else factorized_predict(denoiser, x_t, t)
    cands = out.sample(rng, n)
    e = energy.energy(cands, x_t, t, out)
    return partition_bounds(e)


# --- NELBO ---------------------------------------------------------------

def _term(energy, denoiser, x0, x_t, t, partition_n, rng) -> float:
    """-log p_theta(x0|x_t) + E + log Z_hat (верхняя оценка)."""
    out = factorized_predict(denoiser, x_t, t)
    nll = -float(out.log_prob(x0))
    e = float(energy.energy(x0, x_t, t, out))
    log_z = 0.0
    if not energy.is_self_normalized:
        log_z = log_partition_bounds(energy, denoiser, x_t, t, partition_n,
                                     rng, out).upper
    return nll + e + log_z


def nelbo_discrete_terms(energy, denoiser, x0: TokenSeq,
                         schedule: NoiseSchedule, steps: int,
                         partition_n: int, rng: np.random.Generator,
                         ) -> np.ndarray:
    """Слагаемые (alpha_s - alpha_t)/(1 - alpha_t) * [...] по t_i = i/T."""
    if steps < 1:
        raise DomainError(f"T must be >= 1, got {steps}")
    x0 = as_tokens(x0, denoiser.vocab_size, allow_mask=False)
    terms = np.zeros(steps)
    for i in range(1, steps + 1):
        t, s = i / steps, (i - 1) / steps
        a_t, a_s = alpha(schedule, t), alpha(schedule, s)
        weight = (a_s - a_t) / (1.0 - a_t)
        x_t = forward_sample(x0, t, schedule, rng, denoiser.vocab_size)
        terms[i - 1] = weight * _term(energy, denoiser, x0, x_t, t,
                                      partition_n, rng)
    return terms


def nelbo_discrete(energy, denoiser, x0: TokenSeq, schedule: NoiseSchedule,
                   steps: int = DEFAULT_DISCRETE_T,
                   partition_n: int = DEFAULT_BOUNDS_N,
                   rng: Optional[np.random.Generator] = None) -> float:
    """Дискретный NELBO (наты на последовательность), одна реализация x_t
    на слагаемое."""
    rng = rng if rng is not None else np.random.default_rng(0)
    return float(nelbo_discrete_terms(energy, denoiser, x0, schedule, steps,
                                      partition_n, rng).sum())


def _times(mc_samples: int, rng: np.random.Generator,
           stratified: bool) -> np.ndarray:
    u = rng.random(mc_samples)
    if stratified:
        return (np.arange(mc_samples) + u) / mc_samples
    return u


def nelbo_continuous_terms(energy, denoiser, x0: TokenSeq,
                           schedule: NoiseSchedule, mc_samples: int,
                           partition_n: int, rng: np.random.Generator,
                           stratified: bool = True) -> np.ndarray:
    """-alpha'_t/(1 - alpha_t) * [...] в mc_samples точках t."""
    if mc_samples < 1:
        raise DomainError(f"mc_samples must be >= 1, got {mc_samples}")
    x0 = as_tokens(x0, denoiser.vocab_size, allow_mask=False)
    ts = _times(mc_samples, rng, stratified)
    terms = np.zeros(mc_samples)
    for j, t in enumerate(ts):
        t = float(t)
        weight = -alpha_prime(schedule, t) / (1.0 - alpha(schedule, t))
        x_t = forward_sample(x0, t, schedule, rng, denoiser.vocab_size)
        terms[j] = weight * _term(energy, denoiser, x0, x_t, t,
                                  partition_n, rng)
    return terms


def nelbo_continuous(energy, denoiser, x0: TokenSeq,
                     schedule: NoiseSchedule,
                     mc_samples: int = DEFAULT_MC_SAMPLES,
                     partition_n: int = DEFAULT_BOUNDS_N,
                     rng: Optional[np.random.Generator] = None,
                     stratified: bool = True) -> float:
    rng = rng if rng is not None else np.random.default_rng(0)
    return float(nelbo_continuous_terms(energy, denoiser, x0, schedule,
                                        mc_samples, partition_n, rng,
                                        stratified).mean())


def sequence_nelbo(energy, denoiser, x0: TokenSeq, schedule: NoiseSchedule,
                   cfg: EvalConfig, rng: np.random.Generator) -> float:
    if cfg.estimator == "discrete":
        return nelbo_discrete(energy, denoiser, x0, schedule,
                              cfg.discrete_steps, cfg.bounds_n, rng)
    return nelbo_continuous(energy, denoiser, x0, schedule, cfg.mc_samples,
                            cfg.bounds_n, rng, cfg.stratified)


# --- Метрики корпуса -----------------------------------------------------

def corpus_metrics(energy, denoiser, test_corpus: Sequence[np.ndarray],
                   schedule: NoiseSchedule,
                   cfg: EvalConfig) -> List[MetricsRow]:
    """Строка на документ и итоговая строка "all" (взвешена по токенам).

    Документ i берёт свой подпоток "eval/doc-i".
    """
    docs = [np.asarray(d, dtype=np.int64) for d in test_corpus]
    if not docs or not any(d.size for d in docs):
        raise DataError("empty evaluation corpus")
    rows: List[MetricsRow] = []
    total, tokens = 0.0, 0
    for i, doc in enumerate(docs):
        if not doc.size:
            continue
        rng = stream(cfg.seed, f"eval/doc-{i}")
        value = sequence_nelbo(energy, denoiser, doc, schedule, cfg, rng)
        rows.append(MetricsRow.from_nelbo(f"doc-{i}", value, doc.size))
        total += value
        tokens += doc.size
    rows.append(MetricsRow.from_nelbo("all", total, tokens))
    log.info("eval: docs=%s tokens=%s nelbo/token=%.5f bpc=%.5f",
             len(rows) - 1, tokens, rows[-1].nelbo, rows[-1].bpc)
    return rows


def _check_samples(samples, oracle: ARModel) -> np.ndarray:
    arr = np.asarray(samples, dtype=np.int64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.size == 0:
        raise DataError("no samples to score")
    try:
        return as_tokens(arr, oracle.vocab_size, allow_mask=False)
    except PreconditionError as exc:
        raise DataError(f"bad generated samples: {exc}") from exc


def sample_nll(samples, oracle: ARModel) -> np.ndarray:
    """NLL оракула на токен для каждой выборки."""
    arr = _check_samples(samples, oracle)
    return -oracle.token_logprobs(arr).mean(axis=-1)


def unigram_entropy(samples, vocab_size: int) -> float:
    counts = np.bincount(np.asarray(samples).ravel(), minlength=vocab_size)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def generative_metrics(samples, oracle: ARModel) -> Tuple[float, float]:
    """(gen_ppl, entropy): exp средней NLL оракула на токен и энтропия
    объединённого униграммного распределения выборок (наты)."""
    arr = _check_samples(samples, oracle)
    nll = -oracle.token_logprobs(arr)
    return (float(np.exp(nll.mean())),
            unigram_entropy(arr, oracle.vocab_size))


# --- Диагностика энергии -------------------------------------------------

def energy_profile(energy, denoiser, x0: TokenSeq, schedule: NoiseSchedule,
                   rng: np.random.Generator,
                   times: Sequence[float] = DIAGNOSTIC_TIMES,
                   negatives: int = DIAGNOSTIC_NEGATIVES,
                   ess_variant: str = DEFAULT_ESS_VARIANT,
                   ) -> List[Dict[str, float]]:
    """Энергия позитива и статистика негативов по сетке t."""
    x0 = as_tokens(x0, denoiser.vocab_size, allow_mask=False)
    rows = []
    for t in times:
        x_t = forward_sample(x0, t, schedule, rng, denoiser.vocab_size)
        out = factorized_predict(denoiser, x_t, t)
        negs = out.sample(rng, negatives)
        e_neg = np.asarray(energy.energy(negs, x_t, t, out))
        e_pos = float(energy.energy(x0, x_t, t, out))
        rows.append({
            "t": float(t),
            "positive": e_pos,
            "negative_mean": float(e_neg.mean()),
            "negative_min": float(e_neg.min()),
            "negative_max": float(e_neg.max()),
            "ess": float(ess(e_neg, ess_variant)),
        })
    return rows
