# -*- coding: utf-8 -*-
"""Точные переборные двойники формул на малых пространствах (V^L <= 5^6).

У двойников своя арифметика: log-sum-exp и softmax на math, без
помощников рабочих модулей. scipy.special нужен только verify-проверкам
на рабочей стороне сравнения.
"""
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate
from scipy.special import softmax

from .constants import ORACLE_MAX_STATES
from .diffusion import DenoiserOutput, TokenSeq, forward_sample, posterior
from .energy import (
    EnergyModel,
    carried_logprob,
    energy_ar,
    energy_coar,
    joint_logprob_unnormalized,
)
from .errors import (
    CapacityError,
    DomainError,
    EdlmError,
    InconsistentPairError,
)
from .evaluation import log_partition_bounds, nelbo_discrete_terms
from .logging_conf import get_logger
from .models import ARModel, FactorizedDenoiser
from .nce import make_batch, nce_init, nce_loss
from .rng import stream
from .sampler import SamplerConfig, sample_base, sample_edlm
from .schedule import NoiseSchedule, alpha, alpha_prime

log = get_logger("edlm.oracle")

VerifyResult = Tuple[str, bool, str]


# --- арифметика ----------------------------------------------------------

def _logsumexp(values: Sequence[float]) -> float:
    vals = [float(v) for v in values if v != -math.inf]
    if not vals:
        return -math.inf
    m = max(vals)
    return m + math.log(math.fsum(math.exp(v - m) for v in vals))


def _softmax(values: Sequence[float]) -> List[float]:
    z = _logsumexp(values)
    return [math.exp(v - z) if v != -math.inf else 0.0 for v in values]


def _log(p: float) -> float:
    return math.log(p) if p > 0 else -math.inf


# --- перебор -------------------------------------------------------------

def _check_capacity(count: int) -> None:
    if count > ORACLE_MAX_STATES:
        raise CapacityError(
            f"{count} states exceed the enumeration cap {ORACLE_MAX_STATES}"
        )


def enumerate_sequences(vocab_size: int, length: int) -> np.ndarray:
    """Все V^L последовательностей, лексикографически."""
    _check_capacity(vocab_size ** length)
    rows = list(itertools.product(range(vocab_size), repeat=length))
    return np.array(rows, dtype=np.int64).reshape(-1, length)


def compatible_completions(x_t: TokenSeq, vocab_size: int) -> np.ndarray:
    """Все x0, совпадающие с x_t на немаскированных позициях."""
    x_t = [int(v) for v in np.asarray(x_t).ravel()]
    slots = [range(vocab_size) if v == vocab_size else (v,) for v in x_t]
    _check_capacity(vocab_size ** sum(v == vocab_size for v in x_t))
    rows = list(itertools.product(*slots))
    return np.array(rows, dtype=np.int64).reshape(-1, len(x_t))


def mask_patterns(length: int) -> List[Tuple[bool, ...]]:
    return list(itertools.product((False, True), repeat=length))


@dataclass
class EnumeratedDistribution:
    """Носитель и точные вероятности; vocab_size задаёт id маски."""

    support: np.ndarray
    probs: np.ndarray
    vocab_size: int = 0

    def __post_init__(self) -> None:
        self.support = np.asarray(self.support, dtype=np.int64)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if not self.vocab_size:
            self.vocab_size = int(self.support.max(initial=0)) + 1
        if len(self.support) != len(self.probs):
            raise DomainError("support and probs differ in length")
        if np.any(self.probs < 0) or abs(math.fsum(self.probs) - 1) > 1e-12:
            raise DomainError("probabilities must sum to 1")

    @classmethod
    def from_weights(cls, support, weights,
                     vocab_size: int = 0) -> "EnumeratedDistribution":
        total = math.fsum(weights)
        if total <= 0:
            raise DomainError("weights have zero total mass")
        return cls(support, [w / total for w in weights], vocab_size)

    @classmethod
    def from_dict(cls, table: Dict[Tuple[int, ...], float],
                  vocab_size: int = 0) -> "EnumeratedDistribution":
        keys = sorted(table)
        return cls.from_weights(np.array(keys), [table[k] for k in keys],
                                vocab_size)

    @classmethod
    def from_ar(cls, ar: ARModel, length: int) -> "EnumeratedDistribution":
        """p_AR(x0) = prod_i p(x0^i | x0^{<i}) по всем V^L."""
        support = enumerate_sequences(ar.vocab_size, length)
        probs = []
        for row in support:
            p = 1.0
            for i, tok in enumerate(row):
                p *= ar.conditional(row[:i], tok)
            probs.append(p)
        return cls.from_weights(support, probs, ar.vocab_size)

    @property
    def length(self) -> int:
        return int(self.support.shape[1])

    def prob_of(self, seq: Sequence[int]) -> float:
        hit = np.all(self.support == np.asarray(seq), axis=1)
        return float(self.probs[hit].sum())

    def as_dict(self) -> Dict[Tuple[int, ...], float]:
        return {tuple(int(v) for v in row): float(p)
                for row, p in zip(self.support, self.probs)}


# --- постериоры ----------------------------------------------------------

def exact_posterior_x0(x_t: TokenSeq, prior: EnumeratedDistribution,
                       t: float, schedule: NoiseSchedule,
                       ) -> EnumeratedDistribution:
    """q(x0|x_t) пропорционально q(x_t|x0) prior(x0)."""
    _check_capacity(len(prior.support))
    x_t = [int(v) for v in np.asarray(x_t).ravel()]
    mask = prior.vocab_size
    a_t = alpha(schedule, t)
    weights = []
    for row, p in zip(prior.support, prior.probs):
        like = 1.0
        for xt_i, x0_i in zip(x_t, row):
            if xt_i == int(x0_i):
                like *= a_t
            elif xt_i >= mask:
                like *= 1.0 - a_t
            else:
                like = 0.0
                break
        weights.append(like * float(p))
    return EnumeratedDistribution.from_weights(prior.support, weights,
                                               prior.vocab_size)


def exact_general_posterior(x_t: TokenSeq, x0: TokenSeq, s: float,
                            t: float, pi: Sequence[float],
                            schedule: NoiseSchedule) -> np.ndarray:
    """Общая форма q(x_s | x_t, x0) для произвольного pi над V+1 состояниями.

    [a_ts x_t + (1 - a_ts) 1 pi^T x_t] * [a_s x0 + (1 - a_s) pi]
    / (a_t x_t^T x0 + (1 - a_t) x_t^T pi)

    Возвращает (L, V+1): последняя колонка это маска.
    """
    pi = np.asarray(pi, dtype=np.float64)
    if pi.ndim != 1 or np.any(pi < 0) or abs(math.fsum(pi) - 1.0) > 1e-12:
        raise DomainError("pi must be a probability vector")
    if s > t:
        raise DomainError(f"need s <= t, got s={s}, t={t}")
    states = pi.size
    a_s, a_t = alpha(schedule, s), alpha(schedule, t)
    a_ts = a_t / a_s
    eye = np.eye(states)
    out = []
    for xt_i, x0_i in zip(np.asarray(x_t).ravel(), np.asarray(x0).ravel()):
        xt_vec, x0_vec = eye[int(xt_i)], eye[int(x0_i)]
        left = a_ts * xt_vec + (1.0 - a_ts) * pi[int(xt_i)]
        right = a_s * x0_vec + (1.0 - a_s) * pi
        den = a_t * float(xt_vec @ x0_vec) + (1.0 - a_t) * pi[int(xt_i)]
        if den <= 0:
            raise InconsistentPairError(
                f"x_t={int(xt_i)} is unreachable from x0={int(x0_i)}"
            )
        out.append(left * right / den)
    return np.array(out)


def _denoiser_logprob(denoiser, x0: np.ndarray, x_t: np.ndarray,
                      t: float) -> float:
    """log p_theta(x0|x_t): свой log-softmax логитов, если они есть."""
    v = denoiser.vocab_size
    masked = [i for i, tok in enumerate(x_t) if int(tok) == v]
    if hasattr(denoiser, "logits"):
        logits = np.asarray(denoiser.logits(np.asarray(x_t), t))
        total = 0.0
        for i in masked:
            total += float(logits[i, int(x0[i])]) - _logsumexp(logits[i])
        return total
    probs = denoiser.predict(np.asarray(x_t), t).probs
    return math.fsum(_log(float(probs[i, int(x0[i])])) for i in masked)


def _joint_scores(energy, denoiser, x_t, t):
    """Совместимые x0 и их log p_theta - E; нулевая масса p_theta
    отбрасывается."""
    support = compatible_completions(x_t, denoiser.vocab_size)
    x_t = np.asarray(x_t, dtype=np.int64)
    rows, scores = [], []
    for row in support:
        lp = _denoiser_logprob(denoiser, row, x_t, t)
        if lp == -math.inf:
            continue
        rows.append(row)
        scores.append(lp - float(energy.energy(row, x_t, t)))
    return np.array(rows, dtype=np.int64).reshape(-1, len(x_t)), scores


def exact_partition(energy, denoiser, x_t: TokenSeq, t: float) -> float:
    """log Z_phi(x_t) = log sum_x0 p_theta(x0|x_t) exp(-E) перебором."""
    _, scores = _joint_scores(energy, denoiser, x_t, t)
    return _logsumexp(scores)


def exact_joint_posterior(energy, denoiser, x_t: TokenSeq,
                          t: float) -> EnumeratedDistribution:
    """p_theta(x0|x_t) exp(-E) / Z, нормированная перебором."""
    rows, scores = _joint_scores(energy, denoiser, x_t, t)
    return EnumeratedDistribution(rows, _softmax(scores),
                                  denoiser.vocab_size)


def exact_ar_posterior(ar: ARModel, x_t: TokenSeq) -> EnumeratedDistribution:
    """p_AR(x0 | x_t) = p_AR(x0) / sum по совместимым."""
    support = compatible_completions(x_t, ar.vocab_size)
    logs = []
    for row in support:
        logs.append(math.fsum(_log(ar.conditional(row[:i], tok))
                              for i, tok in enumerate(row)))
    return EnumeratedDistribution(support, _softmax(logs), ar.vocab_size)


# --- NELBO ---------------------------------------------------------------

def _masked_view(x0: np.ndarray, pattern, vocab_size: int) -> np.ndarray:
    return np.where(np.array(pattern), vocab_size, x0)


def _pattern_prob(pattern, a_t: float) -> float:
    k = sum(pattern)
    return (1.0 - a_t) ** k * a_t ** (len(pattern) - k)


def _expected_term(energy, denoiser, x0: np.ndarray, t: float,
                   schedule: NoiseSchedule) -> float:
    """E_{x_t ~ q(.|x0)} [-log p_theta + E + log Z] точно."""
    a_t = alpha(schedule, t)
    v = denoiser.vocab_size
    total = []
    for pattern in mask_patterns(len(x0)):
        x_t = _masked_view(x0, pattern, v)
        lp = _denoiser_logprob(denoiser, x0, x_t, t)
        e = float(energy.energy(x0, x_t, t))
        log_z = exact_partition(energy, denoiser, x_t, t)
        total.append(_pattern_prob(pattern, a_t) * (-lp + e + log_z))
    return math.fsum(total)


def exact_nelbo_discrete(energy, denoiser, x0: TokenSeq,
                         schedule: NoiseSchedule, steps: int) -> float:
    """sum_i (a_s - a_t)/(1 - a_t) E_q[...] при t_i = i/T, s_i = (i-1)/T."""
    if steps < 1:
        raise DomainError(f"T must be >= 1, got {steps}")
    x0 = np.asarray(x0, dtype=np.int64)
    _check_capacity(2 ** len(x0) * denoiser.vocab_size ** len(x0))
    parts = []
    for i in range(1, steps + 1):
        t, s = i / steps, (i - 1) / steps
        a_t, a_s = alpha(schedule, t), alpha(schedule, s)
        parts.append((a_s - a_t) / (1.0 - a_t)
                     * _expected_term(energy, denoiser, x0, t, schedule))
    return math.fsum(parts)


def _clamp_points(schedule: NoiseSchedule) -> List[float]:
    c = schedule.power if schedule.kind == "loglinear" else 1.0
    return [schedule.eps ** (1.0 / c), (1.0 - schedule.eps) ** (1.0 / c)]


def exact_nelbo_continuous(energy, denoiser, x0: TokenSeq,
                           schedule: NoiseSchedule) -> float:
    """Интеграл по t в [0, 1] от -a'_t/(1 - a_t) E_q[...] квадратурой."""
    x0 = np.asarray(x0, dtype=np.int64)
    _check_capacity(2 ** len(x0) * denoiser.vocab_size ** len(x0))

    def integrand(t: float) -> float:
        w = -alpha_prime(schedule, t) / (1.0 - alpha(schedule, t))
        return w * _expected_term(energy, denoiser, x0, t, schedule)

    value, err = integrate.quad(integrand, 0.0, 1.0,
                                points=_clamp_points(schedule), limit=200)
    log.debug("quad nelbo=%.10f err=%.2e", value, err)
    return float(value)


# --- точный факторизованный денойзер -------------------------------------

class PosteriorMarginalDenoiser:
    """Маргиналы q(x0^i | x_t) по перечисленному априорному распределению.

    Лучший факторизованный денойзер для prior; для дельта-prior это дельта.
    Несовместимые с носителем x_t получают равномерные строки.
    """

    def __init__(self, prior: EnumeratedDistribution,
                 vocab_size: int) -> None:
        _check_capacity(len(prior.support))
        self.prior = prior
        self.vocab_size = vocab_size

    def predict(self, x_t: TokenSeq, t) -> DenoiserOutput:
        v = self.vocab_size
        x_t = np.asarray(x_t, dtype=np.int64)
        flat = x_t.reshape(-1, x_t.shape[-1])
        sup = self.prior.support
        ok = np.all((flat[:, None, :] == v) | (sup[None] == flat[:, None, :]),
                    axis=-1)
        w = ok * self.prior.probs
        total = w.sum(axis=1)
        probs = np.einsum("bm,mlv->blv", w, np.eye(v)[sup])
        seen = total > 0
        probs[seen] /= total[seen, None, None]
        probs[~seen] = 1.0 / v
        return DenoiserOutput.from_probs(probs.reshape(x_t.shape + (v,)),
                                         x_t, v)


# --- verify --------------------------------------------------------------

def _check(name: str, fn: Callable[[], Tuple[bool, str]]) -> VerifyResult:
    try:
        ok, detail = fn()
    except EdlmError as exc:
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    log.info("verify %-28s %s %s", name, "PASS" if ok else "FAIL", detail)
    return name, ok, detail


def random_ar(rng: np.random.Generator, vocab_size: int,
              order: int = 1) -> ARModel:
    """Табличная AR со случайными условными строками (Дирихле)."""
    rows = rng.dirichlet(np.ones(vocab_size), size=(vocab_size + 1) ** order)
    return ARModel.from_conditionals(rows, order, vocab_size)


def random_denoiser(rng: np.random.Generator, vocab_size: int,
                    scale: float = 0.5):
    den = FactorizedDenoiser(vocab_size, radius=1, architecture="linear")
    den.set_flat(rng.normal(0.0, scale, den.get_flat().size))
    return den


def _all_masked_views(vocab_size: int, length: int) -> np.ndarray:
    return enumerate_sequences(vocab_size + 1, length)


def _suite(seed: int) -> Dict[str, Callable[[], Tuple[bool, str]]]:
    v, length, t_mid = 3, 4, 0.5
    schedule = NoiseSchedule()
    setup = stream(seed, "verify/models")
    ar = random_ar(setup, v)
    den = random_denoiser(setup, v)

    def posterior_general_form():
        rng = stream(seed, "verify/posterior")
        pi = np.eye(v + 1)[v]
        worst = 0.0
        for _ in range(1000):
            x0 = rng.integers(v, size=length)
            s, t = np.sort(rng.random(2))
            x_t = forward_sample(x0, t, schedule, rng, v)
            step = posterior(x_t, x0, s, t, schedule, v)
            prod = np.zeros((length, v + 1))
            prod[np.arange(length), step.token] += step.p_token
            prod[:, v] += step.p_mask
            gen = exact_general_posterior(x_t, x0, s, t, pi, schedule)
            worst = max(worst, float(np.abs(prod - gen).max()))
        return worst <= 1e-12, f"max_err={worst:.2e}"

    def ar_joint_matches_ar_posterior():
        energy = EnergyModel("ar", den, ar)
        worst = 0.0
        for x_t in _all_masked_views(v, length):
            exact = exact_ar_posterior(ar, x_t)
            scores = joint_logprob_unnormalized(energy, den, exact.support,
                                                x_t, t_mid)
            got = softmax(np.atleast_1d(scores))
            worst = max(worst, float(np.abs(got - exact.probs).max()))
        return worst <= 1e-10, f"max_err={worst:.2e}"

    def coar_self_normalized():
        rng = stream(seed, "verify/coar")
        energy = EnergyModel("coar", den, ar)
        worst = 0.0
        for _ in range(100):
            x_t = rng.integers(v + 1, size=length)
            worst = max(worst,
                        abs(exact_partition(energy, den, x_t, t_mid)))
        return worst <= 1e-8, f"max_abs_log_z={worst:.2e}"

    def carry_over_identity():
        rng = stream(seed, "verify/carry")
        worst = 0.0
        for _ in range(200):
            x0 = rng.integers(v, size=length)
            x_t = forward_sample(x0, t_mid, schedule, rng, v)
            diff = energy_coar(ar, den, x0, x_t, t_mid) \
                - energy_ar(ar, den, x0, x_t, t_mid) \
                - carried_logprob(ar, x0, x_t)
            worst = max(worst, abs(diff))
        return worst <= 1e-10, f"max_err={worst:.2e}"

    def partition_bracket():
        rng = stream(seed, "verify/bracket")
        energy = EnergyModel("ar", den, ar)
        x_t = np.array([v, 0, v, v])
        exact = exact_partition(energy, den, x_t, t_mid)
        bounds = [log_partition_bounds(energy, den, x_t, t_mid, 256, rng)
                  for _ in range(100)]
        lo = np.array([b.lower for b in bounds])
        hi = np.array([b.upper for b in bounds])
        se_lo = lo.std(ddof=1) / np.sqrt(len(lo))
        se_hi = hi.std(ddof=1) / np.sqrt(len(hi))
        ok = bool(np.all(lo <= hi)) \
            and lo.mean() <= exact + 4 * se_lo \
            and hi.mean() >= exact - 4 * se_hi
        return ok, (f"lower={lo.mean():.5f} exact={exact:.5f} "
                    f"upper={hi.mean():.5f}")

    def sampler_reductions():
        base_cfg = SamplerConfig(num_steps=6, importance_size=1, window=1.0,
                                 seq_len=length)
        zero_w = SamplerConfig(num_steps=6, importance_size=4, window=0.0,
                               seq_len=length)
        energy = EnergyModel("ar", den, ar)
        ref = sample_base(den, base_cfg, schedule,
                          stream(seed, "verify/sample"), 100)
        k1 = sample_edlm(den, energy, base_cfg, schedule,
                         stream(seed, "verify/sample"), 100)
        w0 = sample_edlm(den, energy, zero_w, schedule,
                         stream(seed, "verify/sample"), 100)
        ok = np.array_equal(ref, k1) and np.array_equal(ref, w0)
        return ok, "k=1 and w=0 match the base chain"

    def nce_loss_at_zero():
        batch = make_batch(den, enumerate_sequences(v, length), schedule,
                           stream(seed, "verify/nce"), 16)
        loss, _ = nce_loss(nce_init(v), batch)
        err = abs(loss - 2 * math.log(2))
        return err <= 1e-12, f"err={err:.2e}"

    def coar_nelbo_exact():
        rng = stream(seed, "verify/nelbo")
        energy = EnergyModel("coar", den, ar)
        x0 = np.array([0, 1, 2, 1])
        exact = exact_nelbo_discrete(energy, den, x0, schedule, 8)
        reps = np.array([
            nelbo_discrete_terms(energy, den, x0, schedule, 8, 2, rng).sum()
            for _ in range(400)
        ])
        se = reps.std(ddof=1) / np.sqrt(len(reps))
        ok = abs(reps.mean() - exact) <= 4 * se
        return ok, f"mc={reps.mean():.5f} exact={exact:.5f} se={se:.5f}"

    return {
        "posterior_general_form": posterior_general_form,
        "ar_joint_matches_ar_posterior": ar_joint_matches_ar_posterior,
        "coar_self_normalized": coar_self_normalized,
        "carry_over_identity": carry_over_identity,
        "partition_bracket": partition_bracket,
        "sampler_reductions": sampler_reductions,
        "nce_loss_at_zero": nce_loss_at_zero,
        "coar_nelbo_exact": coar_nelbo_exact,
    }


def run_verify(seed: int = 0,
               checks: Optional[Sequence[str]] = None) -> List[VerifyResult]:
    """Точные проверки на V=3, L=4: (имя, прошла ли, детали)."""
    suite = _suite(seed)
    names = list(checks) if checks else list(suite)
    unknown = [n for n in names if n not in suite]
    if unknown:
        raise DomainError(f"unknown verify checks: {unknown}")
    return [_check(name, suite[name]) for name in names]
