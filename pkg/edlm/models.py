# -*- coding: utf-8 -*-
"""Модели: n-граммная AR-модель и факторизованный денойзер mu_theta."""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import log_softmax, softmax

from .constants import (
    DEFAULT_AR_ORDER,
    DEFAULT_AR_SMOOTHING,
    DEFAULT_BATCH_SIZE,
    DEFAULT_CONTEXT_RADIUS,
    DEFAULT_DENOISER_ARCH,
    DEFAULT_HIDDEN,
    DEFAULT_MAX_GRAD_NORM,
    DENOISER_ARCHS,
    DIVERGENCE_LOSS,
    LOG_EVERY,
)
from .diffusion import DenoiserOutput, TokenSeq, as_tokens, forward_sample
from .errors import DataError, DomainError, ModelError, TrainingError
from .logging_conf import get_logger
from .schedule import NoiseSchedule, Time, alpha, alpha_prime

log = get_logger("edlm.models")

Corpus = Union[np.ndarray, Sequence[np.ndarray]]

__all__ = [
    "ARModel",
    "DenoiserOutput",
    "FactorizedDenoiser",
    "UniformDenoiser",
    "ar_fit",
    "ar_logprob",
    "denoiser_predict",
    "denoiser_train",
    "masked_cross_entropy",
]


# --- AR ------------------------------------------------------------------

@dataclass
class ARModel:
    """n-граммная модель: order токенов контекста, слева BOS (id V).

    counts и log_probs имеют форму ((V+1)**order, V); строка на контекст.
    """

    order: int
    vocab_size: int
    smoothing: float
    counts: np.ndarray
    log_probs: np.ndarray = field(repr=False)

    @property
    def bos(self) -> int:
        return self.vocab_size

    @classmethod
    def from_counts(cls, counts: np.ndarray, order: int, vocab_size: int,
                    smoothing: float) -> "ARModel":
        counts = np.asarray(counts, dtype=np.float64)
        totals = counts.sum(axis=1, keepdims=True) + smoothing * vocab_size
        with np.errstate(divide="ignore", invalid="ignore"):
            probs = (counts + smoothing) / totals
        # невиданный контекст при k=0 -> равномерное распределение
        unseen = totals[:, 0] <= 0
        probs[unseen] = 1.0 / vocab_size
        with np.errstate(divide="ignore"):
            log_probs = np.log(probs)
        return cls(order, vocab_size, float(smoothing), counts, log_probs)

    @classmethod
    def from_conditionals(cls, probs: np.ndarray, order: int,
                          vocab_size: int) -> "ARModel":
        """Точная табличная модель из готовых условных вероятностей."""
        probs = np.asarray(probs, dtype=np.float64)
        expected = ((vocab_size + 1) ** order, vocab_size)
        if probs.shape != expected:
            raise DomainError(f"table shape {probs.shape} != {expected}")
        if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-9):
            raise ModelError("conditional rows must sum to 1")
        with np.errstate(divide="ignore"):
            log_probs = np.log(probs)
        return cls(order, vocab_size, 0.0, probs.copy(), log_probs)

    def context_index(self, x: TokenSeq) -> np.ndarray:
        """Индекс контекста для каждой позиции: (..., L) -> (..., L)."""
        x = np.asarray(x, dtype=np.int64)
        pad = np.full(x.shape[:-1] + (self.order,), self.bos, np.int64)
        padded = np.concatenate([pad, x[..., :-1]], axis=-1)
        windows = sliding_window_view(padded, self.order, axis=-1)
        base = self.vocab_size + 1
        weights = base ** np.arange(self.order - 1, -1, -1, dtype=np.int64)
        return (windows * weights).sum(axis=-1)

    def token_logprobs(self, x: TokenSeq) -> np.ndarray:
        """log p(x^i | x^{<i}) по позициям."""
        x = as_tokens(x, self.vocab_size, allow_mask=False)
        return self.log_probs[self.context_index(x), x]

    def conditional(self, context: Sequence[int], token: int) -> float:
        """p(token | context); короткий контекст дополняется BOS слева."""
        ctx = list(context)[-self.order:] if self.order else []
        ctx = [self.bos] * (self.order - len(ctx)) + ctx
        idx = 0
        for c in ctx:
            idx = idx * (self.vocab_size + 1) + int(c)
        return float(np.exp(self.log_probs[idx, int(token)]))


def _documents(corpus: Corpus) -> List[np.ndarray]:
    if isinstance(corpus, np.ndarray) and corpus.ndim == 1:
        return [corpus]
    return [np.asarray(doc, dtype=np.int64) for doc in corpus]


def ar_fit(corpus: Corpus, order: int = DEFAULT_AR_ORDER,
           smoothing: float = DEFAULT_AR_SMOOTHING,
           vocab_size: Optional[int] = None) -> ARModel:
    """add-k n-граммы; каждый документ начинается с BOS-контекста."""
    if order < 1:
        raise DomainError(f"order must be >= 1, got {order}")
    if smoothing < 0:
        raise DomainError(f"smoothing must be >= 0, got {smoothing}")
    docs = [d for d in _documents(corpus) if d.size]
    if not docs:
        raise DataError("empty corpus")
    if vocab_size is None:
        vocab_size = int(max(d.max() for d in docs)) + 1
    counts = np.zeros(((vocab_size + 1) ** order, vocab_size))
    shell = ARModel(order, vocab_size, smoothing, counts, counts)
    for doc in docs:
        doc = as_tokens(doc, vocab_size, allow_mask=False)
        np.add.at(counts, (shell.context_index(doc), doc), 1.0)
    model = ARModel.from_counts(counts, order, vocab_size, smoothing)
    log.info("ar fit: order=%s k=%s V=%s docs=%s tokens=%s", order,
             smoothing, vocab_size, len(docs), sum(d.size for d in docs))
    return model


def ar_logprob(model: ARModel, x0: TokenSeq) -> Union[float, np.ndarray]:
    """Точный sum_i log p(x0^i | x0^{<i}); форма (..., L) -> (...)."""
    lp = model.token_logprobs(x0).sum(axis=-1)
    return float(lp) if np.ndim(lp) == 0 else lp


# --- Денойзеры -----------------------------------------------------------

class UniformDenoiser:
    """Равномерный mu_theta (нулевые логиты)."""

    def __init__(self, vocab_size: int) -> None:
        self.vocab_size = vocab_size

    def logits(self, x_t: TokenSeq, t: Time) -> np.ndarray:
        x_t = np.asarray(x_t)
        return np.zeros(x_t.shape + (self.vocab_size,))

    def predict(self, x_t: TokenSeq, t: Time) -> DenoiserOutput:
        return DenoiserOutput.from_logits(self.logits(x_t, t), x_t,
                                          self.vocab_size)


class FactorizedDenoiser:
    """f_theta: признаки окна радиуса r вокруг позиции + скаляр t.

    linear: logits_i = sum_d W[d, x_{i+d}] + t*u + b
    mlp:    h_i = tanh(sum_d E[d, x_{i+d}] + t*a + c), logits_i = h_i Wo + bo

    Алфавит окна: токены 0..V-1, маска V, выход за край V+1.
    """

    def __init__(self, vocab_size: int,
                 radius: int = DEFAULT_CONTEXT_RADIUS,
                 architecture: str = DEFAULT_DENOISER_ARCH,
                 hidden: int = DEFAULT_HIDDEN,
                 params: Optional[Dict[str, np.ndarray]] = None) -> None:
        if architecture not in DENOISER_ARCHS:
            raise DomainError(f"unknown architecture: {architecture!r}")
        if radius < 0:
            raise DomainError(f"radius must be >= 0, got {radius}")
        self.vocab_size = vocab_size
        self.radius = radius
        self.architecture = architecture
        self.hidden = hidden
        self.params = params if params is not None else self._zeros()

    @classmethod
    def create(cls, vocab_size: int, radius: int = DEFAULT_CONTEXT_RADIUS,
               architecture: str = DEFAULT_DENOISER_ARCH,
               hidden: int = DEFAULT_HIDDEN,
               rng: Optional[np.random.Generator] = None,
               ) -> "FactorizedDenoiser":
        model = cls(vocab_size, radius, architecture, hidden)
        if architecture == "mlp":
            if rng is None:
                raise DomainError("mlp init needs an rng")
            scale = 1.0 / np.sqrt(2 * radius + 1)
            model.params["E"] = rng.normal(0.0, scale,
                                           model.params["E"].shape)
        return model

    def param_shapes(self) -> Dict[str, Tuple[int, ...]]:
        width = 2 * self.radius + 1
        alphabet = self.vocab_size + 2
        v, h = self.vocab_size, self.hidden
        if self.architecture == "linear":
            return {"W": (width, alphabet, v), "u": (v,), "b": (v,)}
        return {"E": (width, alphabet, h), "a": (h,), "c": (h,),
                "Wo": (h, v), "bo": (v,)}

    def _zeros(self) -> Dict[str, np.ndarray]:
        return {k: np.zeros(s) for k, s in self.param_shapes().items()}

    # плоский вектор для SGD и проверок конечными разностями
    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel()
                               for k in sorted(self.params)])

    def set_flat(self, flat: np.ndarray) -> None:
        pos = 0
        for k in sorted(self.params):
            n = self.params[k].size
            self.params[k] = np.asarray(
                flat[pos:pos + n], dtype=np.float64
            ).reshape(self.params[k].shape)
            pos += n

    def copy(self) -> "FactorizedDenoiser":
        return FactorizedDenoiser(
            self.vocab_size, self.radius, self.architecture, self.hidden,
            {k: v.copy() for k, v in self.params.items()},
        )

    def _windows(self, x_t: TokenSeq) -> np.ndarray:
        x_t = np.asarray(x_t, dtype=np.int64)
        r = self.radius
        pad = np.full(x_t.shape[:-1] + (r,), self.vocab_size + 1, np.int64)
        padded = np.concatenate([pad, x_t, pad], axis=-1)
        return sliding_window_view(padded, 2 * r + 1, axis=-1)

    def _gather(self, table: np.ndarray, win: np.ndarray) -> np.ndarray:
        acc = table[0][win[..., 0]]
        for d in range(1, win.shape[-1]):
            acc = acc + table[d][win[..., d]]
        return acc

    def _forward(self, x_t: TokenSeq, t: Time):
        win = self._windows(x_t)
        tt = np.asarray(t, dtype=np.float64)
        tt = tt.reshape(tt.shape + (1, 1) if tt.ndim else ())
        p = self.params
        if self.architecture == "linear":
            logits = self._gather(p["W"], win) + tt * p["u"] + p["b"]
            return logits, win, None
        h = np.tanh(self._gather(p["E"], win) + tt * p["a"] + p["c"])
        return h @ p["Wo"] + p["bo"], win, h

    def logits(self, x_t: TokenSeq, t: Time) -> np.ndarray:
        return self._forward(x_t, t)[0]

    def predict(self, x_t: TokenSeq, t: Time) -> DenoiserOutput:
        return denoiser_predict(self, x_t, t)

    def loss_and_grad(self, x0: TokenSeq, x_t: TokenSeq, t: np.ndarray,
                      weights: np.ndarray,
                      ) -> Tuple[float, Dict[str, np.ndarray]]:
        """Взвешенная кросс-энтропия по маскированным позициям на токен.

        loss = sum_b w_b * sum_{masked i} -log mu_i(x0_i) / (B * L)
        """
        x0 = np.asarray(x0, dtype=np.int64)
        x_t = np.asarray(x_t, dtype=np.int64)
        t = np.asarray(t, dtype=np.float64)
        logits, win, h = self._forward(x_t, t)
        lsm = log_softmax(logits, axis=-1)
        masked = x_t == self.vocab_size
        scale = np.asarray(weights, dtype=np.float64)[:, None] / x0.size
        nll = -np.take_along_axis(lsm, x0[..., None], axis=-1)[..., 0]
        loss = float((scale * masked * nll).sum())

        dlogits = softmax(logits, axis=-1)
        np.put_along_axis(
            dlogits, x0[..., None],
            np.take_along_axis(dlogits, x0[..., None], axis=-1) - 1.0,
            axis=-1,
        )
        dlogits *= (scale * masked)[..., None]
        flat_win = win.reshape(-1, win.shape[-1])
        tcol = t[:, None, None]
        grads: Dict[str, np.ndarray] = {}
        if self.architecture == "linear":
            d_in, table = dlogits, "W"
            grads["u"] = (tcol * dlogits).sum(axis=(0, 1))
            grads["b"] = dlogits.sum(axis=(0, 1))
        else:
            grads["Wo"] = np.einsum("blh,blv->hv", h, dlogits)
            grads["bo"] = dlogits.sum(axis=(0, 1))
            d_in = (dlogits @ self.params["Wo"].T) * (1.0 - h * h)
            table = "E"
            grads["a"] = (tcol * d_in).sum(axis=(0, 1))
            grads["c"] = d_in.sum(axis=(0, 1))
        g_table = np.zeros_like(self.params[table])
        rows = d_in.reshape(-1, d_in.shape[-1])
        for d in range(flat_win.shape[-1]):
            np.add.at(g_table[d], flat_win[:, d], rows)
        grads[table] = g_table
        return loss, grads

    def flat_grad(self, grads: Dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([grads[k].ravel() for k in sorted(grads)])


def denoiser_predict(denoiser: FactorizedDenoiser, x_t: TokenSeq,
                     t: Time) -> DenoiserOutput:
    x_t = as_tokens(x_t, denoiser.vocab_size)
    return DenoiserOutput.from_logits(denoiser.logits(x_t, t), x_t,
                                      denoiser.vocab_size)


def masked_cross_entropy(denoiser, x0: TokenSeq, x_t: TokenSeq,
                         t: Time) -> float:
    """Средняя -log mu(x0) на маскированный токен (без весов по t)."""
    out = denoiser.predict(x_t, t)
    n_masked = int(out.masked.sum())
    if n_masked == 0:
        return 0.0
    return float(-out.log_prob(x0).sum() / n_masked)


def nelbo_weight(schedule: NoiseSchedule, t: Time) -> np.ndarray:
    """-alpha'_t / (1 - alpha_t) >= 0."""
    a = np.asarray(alpha(schedule, t))
    return -np.asarray(alpha_prime(schedule, t)) / (1.0 - a)


def _as_matrix(docs: Corpus) -> np.ndarray:
    mat = np.asarray(docs if isinstance(docs, np.ndarray)
                     else np.stack([np.asarray(d) for d in docs]),
                     dtype=np.int64)
    if mat.ndim == 1:
        mat = mat[None, :]
    if mat.size == 0:
        raise DataError("empty corpus")
    return mat


def denoiser_train(denoiser: FactorizedDenoiser, corpus: Corpus,
                   schedule: NoiseSchedule, steps: int, lr: float,
                   rng: np.random.Generator,
                   batch_size: int = DEFAULT_BATCH_SIZE,
                   max_grad_norm: Optional[float] = DEFAULT_MAX_GRAD_NORM,
                   heldout: Optional[Corpus] = None,
                   trace_every: int = LOG_EVERY,
                   ) -> Tuple[FactorizedDenoiser, List[Dict[str, float]]]:
    """SGD по Монте-Карло оценке непрерывного NELBO при E=0.

    x0 ~ корпус, t ~ U[0,1), x_t ~ q(.|x0); вес -alpha'/(1-alpha).
    Возвращает обученную копию и трассу (step, loss, heldout_loss).
    """
    if steps < 0:
        raise DomainError(f"steps must be >= 0, got {steps}")
    docs = _as_matrix(corpus)
    model = denoiser.copy()
    flat = model.get_flat()
    held = _as_matrix(heldout) if heldout is not None else None
    trace: List[Dict[str, float]] = []
    running = 0.0
    for step in range(1, steps + 1):
        x0 = docs[rng.integers(len(docs), size=batch_size)]
        t = rng.random(batch_size)
        x_t = forward_sample(x0, t, schedule, rng, model.vocab_size)
        loss, grads = model.loss_and_grad(x0, x_t, t,
                                          nelbo_weight(schedule, t))
        g = model.flat_grad(grads)
        if not np.isfinite(loss) or not np.all(np.isfinite(g)) \
                or loss > DIVERGENCE_LOSS:
            raise TrainingError(f"denoiser loss diverged at step {step}: "
                                f"{loss}")
        norm = float(np.linalg.norm(g))
        if max_grad_norm and norm > max_grad_norm:
            g = g * (max_grad_norm / norm)
        flat = flat - lr * g
        model.set_flat(flat)
        running += loss
        if step % trace_every == 0 or step == steps:
            n = step % trace_every or trace_every
            row = {"step": step, "loss": running / n,
                   "heldout_loss": float("nan")}
            if held is not None:
                row["heldout_loss"] = heldout_cross_entropy(
                    model, held, schedule
                )
            trace.append(row)
            log.info("denoiser step %s: loss=%.5f heldout=%.5f", step,
                     row["loss"], row["heldout_loss"])
            running = 0.0
    return model, trace


def heldout_cross_entropy(denoiser, docs: np.ndarray,
                          schedule: NoiseSchedule, seed: int = 0) -> float:
    """Маскированная CE на фиксированных (t, x_t): сравнима между шагами."""
    rng = np.random.default_rng(seed)
    t = rng.random(len(docs))
    x_t = forward_sample(docs, t, schedule, rng, denoiser.vocab_size)
    return masked_cross_entropy(denoiser, docs, x_t, t)
