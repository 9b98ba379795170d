# -*- coding: utf-8 -*-
"""Обучение NCE-энергии: позитив x+ = x0, негатив x- ~ p_theta(.|x_t)."""
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from .constants import DEFAULT_NCE_BATCH, DIVERGENCE_LOSS, LOG_EVERY
from .diffusion import TokenSeq, factorized_predict, forward_sample
from .energy import energy_nce, nce_dim, nce_features, nce_vocab_size
from .errors import DataError, DomainError, PreconditionError, TrainingError
from .logging_conf import get_logger
from .schedule import NoiseSchedule

log = get_logger("edlm.nce")


@dataclass(frozen=True)
class NCEBatch:
    x0: TokenSeq
    t: np.ndarray
    x_t: TokenSeq
    x_plus: TokenSeq
    x_minus: TokenSeq
    vocab_size: int

    def check(self) -> None:
        keep = self.x_t != self.vocab_size
        if not np.array_equal(self.x_plus, self.x0):
            raise PreconditionError("positive sample must equal x0")
        for name, x in (("positive", self.x_plus),
                        ("negative", self.x_minus)):
            if np.any(keep & (x != self.x_t)):
                raise PreconditionError(
                    f"{name} sample disagrees with x_t at a kept position"
                )

    def __len__(self) -> int:
        return int(self.x0.shape[0])


def make_batch(denoiser, docs: np.ndarray, schedule: NoiseSchedule,
               rng: np.random.Generator,
               batch_size: int = DEFAULT_NCE_BATCH) -> NCEBatch:
    """Строки 3-6 цикла обучения: x0, t, x_t, x+ и x- на том же t."""
    docs = np.asarray(docs, dtype=np.int64)
    if docs.ndim != 2 or not len(docs):
        raise DataError("NCE needs a non-empty (N, L) document matrix")
    v = denoiser.vocab_size
    x0 = docs[rng.integers(len(docs), size=batch_size)]
    t = rng.random(batch_size)
    x_t = forward_sample(x0, t, schedule, rng, v)
    x_minus = factorized_predict(denoiser, x_t, t).sample(rng)
    batch = NCEBatch(x0, t, x_t, x0.copy(), x_minus, v)
    batch.check()
    return batch


def nce_loss(params: np.ndarray, batch: NCEBatch,
             ) -> Tuple[float, np.ndarray]:
    """Средний по батчу -[log s(-E+) + log s(E-)] и его градиент по phi."""
    e_pos = np.asarray(energy_nce(params, batch.x_plus, batch.x_t, batch.t))
    e_neg = np.asarray(energy_nce(params, batch.x_minus, batch.x_t,
                                  batch.t))
    # -log s(-E) = softplus(E)
    loss = np.logaddexp(0.0, e_pos) + np.logaddexp(0.0, -e_neg)
    f_pos = nce_features(batch.x_plus, batch.x_t, batch.t, batch.vocab_size)
    f_neg = nce_features(batch.x_minus, batch.x_t, batch.t,
                         batch.vocab_size)
    grad = expit(e_pos)[..., None] * f_pos - expit(-e_neg)[..., None] * f_neg
    n = max(int(np.size(loss)), 1)
    return float(np.sum(loss) / n), grad.reshape(-1, grad.shape[-1]).sum(
        axis=0
    ) / n


def energy_gap(params: np.ndarray, batch: NCEBatch) -> Dict[str, float]:
    """Средние энергии позитивов и негативов и стандартная ошибка разности."""
    e_pos = np.atleast_1d(energy_nce(params, batch.x_plus, batch.x_t,
                                     batch.t))
    e_neg = np.atleast_1d(energy_nce(params, batch.x_minus, batch.x_t,
                                     batch.t))
    n = len(e_pos)
    se = np.sqrt(e_pos.var(ddof=1) / n + e_neg.var(ddof=1) / n) \
        if n > 1 else float("nan")
    return {
        "positive_mean": float(e_pos.mean()),
        "negative_mean": float(e_neg.mean()),
        "gap": float(e_neg.mean() - e_pos.mean()),
        "se": float(se),
    }


def nce_init(vocab_size: int) -> np.ndarray:
    return np.zeros(nce_dim(vocab_size))


def nce_train(params: np.ndarray, denoiser, corpus: np.ndarray,
              schedule: NoiseSchedule, steps: int, lr: float,
              rng: np.random.Generator,
              batch_size: int = DEFAULT_NCE_BATCH,
              heldout: Optional[NCEBatch] = None,
              trace_every: int = LOG_EVERY,
              ) -> Tuple[np.ndarray, List[Dict[str, float]]]:
    """SGD по phi; денойзер заморожен. Трасса: (step, loss, heldout_loss)."""
    if steps < 0:
        raise DomainError(f"steps must be >= 0, got {steps}")
    params = np.asarray(params, dtype=np.float64).copy()
    if nce_vocab_size(params) != denoiser.vocab_size:
        raise DomainError("NCE parameters and denoiser vocab differ")
    trace: List[Dict[str, float]] = []
    running = 0.0
    for step in range(1, steps + 1):
        batch = make_batch(denoiser, corpus, schedule, rng, batch_size)
        loss, grad = nce_loss(params, batch)
        if not np.isfinite(loss) or loss > DIVERGENCE_LOSS \
                or not np.all(np.isfinite(grad)):
            raise TrainingError(f"NCE loss diverged at step {step}: {loss}")
        params -= lr * grad
        running += loss
        if step % trace_every == 0 or step == steps:
            n = step % trace_every or trace_every
            row = {"step": step, "loss": running / n,
                   "heldout_loss": float("nan")}
            if heldout is not None:
                row["heldout_loss"] = nce_loss(params, heldout)[0]
            trace.append(row)
            log.info("nce step %s: loss=%.5f heldout=%.5f", step,
                     row["loss"], row["heldout_loss"])
            running = 0.0
    return params, trace
