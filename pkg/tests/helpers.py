# -*- coding: utf-8 -*-
"""Фабрики маленьких моделей для тестов."""
import numpy as np

from edlm.models import ARModel, FactorizedDenoiser


def uniform_ar(vocab_size: int, order: int = 1) -> ARModel:
    rows = np.full(((vocab_size + 1) ** order, vocab_size), 1.0 / vocab_size)
    return ARModel.from_conditionals(rows, order, vocab_size)


def sticky_ar(vocab_size: int, stay: float) -> ARModel:
    """Биграммы: повтор предыдущего токена с вероятностью stay."""
    rows = np.full((vocab_size + 1, vocab_size),
                   (1.0 - stay) / (vocab_size - 1))
    for tok in range(vocab_size):
        rows[tok, tok] = stay
    rows[vocab_size] = 1.0 / vocab_size
    return ARModel.from_conditionals(rows, 1, vocab_size)


def mlp_denoiser(vocab_size: int, seed: int = 3) -> FactorizedDenoiser:
    den = FactorizedDenoiser.create(vocab_size, radius=2, architecture="mlp",
                                    hidden=5,
                                    rng=np.random.default_rng(seed))
    den.set_flat(np.random.default_rng(seed + 1).normal(
        0.0, 0.4, den.get_flat().size))
    return den
