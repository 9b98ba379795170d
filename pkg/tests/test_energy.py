# -*- coding: utf-8 -*-
import math

import numpy as np
import pytest
from helpers import uniform_ar

from edlm.diffusion import factorized_predict, forward_sample
from edlm.energy import (
    EnergyModel,
    carried_logprob,
    energy_ar,
    energy_coar,
    energy_nce,
    joint_logprob_unnormalized,
    nce_dim,
    nce_features,
    nce_vocab_size,
)
from edlm.errors import DomainError, InconsistentPairError, ModelError
from edlm.models import ar_logprob
from edlm.oracle import (
    compatible_completions,
    enumerate_sequences,
    exact_ar_posterior,
)

V, L = 3, 4
MASK = V


class TestAREnergy:

    def test_uniform_models_cancel(self, uniform3):
        x0 = np.array([0, 2, 1, 1])
        e = energy_ar(uniform_ar(V), uniform3, x0, np.full(L, MASK), 0.5)
        assert e == pytest.approx(0.0, abs=1e-12)

    def test_no_masks_reduces_to_ar(self, toy_ar, toy_denoiser):
        x0 = np.array([2, 0, 1, 1])
        e = energy_ar(toy_ar, toy_denoiser, x0, x0, 0.5)
        assert e == pytest.approx(-ar_logprob(toy_ar, x0), abs=1e-12)

    def test_exp_minus_energy_proportional_to_ar_posterior(
            self, toy_ar, toy_denoiser):
        x_t = np.array([MASK, 1, MASK, MASK])
        out = factorized_predict(toy_denoiser, x_t, 0.4)
        exact = exact_ar_posterior(toy_ar, x_t)
        e = energy_ar(toy_ar, toy_denoiser, exact.support, x_t, 0.4, out)
        ratio = np.exp(-e) * np.exp(out.log_prob(exact.support)) \
            / exact.probs
        np.testing.assert_allclose(ratio / ratio[0], 1.0, atol=1e-10)

    def test_candidate_axis(self, toy_ar, toy_denoiser):
        x_t = np.array([[MASK, 0, MASK, MASK], [1, MASK, MASK, 2]])
        rng = np.random.default_rng(0)
        out = factorized_predict(toy_denoiser, x_t, 0.6)
        cands = out.sample(rng, 5)
        e = energy_ar(toy_ar, toy_denoiser, cands, x_t, 0.6, out)
        assert e.shape == (2, 5)
        assert e[1, 3] == pytest.approx(
            energy_ar(toy_ar, toy_denoiser, cands[1, 3], x_t[1], 0.6),
            abs=1e-12)

    def test_inconsistent_pair(self, toy_ar, toy_denoiser):
        with pytest.raises(InconsistentPairError):
            energy_ar(toy_ar, toy_denoiser, np.array([0, 0, 0, 0]),
                      np.array([1, MASK, MASK, MASK]), 0.5)


class TestCarryOver:

    def test_fully_masked_equals_ar(self, toy_ar, toy_denoiser):
        x0, x_t = np.array([1, 0, 2, 2]), np.full(L, MASK)
        assert energy_coar(toy_ar, toy_denoiser, x0, x_t, 0.7) == \
            pytest.approx(energy_ar(toy_ar, toy_denoiser, x0, x_t, 0.7),
                          abs=1e-12)

    def test_fully_unmasked_is_zero(self, toy_ar, toy_denoiser):
        x0 = np.array([1, 0, 2, 2])
        assert energy_coar(toy_ar, toy_denoiser, x0, x0, 0.2) == 0.0

    def test_identity_with_carried_logprob(self, toy_ar, toy_denoiser,
                                           schedule):
        rng = np.random.default_rng(4)
        for _ in range(100):
            x0 = rng.integers(V, size=L)
            t = float(rng.random())
            x_t = forward_sample(x0, t, schedule, rng, V)
            lhs = energy_coar(toy_ar, toy_denoiser, x0, x_t, t)
            rhs = energy_ar(toy_ar, toy_denoiser, x0, x_t, t) \
                + carried_logprob(toy_ar, x0, x_t)
            assert lhs == pytest.approx(rhs, abs=1e-10)

    def test_self_normalized_by_enumeration(self, toy_ar, toy_denoiser):
        energy = EnergyModel("coar", toy_denoiser, toy_ar)
        for x_t in enumerate_sequences(V + 1, L)[::7]:
            support = compatible_completions(x_t, V)
            out = factorized_predict(toy_denoiser, x_t, 0.5)
            mass = np.sum(np.exp(out.log_prob(support))
                          * np.exp(-energy.energy(support, x_t, 0.5, out)))
            assert mass == pytest.approx(1.0, abs=1e-8)


class TestNCEEnergy:

    def test_zero_params(self, rng):
        phi = np.zeros(nce_dim(V))
        x0 = rng.integers(V, size=(6, L))
        x_t = np.where(rng.random((6, L)) < 0.5, MASK, x0)
        np.testing.assert_array_equal(energy_nce(phi, x0, x_t,
                                                 rng.random(6)), 0.0)

    def test_matches_feature_dot_product(self, rng):
        phi = rng.normal(size=nce_dim(V))
        x0 = rng.integers(V, size=(5, 3, L))
        x_t = np.where(rng.random((5, 1, L)) < 0.5, MASK, x0[:, :1])
        x0[:, :, :] = np.where(x_t == MASK, x0, x_t)
        t = rng.random(5)
        feats = nce_features(x0, x_t[:, 0], t, V)
        np.testing.assert_allclose(energy_nce(phi, x0, x_t[:, 0], t),
                                   feats @ phi, atol=1e-12)

    def test_gradient_is_feature_vector(self, rng):
        # V=4: 26 координат, из них 20 случайных
        v = 4
        phi = rng.normal(size=nce_dim(v))
        x0 = np.array([0, 3, 2, 1])
        x_t = np.array([v, 3, v, 1])
        grad = nce_features(x0, x_t, 0.3, v)
        h = 1e-5
        for i in rng.choice(phi.size, 20, replace=False):
            up, down = phi.copy(), phi.copy()
            up[i] += h
            down[i] -= h
            fd = (energy_nce(up, x0, x_t, 0.3)
                  - energy_nce(down, x0, x_t, 0.3)) / (2 * h)
            assert abs(fd - grad[i]) <= 1e-4 * max(abs(fd), 1e-3)

    def test_pure_function(self):
        phi = np.linspace(-1, 1, nce_dim(V))
        x0, x_t = np.array([0, 1, 2, 0]), np.array([MASK, 1, MASK, 0])
        assert energy_nce(phi, x0, x_t, 0.5) == energy_nce(phi, x0, x_t, 0.5)

    def test_vocab_size_from_length(self):
        assert nce_vocab_size(np.zeros(nce_dim(27))) == 27
        with pytest.raises(DomainError):
            nce_vocab_size(np.zeros(11))

    def test_non_finite_params(self):
        phi = np.zeros(nce_dim(V))
        phi[0] = np.inf
        with pytest.raises(ModelError):
            energy_nce(phi, np.zeros(L, np.int64), np.full(L, MASK), 0.5)


class TestJointScore:

    def test_zero_energy_is_denoiser_logprob(self, toy_denoiser):
        x_t = np.array([MASK, 0, MASK, 2])
        x0 = np.array([1, 0, 1, 2])
        score = joint_logprob_unnormalized(EnergyModel.none(), toy_denoiser,
                                           x0, x_t, 0.5)
        out = factorized_predict(toy_denoiser, x_t, 0.5)
        assert score == pytest.approx(float(out.log_prob(x0)), abs=1e-15)

    def test_ar_kind_softmax_is_ar_posterior(self, toy_ar, toy_denoiser):
        energy = EnergyModel("ar", toy_denoiser, toy_ar)
        for x_t in (np.full(L, MASK), np.array([MASK, 1, MASK, 0])):
            exact = exact_ar_posterior(toy_ar, x_t)
            scores = joint_logprob_unnormalized(energy, toy_denoiser,
                                                exact.support, x_t, 0.5)
            probs = np.exp(scores - np.max(scores))
            probs /= probs.sum()
            np.testing.assert_allclose(probs, exact.probs, atol=1e-10)

    def test_coar_kind_log_normalizer_zero(self, toy_ar, toy_denoiser):
        energy = EnergyModel("coar", toy_denoiser, toy_ar)
        x_t = np.array([2, MASK, MASK, 1])
        support = compatible_completions(x_t, V)
        scores = joint_logprob_unnormalized(energy, toy_denoiser, support,
                                            x_t, 0.5)
        m = np.max(scores)
        assert m + math.log(np.sum(np.exp(scores - m))) == \
            pytest.approx(0.0, abs=1e-8)


class TestEnergyModel:

    def test_kind_requirements(self, toy_denoiser):
        with pytest.raises(DomainError):
            EnergyModel("ar", toy_denoiser)
        with pytest.raises(DomainError):
            EnergyModel("nce", toy_denoiser)
        with pytest.raises(DomainError):
            EnergyModel("rbm", toy_denoiser)

    def test_self_normalized_kinds(self, toy_ar, toy_denoiser):
        assert EnergyModel("coar", toy_denoiser, toy_ar).is_self_normalized
        assert EnergyModel.none().is_self_normalized
        assert not EnergyModel("ar", toy_denoiser, toy_ar).is_self_normalized
