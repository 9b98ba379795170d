# -*- coding: utf-8 -*-
import numpy as np
import pytest
from helpers import sticky_ar
from scipy import stats

from edlm.diffusion import factorized_predict
from edlm.energy import EnergyModel
from edlm.errors import DomainError, SamplerError
from edlm.oracle import EnumeratedDistribution, PosteriorMarginalDenoiser
from edlm.sampler import (
    SamplerConfig,
    SamplerTrace,
    resample_index,
    sample_base,
    sample_edlm,
)


def _frequencies(samples: np.ndarray, vocab_size: int) -> np.ndarray:
    length = samples.shape[-1]
    codes = samples @ (vocab_size ** np.arange(length - 1, -1, -1))
    return np.bincount(codes, minlength=vocab_size ** length) / len(samples)


def _target(dist: EnumeratedDistribution) -> np.ndarray:
    length, v = dist.length, dist.vocab_size
    codes = dist.support @ (v ** np.arange(length - 1, -1, -1))
    out = np.zeros(v ** length)
    out[codes] = dist.probs
    return out


def _tv(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(p - q).sum())


class TestResampleIndex:

    def test_equal_energies_uniform(self):
        rng = np.random.default_rng(0)
        k, n = 5, 100_000
        draws = [resample_index(np.full(k, 2.5), rng) for _ in range(n)]
        counts = np.bincount(draws, minlength=k)
        _, p = stats.chisquare(counts)
        assert p > 0.001

    def test_dominating_weight(self, rng):
        picks = {resample_index([0.0, 1000.0], rng) for _ in range(1000)}
        assert picks == {0}

    def test_shift_invariance(self):
        e = np.array([0.5, 1.25, 3.0, 0.75])
        a = [resample_index(e, np.random.default_rng(s)) for s in range(300)]
        b = [resample_index(e + 8.0, np.random.default_rng(s))
             for s in range(300)]
        assert a == b

    def test_plus_infinity_never_selected(self, rng):
        e = np.array([np.inf, 0.0, np.inf])
        assert {resample_index(e, rng) for _ in range(200)} == {1}

    @pytest.mark.parametrize("energies", [
        [np.inf, np.inf], [np.nan, 0.0], [-np.inf, 1.0],
    ])
    def test_degenerate_energies(self, energies, rng):
        with pytest.raises(SamplerError):
            resample_index(energies, rng)

    def test_empty(self, rng):
        with pytest.raises(DomainError):
            resample_index([], rng)


class TestSamplerConfig:

    def test_uniform_grid(self):
        np.testing.assert_allclose(SamplerConfig(num_steps=4).times(),
                                   [1.0, 0.75, 0.5, 0.25, 0.0])

    def test_window_rule(self):
        cfg = SamplerConfig(num_steps=4, window=0.5)
        assert cfg.in_window(1.0) and cfg.in_window(0.5)
        assert not cfg.in_window(0.25)
        assert not SamplerConfig(window=0.0).in_window(1.0)

    @pytest.mark.parametrize("kwargs", [
        {"num_steps": 0}, {"importance_size": 0}, {"window": 1.5},
        {"seq_len": 0}, {"num_steps": 2, "grid": [1.0, 0.5]},
        {"num_steps": 2, "grid": [1.0, 1.0, 0.0]},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(DomainError):
            SamplerConfig(**kwargs)


class TestBaseSampler:

    def test_delta_denoiser_returns_its_sequence(self, schedule, rng):
        seq = np.array([1, 0, 2, 2, 1])
        den = PosteriorMarginalDenoiser(
            EnumeratedDistribution(seq[None, :], [1.0], 3), 3)
        cfg = SamplerConfig(num_steps=7, seq_len=5)
        out = sample_base(den, cfg, schedule, rng, 50)
        assert np.all(out == seq)

    def test_single_step_is_one_factorized_draw(self, schedule,
                                                toy_denoiser):
        cfg = SamplerConfig(num_steps=1, seq_len=6)
        got = sample_base(toy_denoiser, cfg, schedule,
                          np.random.default_rng(9), 20)
        out = factorized_predict(toy_denoiser, np.full((20, 6), 3), 1.0)
        want = out.sample(np.random.default_rng(9), 1)[:, 0]
        np.testing.assert_array_equal(got, want)

    def test_shapes_and_clean_output(self, schedule, rng, uniform3):
        cfg = SamplerConfig(num_steps=5, seq_len=8)
        single = sample_base(uniform3, cfg, schedule, rng)
        batch = sample_base(uniform3, cfg, schedule, rng, 4)
        assert single.shape == (8,) and batch.shape == (4, 8)
        assert batch.max() < 3

    @pytest.mark.slow
    def test_two_sequence_frequencies(self, schedule):
        prior = EnumeratedDistribution.from_dict(
            {(0, 0, 0): 0.7, (0, 0, 1): 0.3}, 2)
        den = PosteriorMarginalDenoiser(prior, 2)
        n = 50_000
        out = sample_base(den, SamplerConfig(num_steps=4, seq_len=3),
                          schedule, np.random.default_rng(3), n)
        freq = _frequencies(out, 2)
        sigma = np.sqrt(0.7 * 0.3 / n)
        assert abs(freq[0] - 0.7) <= 3 * sigma
        assert abs(freq[1] - 0.3) <= 3 * sigma
        assert freq[0] + freq[1] == pytest.approx(1.0)

    def test_residual_masks_raise(self, schedule, rng, uniform3):
        cfg = SamplerConfig(num_steps=2, seq_len=64, grid=[1.0, 0.5, 0.2])
        with pytest.raises(SamplerError):
            sample_base(uniform3, cfg, schedule, rng)


class TestEDLMReductions:

    @pytest.mark.parametrize("kind", ["ar", "coar"])
    def test_k_one_matches_base(self, kind, schedule, toy_ar, toy_denoiser):
        energy = EnergyModel(kind, toy_denoiser, toy_ar)
        cfg = SamplerConfig(num_steps=6, importance_size=1, window=1.0,
                            seq_len=5)
        base = sample_base(toy_denoiser, cfg, schedule,
                           np.random.default_rng(17), 64)
        edlm = sample_edlm(toy_denoiser, energy, cfg, schedule,
                           np.random.default_rng(17), 64)
        np.testing.assert_array_equal(base, edlm)

    def test_zero_window_matches_base(self, schedule, toy_ar, toy_denoiser):
        energy = EnergyModel("ar", toy_denoiser, toy_ar)
        cfg = SamplerConfig(num_steps=6, importance_size=8, window=0.0,
                            seq_len=5)
        base = sample_base(toy_denoiser, cfg, schedule,
                           np.random.default_rng(17), 64)
        edlm = sample_edlm(toy_denoiser, energy, cfg, schedule,
                           np.random.default_rng(17), 64)
        np.testing.assert_array_equal(base, edlm)

    def test_deterministic(self, schedule, toy_ar, toy_denoiser):
        energy = EnergyModel("ar", toy_denoiser, toy_ar)
        cfg = SamplerConfig(num_steps=5, importance_size=4, seq_len=6)
        a = sample_edlm(toy_denoiser, energy, cfg, schedule,
                        np.random.default_rng(1), 32)
        b = sample_edlm(toy_denoiser, energy, cfg, schedule,
                        np.random.default_rng(1), 32)
        np.testing.assert_array_equal(a, b)

    def test_trace_counts_window_steps(self, schedule, toy_ar,
                                       toy_denoiser):
        energy = EnergyModel("ar", toy_denoiser, toy_ar)
        cfg = SamplerConfig(num_steps=4, importance_size=4, window=0.5,
                            seq_len=6)
        trace = SamplerTrace()
        sample_edlm(toy_denoiser, energy, cfg, schedule,
                    np.random.default_rng(1), 8, trace)
        # tau = 1.0, 0.75, 0.5 внутри окна
        assert trace.is_steps == 3
        assert len(trace.ess) == 3
        assert all(1.0 <= e <= 4.0 + 1e-12 for e in trace.ess)

    def test_none_energy_is_base(self, schedule, toy_denoiser):
        cfg = SamplerConfig(num_steps=4, importance_size=4, seq_len=5)
        base = sample_base(toy_denoiser, cfg, schedule,
                           np.random.default_rng(2), 10)
        edlm = sample_edlm(toy_denoiser, EnergyModel.none(toy_denoiser), cfg,
                           schedule, np.random.default_rng(2), 10)
        np.testing.assert_array_equal(base, edlm)


@pytest.mark.slow
class TestEDLMTarget:
    """Выборка по значимости с AR-энергией приближает p_AR."""

    n = 50_000

    @pytest.fixture
    def setup(self, schedule):
        ar = sticky_ar(2, 0.9)
        target = EnumeratedDistribution.from_ar(ar, 3)
        den = PosteriorMarginalDenoiser(target, 2)
        return ar, den, _target(target)

    def _tv_for(self, setup, schedule, k, window, steps=2):
        ar, den, target = setup
        cfg = SamplerConfig(num_steps=steps, importance_size=k,
                            window=window, seq_len=3)
        out = sample_edlm(den, EnergyModel("ar", den, ar), cfg, schedule,
                          np.random.default_rng(123), self.n)
        return _tv(_frequencies(out, 2), target)

    def test_closer_than_base(self, setup, schedule):
        tv_base = self._tv_for(setup, schedule, 1, 0.0)
        tv_edlm = self._tv_for(setup, schedule, 16, 1.0)
        assert tv_edlm < tv_base - 0.05

    def test_window_monotone(self, setup, schedule):
        # N=5: окно 0.2 покрывает 2 шага, 0.5 покрывает 3, 1.0 все 5
        tvs = [self._tv_for(setup, schedule, 16, w, steps=5)
               for w in (0.0, 0.2, 0.5, 1.0)]
        for wider, narrower in zip(tvs, tvs[1:]):
            assert narrower <= wider + 0.02
