# -*- coding: utf-8 -*-
import json

import numpy as np
import pytest
from helpers import mlp_denoiser

from edlm.checkpoint import (
    ar_checkpoint,
    ar_from,
    denoiser_checkpoint,
    denoiser_from,
    load,
    nce_checkpoint,
    nce_from,
    save,
)
from edlm.corpus import Vocabulary
from edlm.energy import nce_dim
from edlm.errors import CheckpointError, ConfigError
from edlm.models import ar_fit

VOCAB = Vocabulary("abc")


class TestRoundTrip:

    def test_denoiser_bit_identical(self, tmp_path):
        model = mlp_denoiser(3)
        path = str(tmp_path / "den.json")
        save(path, denoiser_checkpoint(model, VOCAB, {"seed": 1}))
        back = denoiser_from(load(path, "denoiser"))
        assert back.architecture == "mlp" and back.radius == model.radius
        for name, arr in model.params.items():
            assert back.params[name].dtype == arr.dtype
            np.testing.assert_array_equal(back.params[name], arr)

    def test_ar_same_probabilities(self, tmp_path):
        rng = np.random.default_rng(0)
        ar = ar_fit(rng.integers(3, size=300), order=2, smoothing=0.3,
                    vocab_size=3)
        path = str(tmp_path / "ar.json")
        save(path, ar_checkpoint(ar, VOCAB, {}))
        back = ar_from(load(path, "ar"))
        np.testing.assert_array_equal(back.log_probs, ar.log_probs)
        assert back.order == 2 and back.smoothing == 0.3

    def test_nce(self, tmp_path):
        phi = np.random.default_rng(1).normal(size=nce_dim(3))
        path = str(tmp_path / "nce.json")
        save(path, nce_checkpoint(phi, VOCAB, {"steps": 5}))
        ckpt = load(path, "nce")
        np.testing.assert_array_equal(nce_from(ckpt), phi)
        assert ckpt.meta["steps"] == 5
        assert ckpt.vocab == VOCAB


class TestLoadErrors:

    def _write(self, tmp_path, **changes):
        path = tmp_path / "nce.json"
        save(str(path), nce_checkpoint(np.zeros(nce_dim(3)), VOCAB, {}))
        data = json.loads(path.read_text(encoding="utf-8"))
        data.update(changes)
        path.write_text(json.dumps(data), encoding="utf-8")
        return str(path)

    def test_missing(self, tmp_path):
        with pytest.raises(ConfigError):
            load(str(tmp_path / "none.json"), "nce")

    def test_wrong_kind(self, tmp_path):
        with pytest.raises(CheckpointError):
            load(self._write(tmp_path), "denoiser")

    def test_unknown_version(self, tmp_path):
        with pytest.raises(CheckpointError, match="format_version"):
            load(self._write(tmp_path, format_version=99), "nce")

    def test_not_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(CheckpointError):
            load(str(path), "nce")

    def test_denoiser_shape_mismatch(self, tmp_path):
        model = mlp_denoiser(3)
        ckpt = denoiser_checkpoint(model, VOCAB, {})
        ckpt.config["radius"] = model.radius + 1
        with pytest.raises(CheckpointError):
            denoiser_from(ckpt)
