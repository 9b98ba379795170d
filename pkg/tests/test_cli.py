# -*- coding: utf-8 -*-
import json

import pytest

from edlm.cli import main
from edlm.reports import read_csv


@pytest.fixture(autouse=True)
def _no_env_config(monkeypatch):
    monkeypatch.delenv("EDLM_CONFIG", raising=False)


def _run(*argv):
    return main([str(a) for a in argv])


class TestExitCodes:

    def test_make_corpus(self, tmp_path):
        out = tmp_path / "corpus.txt"
        assert _run("make-corpus", "--sentences", 20, "--out", out) == 0
        assert out.read_text(encoding="utf-8")

    def test_make_corpus_reproducible(self, tmp_path):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        for path in (a, b):
            _run("make-corpus", "--seed", 3, "--sentences", 30, "--out",
                 path)
        assert a.read_bytes() == b.read_bytes()

    def test_missing_out(self):
        assert _run("make-corpus", "--sentences", 5) == 2

    def test_missing_corpus(self, tmp_path):
        assert _run("fit-ar", "--corpus", tmp_path / "none.txt", "--out",
                    tmp_path / "ar.json") == 2

    def test_missing_checkpoint(self, tmp_path):
        assert _run("sample", "--model", tmp_path / "none.json", "--out",
                    tmp_path / "s.txt") == 2

    def test_bad_config_value(self, tmp_path):
        env = tmp_path / "run.env"
        env.write_text("EDLM_ESTIMATOR=exact\n", encoding="utf-8")
        assert _run("make-corpus", "--config", env, "--out",
                    tmp_path / "c.txt") == 2

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit):
            _run("train-everything")


@pytest.mark.slow
class TestPipeline:

    @pytest.fixture(scope="class")
    def workdir(self, tmp_path_factory):
        d = tmp_path_factory.mktemp("pipeline")
        corpus, ar, den = d / "corpus.txt", d / "ar.json", d / "den.json"
        assert _run("make-corpus", "--sentences", 80, "--out", corpus) == 0
        assert _run("fit-ar", "--corpus", corpus, "--order", 2,
                    "--seq-len", 16, "--heldout-size", 4, "--out", ar) == 0
        assert _run("train-denoiser", "--corpus", corpus, "--seq-len", 16,
                    "--heldout-size", 4, "--steps", 40, "--context-radius",
                    2, "--trace", d / "trace.csv", "--out", den) == 0
        return d

    def _sample(self, d, name):
        out = d / name
        code = _run("sample", "--model", d / "den.json", "--energy", "ar",
                    "--ar", d / "ar.json", "--steps", 4, "--k", 3,
                    "--seq-len", 16, "--num-samples", 6, "--seed", 11,
                    "--out", out)
        assert code == 0
        return out

    def test_samples_reproducible(self, workdir):
        a = self._sample(workdir, "a.txt")
        b = self._sample(workdir, "b.txt")
        assert a.read_bytes() == b.read_bytes()
        lines = a.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 6 and all(len(x) == 16 for x in lines)
        meta = json.loads((workdir / "a.txt.meta.json").read_text())
        assert meta["seed"] == 11

    def test_eval_with_diagnostics(self, workdir):
        out = workdir / "metrics.csv"
        assert _run("eval", "--model", workdir / "den.json", "--energy",
                    "coar", "--ar", workdir / "ar.json", "--corpus",
                    workdir / "corpus.txt", "--seq-len", 16, "--estimator",
                    "discrete", "--discrete-steps", 2, "--diagnostics",
                    "--out", out) == 0
        rows = read_csv(str(out))["rows"]
        assert rows[-1]["unit"] == "all"
        assert float(rows[-1]["bpc"]) > 0
        profile = read_csv(str(out) + ".diagnostics.csv")["rows"]
        assert len(profile) > 0

    def test_nce_then_eval(self, workdir):
        nce = workdir / "nce.json"
        assert _run("train-nce", "--model", workdir / "den.json",
                    "--corpus", workdir / "corpus.txt", "--seq-len", 16,
                    "--heldout-size", 4, "--steps", 30, "--out", nce) == 0
        out = workdir / "nce_metrics.csv"
        assert _run("eval", "--model", workdir / "den.json", "--energy",
                    "nce", "--energy-model", nce, "--corpus",
                    workdir / "corpus.txt", "--seq-len", 16, "--estimator",
                    "discrete", "--discrete-steps", 2, "--bounds-n", 4,
                    "--out", out) == 0

    def test_bench_grid(self, workdir):
        grid = workdir / "grid.json"
        grid.write_text(json.dumps({"steps": [4], "k": [1, 2],
                                    "window": [0.0, 1.0]}))
        out = workdir / "bench.csv"
        assert _run("bench", "--model", workdir / "den.json", "--energy",
                    "ar", "--ar", workdir / "ar.json", "--grid", grid,
                    "--seq-len", 16, "--num-samples", 4, "--workers", 2,
                    "--out", out) == 0
        rows = read_csv(str(out))["rows"]
        assert len(rows) == 4
        assert all(r["error"] == "" for r in rows)
        assert "wall_s" not in rows[0]

    def test_verify(self, tmp_path, capsys):
        out = tmp_path / "verify.csv"
        assert _run("verify", "--out", out) == 0
        assert capsys.readouterr().out.count("PASS") == 8
