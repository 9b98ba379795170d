# -*- coding: utf-8 -*-
"""Оркестрация команд: одна функция на подкоманду, возвращает stats."""
import itertools
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .checkpoint import (
    ar_checkpoint,
    ar_from,
    denoiser_checkpoint,
    denoiser_from,
    load,
    nce_checkpoint,
    nce_from,
    save,
)
from .constants import DEFAULT_BENCH_GRID, SAMPLE_CHUNK
from .corpus import (
    Vocabulary,
    chunk_documents,
    ingest_corpus,
    split_documents,
    synthetic_grammar_text,
)
from .energy import EnergyModel
from .env import RunConfig
from .errors import ConfigError, EdlmError
from .evaluation import (
    EvalConfig,
    corpus_metrics,
    energy_profile,
    generative_metrics,
    sample_nll,
)
from .logging_conf import get_logger
from .models import (
    ARModel,
    FactorizedDenoiser,
    ar_fit,
    denoiser_train,
    heldout_cross_entropy,
)
from .nce import energy_gap, make_batch, nce_init, nce_train
from .oracle import run_verify
from .reports import write_csv, write_samples
from .rng import stream
from .sampler import SamplerConfig, SamplerTrace, sample_edlm
from .schedule import NoiseSchedule
from .utils import atomic_write_text, file_digest, read_json

log = get_logger("edlm.worker")

TRACE_COLUMNS = ("step", "loss", "heldout_loss")
METRIC_COLUMNS = ("unit", "tokens", "nelbo", "bpc", "ppl", "gen_ppl",
                  "entropy", "ess")
PROFILE_COLUMNS = ("t", "positive", "negative_mean", "negative_min",
                   "negative_max", "ess")
BENCH_COLUMNS = ("cell", "steps", "k", "window", "gen_ppl", "gen_ppl_se",
                 "entropy", "ess", "is_steps", "error")
VERIFY_COLUMNS = ("check", "ok", "detail")


# --- общие помощники -----------------------------------------------------

def _schedule(cfg: RunConfig) -> NoiseSchedule:
    return NoiseSchedule(cfg.schedule, cfg.schedule_eps, cfg.schedule_power)


def _require(path: Optional[str], what: str) -> str:
    if not path:
        raise ConfigError(f"{what} path is required")
    if not os.path.isfile(path):
        raise ConfigError(f"{what} not found: {path}")
    return path


def _out(cfg: RunConfig) -> str:
    if not cfg.out:
        raise ConfigError(f"{cfg.command}: --out is required")
    return cfg.out


def _docs(cfg: RunConfig, vocab: Optional[Vocabulary] = None,
          ) -> Tuple[np.ndarray, Vocabulary, str]:
    path = _require(cfg.corpus, "corpus")
    ids, vocab = ingest_corpus(path, cfg.vocab_policy, vocab)
    return chunk_documents(ids, cfg.seq_len), vocab, file_digest(path)


def _meta(cfg: RunConfig, **extra: Any) -> Dict[str, Any]:
    meta = {"seed": cfg.seed, "config_digest": cfg.digest(),
            "config": {k: v for k, v in cfg.as_dict().items()
                       if k not in ("out", "trace", "config")}}
    meta.update(extra)
    return meta


def _finish(cfg: RunConfig, **stats: Any) -> Dict[str, Any]:
    stats = {"command": cfg.command, "seed": cfg.seed,
             "config_digest": cfg.digest(), **stats}
    log.info("run stats: %s", json.dumps(stats, ensure_ascii=False))
    return stats


def _write_trace(cfg: RunConfig, trace: List[Dict[str, float]]) -> None:
    if cfg.trace:
        write_csv(cfg.trace, trace, TRACE_COLUMNS, cfg.seed, cfg.digest())


def _load_denoiser(cfg: RunConfig) -> Tuple[FactorizedDenoiser, Vocabulary]:
    ckpt = load(_require(cfg.model, "denoiser checkpoint"), "denoiser")
    return denoiser_from(ckpt), ckpt.vocab


def _load_ar(path: Optional[str], vocab: Vocabulary) -> ARModel:
    ckpt = load(_require(path, "AR checkpoint"), "ar")
    if ckpt.vocab != vocab:
        raise ConfigError("AR checkpoint vocabulary differs from the model")
    return ar_from(ckpt)


def _energy(cfg: RunConfig, den: FactorizedDenoiser,
            vocab: Vocabulary) -> EnergyModel:
    if cfg.energy == "none":
        return EnergyModel.none(den)
    if cfg.energy in ("ar", "coar"):
        return EnergyModel(cfg.energy, den, _load_ar(cfg.ar, vocab))
    ckpt = load(_require(cfg.energy_model, "NCE checkpoint"), "nce")
    if ckpt.vocab != vocab:
        raise ConfigError("NCE checkpoint vocabulary differs from the model")
    return EnergyModel("nce", den, params=nce_from(ckpt))


def draw_samples(den, energy: EnergyModel, scfg: SamplerConfig,
                 schedule: NoiseSchedule, seed: int, name: str,
                 num_samples: int) -> Tuple[np.ndarray, SamplerTrace]:
    """Порции по SAMPLE_CHUNK строк; порция i тянет поток "<name>/chunk-i"."""
    trace = SamplerTrace()
    parts = []
    for i, start in enumerate(range(0, num_samples, SAMPLE_CHUNK)):
        rows = min(SAMPLE_CHUNK, num_samples - start)
        rng = stream(seed, f"{name}/chunk-{i}")
        parts.append(sample_edlm(den, energy, scfg, schedule, rng, rows,
                                 trace))
    return np.concatenate(parts), trace


# --- команды -------------------------------------------------------------

def cmd_make_corpus(cfg: RunConfig) -> Dict[str, Any]:
    text = synthetic_grammar_text(cfg.sentences, stream(cfg.seed, "corpus"))
    atomic_write_text(_out(cfg), text)
    return _finish(cfg, chars=len(text), sentences=cfg.sentences)


def cmd_fit_ar(cfg: RunConfig) -> Dict[str, Any]:
    docs, vocab, corpus_digest = _docs(cfg)
    train, held = split_documents(docs, cfg.heldout_size)
    ar = ar_fit(train, cfg.order, cfg.smoothing, vocab.size)
    heldout_nll = float(-ar.token_logprobs(held).mean())
    save(_out(cfg), ar_checkpoint(ar, vocab, _meta(
        cfg, docs=len(train), corpus_digest=corpus_digest,
    )))
    return _finish(cfg, docs=len(train), heldout_docs=len(held),
                   heldout_nll=heldout_nll)


def cmd_train_denoiser(cfg: RunConfig) -> Dict[str, Any]:
    docs, vocab, corpus_digest = _docs(cfg)
    train, held = split_documents(docs, cfg.heldout_size)
    schedule = _schedule(cfg)
    init = FactorizedDenoiser.create(vocab.size, cfg.context_radius,
                                     cfg.architecture, cfg.hidden,
                                     stream(cfg.seed, "init"))
    model, trace = denoiser_train(
        init, train, schedule, cfg.train_steps, cfg.lr,
        stream(cfg.seed, "train"), batch_size=cfg.batch_size,
        max_grad_norm=cfg.max_grad_norm, heldout=held,
    )
    save(_out(cfg), denoiser_checkpoint(model, vocab, _meta(
        cfg, steps=cfg.train_steps, corpus_digest=corpus_digest,
    )))
    _write_trace(cfg, trace)
    return _finish(cfg, steps=cfg.train_steps, docs=len(train),
                   heldout_ce=heldout_cross_entropy(model, held, schedule))


def cmd_train_nce(cfg: RunConfig) -> Dict[str, Any]:
    den, vocab = _load_denoiser(cfg)
    docs, _, corpus_digest = _docs(cfg, vocab)
    train, held = split_documents(docs, cfg.heldout_size)
    schedule = _schedule(cfg)
    held_batch = make_batch(den, held, schedule,
                            stream(cfg.seed, "nce/heldout"),
                            max(cfg.heldout_size, 2))
    phi, trace = nce_train(nce_init(vocab.size), den, train, schedule,
                           cfg.train_steps, cfg.lr, stream(cfg.seed, "nce"),
                           batch_size=cfg.batch_size, heldout=held_batch)
    gap = energy_gap(phi, held_batch)
    save(_out(cfg), nce_checkpoint(phi, vocab, _meta(
        cfg, steps=cfg.train_steps, corpus_digest=corpus_digest,
    )))
    _write_trace(cfg, trace)
    final = trace[-1]["heldout_loss"] if trace else float("nan")
    return _finish(cfg, steps=cfg.train_steps, heldout_loss=final, **gap)


def _sampler_config(cfg: RunConfig, steps: int, k: int,
                    window: float) -> SamplerConfig:
    return SamplerConfig(num_steps=steps, importance_size=k, window=window,
                         seq_len=cfg.seq_len, seed=cfg.seed)


def cmd_sample(cfg: RunConfig) -> Dict[str, Any]:
    den, vocab = _load_denoiser(cfg)
    energy = _energy(cfg, den, vocab)
    scfg = _sampler_config(cfg, cfg.sample_steps, cfg.k, cfg.window)
    samples, trace = draw_samples(den, energy, scfg, _schedule(cfg),
                                  cfg.seed, "sample", cfg.num_samples)
    write_samples(_out(cfg), samples, vocab, _meta(cfg))
    stats: Dict[str, Any] = {"samples": len(samples),
                             "is_steps": trace.is_steps,
                             "mean_ess": trace.mean_ess}
    if cfg.ar:
        gen_ppl, entropy = generative_metrics(samples,
                                              _load_ar(cfg.ar, vocab))
        stats.update(gen_ppl=gen_ppl, entropy=entropy)
    return _finish(cfg, **stats)


def cmd_eval(cfg: RunConfig) -> Dict[str, Any]:
    den, vocab = _load_denoiser(cfg)
    energy = _energy(cfg, den, vocab)
    docs, _, _ = _docs(cfg, vocab)
    schedule = _schedule(cfg)
    ecfg = EvalConfig(cfg.estimator, cfg.mc_samples, cfg.discrete_steps,
                      cfg.bounds_n, cfg.stratified, cfg.seed)
    rows = corpus_metrics(energy, den, list(docs), schedule, ecfg)
    out = _out(cfg)
    write_csv(out, [r.as_dict() for r in rows], METRIC_COLUMNS, cfg.seed,
              cfg.digest())
    if cfg.diagnostics:
        profile = energy_profile(energy, den, docs[0], schedule,
                                 stream(cfg.seed, "eval/diagnostics"),
                                 ess_variant=cfg.ess_variant)
        write_csv(out + ".diagnostics.csv", profile, PROFILE_COLUMNS,
                  cfg.seed, cfg.digest())
    total = rows[-1]
    return _finish(cfg, docs=len(rows) - 1, nelbo=total.nelbo,
                   bpc=total.bpc, ppl=total.ppl)


def _read_grid(cfg: RunConfig) -> Dict[str, List[Any]]:
    if not cfg.grid:
        return dict(DEFAULT_BENCH_GRID)
    grid = read_json(_require(cfg.grid, "bench grid"))
    if not isinstance(grid, dict) or \
            any(not isinstance(grid.get(k), list) or not grid.get(k)
                for k in ("steps", "k", "window")):
        raise ConfigError(
            f"{cfg.grid}: grid must map steps, k and window to lists"
        )
    return grid


def _bench_cell(cfg: RunConfig, den, energy: EnergyModel, oracle: ARModel,
                schedule: NoiseSchedule, index: int, steps: int, k: int,
                window: float) -> Dict[str, Any]:
    row: Dict[str, Any] = {"cell": index, "steps": steps, "k": k,
                           "window": window, "error": ""}
    started = time.perf_counter()
    try:
        scfg = _sampler_config(cfg, steps, k, window)
        samples, trace = draw_samples(den, energy, scfg, schedule, cfg.seed,
                                      f"bench/steps-{steps}",
                                      cfg.num_samples)
        nll = sample_nll(samples, oracle)
        gen_ppl, entropy = generative_metrics(samples, oracle)
        se = float(gen_ppl * nll.std(ddof=1) / np.sqrt(len(nll))) \
            if len(nll) > 1 else float("nan")
        row.update(gen_ppl=gen_ppl, gen_ppl_se=se, entropy=entropy,
                   ess=trace.mean_ess, is_steps=trace.is_steps)
    except EdlmError as exc:
        log.error("bench cell %s failed: %s", index, exc)
        row.update(gen_ppl=float("nan"), gen_ppl_se=float("nan"),
                   entropy=float("nan"), ess=float("nan"), is_steps=0,
                   error=f"{type(exc).__name__}: {exc}")
    if cfg.timing:
        row["wall_s"] = time.perf_counter() - started
    return row


def cmd_bench(cfg: RunConfig) -> Dict[str, Any]:
    den, vocab = _load_denoiser(cfg)
    energy = _energy(cfg, den, vocab)
    oracle = _load_ar(cfg.ar, vocab)
    schedule = _schedule(cfg)
    grid = _read_grid(cfg)
    cells = list(itertools.product(grid["steps"], grid["k"], grid["window"]))
    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
        futures = [
            pool.submit(_bench_cell, cfg, den, energy, oracle, schedule, i,
                        int(n), int(k), float(w))
            for i, (n, k, w) in enumerate(cells)
        ]
        rows = [f.result() for f in futures]
    columns = BENCH_COLUMNS + (("wall_s",) if cfg.timing else ())
    write_csv(_out(cfg), rows, columns, cfg.seed, cfg.digest())
    failed = sum(1 for r in rows if r["error"])
    return _finish(cfg, cells=len(rows), failed=failed)


def cmd_verify(cfg: RunConfig) -> Dict[str, Any]:
    results = run_verify(cfg.seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name} {detail}")
    if cfg.out:
        rows = [{"check": n, "ok": int(ok), "detail": d}
                for n, ok, d in results]
        write_csv(cfg.out, rows, VERIFY_COLUMNS, cfg.seed, cfg.digest())
    failed = [n for n, ok, _ in results if not ok]
    return _finish(cfg, checks=len(results), failed=len(failed),
                   failed_checks=failed)


COMMANDS: Dict[str, Callable[[RunConfig], Dict[str, Any]]] = {
    "make-corpus": cmd_make_corpus,
    "fit-ar": cmd_fit_ar,
    "train-denoiser": cmd_train_denoiser,
    "train-nce": cmd_train_nce,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "verify": cmd_verify,
}


def process(cfg: RunConfig) -> Dict[str, Any]:
    return COMMANDS[cfg.command](cfg)
