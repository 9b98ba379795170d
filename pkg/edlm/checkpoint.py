# -*- coding: utf-8 -*-
"""Чекпоинты: версионированный JSON с типизированными массивами.

{
  "format_version": 1,
  "kind": "denoiser" | "ar" | "nce",
  "vocab": "<символы>",
  "config": {...},            # гиперпараметры модели
  "params": {"имя": {"dtype", "shape", "data"}},
  "meta": {"steps", "seed", "corpus_digest", ...}
}

float пишется кратчайшим repr, который читается обратно точно:
load(save(m)) восстанавливает параметры бит-в-бит.
"""
import os
from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np

from .constants import FORMAT_VERSION
from .corpus import Vocabulary
from .errors import CheckpointError, ConfigError
from .logging_conf import get_logger
from .models import ARModel, FactorizedDenoiser
from .utils import atomic_write_json, read_json

log = get_logger("edlm.checkpoint")

KINDS = ("denoiser", "ar", "nce")


def encode_array(arr: np.ndarray) -> Dict[str, Any]:
    arr = np.asarray(arr)
    return {"dtype": str(arr.dtype), "shape": list(arr.shape),
            "data": arr.ravel().tolist()}


def decode_array(obj: Dict[str, Any]) -> np.ndarray:
    try:
        arr = np.array(obj["data"], dtype=np.dtype(obj["dtype"]))
        return arr.reshape(tuple(obj["shape"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupted array: {exc}") from exc


@dataclass
class Checkpoint:
    kind: str
    vocab: Vocabulary
    params: Dict[str, np.ndarray]
    config: Dict[str, Any] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def to_json(self) -> Dict[str, Any]:
        return {
            "format_version": self.format_version,
            "kind": self.kind,
            "vocab": self.vocab.chars,
            "config": self.config,
            "params": {k: encode_array(v) for k, v in self.params.items()},
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "Checkpoint":
        version = data.get("format_version")
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint format_version {version!r}, "
                f"expected {FORMAT_VERSION}"
            )
        kind = data.get("kind")
        if kind not in KINDS:
            raise CheckpointError(f"unknown checkpoint kind {kind!r}")
        try:
            params = {k: decode_array(v) for k, v in data["params"].items()}
            vocab = Vocabulary(data["vocab"])
        except (KeyError, AttributeError) as exc:
            raise CheckpointError(f"checkpoint misses {exc}") from exc
        return cls(kind, vocab, params, dict(data.get("config") or {}),
                   dict(data.get("meta") or {}), version)


def save(path: str, ckpt: Checkpoint) -> None:
    atomic_write_json(path, ckpt.to_json())
    log.info("saved %s checkpoint to %s", ckpt.kind, path)


def load(path: str, kind: str) -> Checkpoint:
    if not os.path.isfile(path):
        raise ConfigError(f"checkpoint not found: {path}")
    data = read_json(path)
    if not isinstance(data, dict):
        raise CheckpointError(f"{path}: not a JSON checkpoint")
    ckpt = Checkpoint.from_json(data)
    if ckpt.kind != kind:
        raise CheckpointError(
            f"{path}: expected a {kind} checkpoint, got {ckpt.kind}"
        )
    return ckpt


# --- модели <-> чекпоинты -----------------------------------------------

def denoiser_checkpoint(model: FactorizedDenoiser, vocab: Vocabulary,
                        meta: Dict[str, Any]) -> Checkpoint:
    config = {"radius": model.radius, "architecture": model.architecture,
              "hidden": model.hidden}
    return Checkpoint("denoiser", vocab, dict(model.params), config, meta)


def denoiser_from(ckpt: Checkpoint) -> FactorizedDenoiser:
    c = ckpt.config
    try:
        model = FactorizedDenoiser(ckpt.vocab.size, int(c["radius"]),
                                   c["architecture"], int(c["hidden"]),
                                   dict(ckpt.params))
    except KeyError as exc:
        raise CheckpointError(f"denoiser config misses {exc}") from exc
    expected = model.param_shapes()
    for name, shape in expected.items():
        if name not in model.params or model.params[name].shape != shape:
            raise CheckpointError(f"parameter {name} has the wrong shape")
    return model


def ar_checkpoint(model: ARModel, vocab: Vocabulary,
                  meta: Dict[str, Any]) -> Checkpoint:
    """Счётчики хранятся разреженно: (контекст, токен) -> count."""
    rows, cols = np.nonzero(model.counts)
    params = {
        "rows": rows.astype(np.int64),
        "cols": cols.astype(np.int64),
        "counts": model.counts[rows, cols],
    }
    config = {"order": model.order, "smoothing": model.smoothing}
    return Checkpoint("ar", vocab, params, config, meta)


def ar_from(ckpt: Checkpoint) -> ARModel:
    v = ckpt.vocab.size
    try:
        order = int(ckpt.config["order"])
        smoothing = float(ckpt.config["smoothing"])
        counts = np.zeros(((v + 1) ** order, v))
        counts[ckpt.params["rows"], ckpt.params["cols"]] = \
            ckpt.params["counts"]
    except (KeyError, IndexError) as exc:
        raise CheckpointError(f"corrupted AR checkpoint: {exc}") from exc
    return ARModel.from_counts(counts, order, v, smoothing)


def nce_checkpoint(params: np.ndarray, vocab: Vocabulary,
                   meta: Dict[str, Any]) -> Checkpoint:
    return Checkpoint("nce", vocab, {"phi": np.asarray(params)}, {}, meta)


def nce_from(ckpt: Checkpoint) -> np.ndarray:
    try:
        return ckpt.params["phi"]
    except KeyError as exc:
        raise CheckpointError("NCE checkpoint misses phi") from exc
