# -*- coding: utf-8 -*-
import hashlib

import numpy as np


def _name_key(name: str) -> int:
    raw = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(raw[:8], "little")


def stream(seed: int, name: str) -> np.random.Generator:
    """Независимый генератор из корневого seed и имени подпотока.

    Имена иерархические: "train", "sample", "bench/cell-3", ...
    """
    seq = np.random.SeedSequence(
        entropy=int(seed), spawn_key=(_name_key(name),)
    )
    return np.random.default_rng(seq)
