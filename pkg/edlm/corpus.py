# -*- coding: utf-8 -*-
"""Символьный корпус: словарь, токенизация, нарезка и синтетическая
грамматика."""
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .constants import DEFAULT_VOCAB_POLICY, TEXT8_ALPHABET, VOCAB_POLICIES
from .errors import DataError, DomainError
from .logging_conf import get_logger

log = get_logger("edlm.corpus")


@dataclass(frozen=True)
class Vocabulary:
    """Символы по возрастанию кода; id маски = len(chars)."""

    chars: str

    def __post_init__(self) -> None:
        if not self.chars:
            raise DataError("empty vocabulary")
        if "".join(sorted(set(self.chars))) != self.chars:
            raise DataError("vocabulary must be sorted unique characters")

    @classmethod
    def text8(cls) -> "Vocabulary":
        return cls(TEXT8_ALPHABET)

    @classmethod
    def infer(cls, text: str) -> "Vocabulary":
        return cls("".join(sorted(set(text))))

    @property
    def size(self) -> int:
        return len(self.chars)

    @property
    def mask_id(self) -> int:
        return len(self.chars)

    @property
    def index(self) -> Dict[str, int]:
        return {c: i for i, c in enumerate(self.chars)}


def tokenize(text: str, vocab: Vocabulary) -> np.ndarray:
    index = vocab.index
    ids = np.empty(len(text), dtype=np.int64)
    for pos, ch in enumerate(text):
        tok = index.get(ch)
        if tok is None:
            raise DataError(
                f"character {ch!r} at offset {pos} is outside the vocabulary"
            )
        ids[pos] = tok
    return ids


def detokenize(ids: Sequence[int], vocab: Vocabulary,
               mask_char: str = "_") -> str:
    """Обратное отображение; маска печатается как mask_char."""
    out = []
    for tok in np.asarray(ids).ravel():
        tok = int(tok)
        if tok == vocab.mask_id:
            out.append(mask_char)
        elif 0 <= tok < vocab.size:
            out.append(vocab.chars[tok])
        else:
            raise DataError(f"token id {tok} outside the vocabulary")
    return "".join(out)


def read_text(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return f.read()
    except UnicodeDecodeError as exc:
        raise DataError(
            f"{path}: not UTF-8 at byte offset {exc.start}"
        ) from exc
    except OSError as exc:
        raise DataError(f"{path}: cannot read corpus: {exc}") from exc


def normalize_text8(text: str) -> str:
    """Нижний регистр, переводы строк -> пробел."""
    return " ".join(text.lower().split("\n"))


def ingest_corpus(path: str, vocab_policy: str = DEFAULT_VOCAB_POLICY,
                  vocab: Optional[Vocabulary] = None,
                  ) -> Tuple[np.ndarray, Vocabulary]:
    """Файл -> поток id и словарь.

    text8: фиксированный алфавит пробел + a..z, текст приводится к нижнему
    регистру, переводы строк становятся пробелами. infer: отсортированные
    символы файла. Готовый vocab (из чекпоинта) имеет приоритет.
    """
    if vocab_policy not in VOCAB_POLICIES:
        raise DomainError(f"unknown vocab policy: {vocab_policy!r}")
    text = read_text(path)
    if vocab_policy == "text8":
        text = normalize_text8(text)
    if not text:
        raise DataError(f"{path}: empty corpus")
    if vocab is None:
        vocab = Vocabulary.text8() if vocab_policy == "text8" \
            else Vocabulary.infer(text)
    ids = tokenize(text, vocab)
    log.info("corpus %s: %s chars, V=%s (%s)", path, len(ids), vocab.size,
             vocab_policy)
    return ids, vocab


def chunk_documents(tokens: np.ndarray, length: int) -> np.ndarray:
    """Нарезка потока на (N, L) без перекрытия; хвост отбрасывается."""
    if length < 1:
        raise DomainError(f"length must be >= 1, got {length}")
    tokens = np.asarray(tokens, dtype=np.int64)
    n = len(tokens) // length
    if n == 0:
        raise DataError(
            f"corpus of {len(tokens)} tokens is shorter than L={length}"
        )
    return tokens[: n * length].reshape(n, length)


def split_documents(docs: np.ndarray, heldout: int,
                    ) -> Tuple[np.ndarray, np.ndarray]:
    """Последние min(heldout, N-1) документов откладываются.

    Один документ служит и обучению, и отложенной части.
    """
    if heldout < 1:
        raise DomainError(f"heldout must be >= 1, got {heldout}")
    if len(docs) < 2:
        return docs, docs
    k = min(heldout, len(docs) - 1)
    return docs[:-k], docs[-k:]


# --- синтетическая грамматика --------------------------------------------

_DETERMINERS = ("the", "a", "every", "some")
_ADJECTIVES = ("quick", "lazy", "small", "green", "quiet", "old")
_NOUNS = ("fox", "dog", "cat", "bird", "river", "tree", "house")
_VERBS = ("sees", "jumps over", "likes", "finds", "follows")
_ADVERBS = ("today", "slowly", "again", "at night")


def _phrase(rng: np.random.Generator) -> List[str]:
    words = [str(rng.choice(_DETERMINERS))]
    if rng.random() < 0.5:
        words.append(str(rng.choice(_ADJECTIVES)))
    words.append(str(rng.choice(_NOUNS)))
    return words


def synthetic_grammar_text(n_sentences: int,
                           rng: np.random.Generator) -> str:
    """Предложения вида DET [ADJ] NOUN VERB DET [ADJ] NOUN [ADV] над
    алфавитом text8, разделённые пробелом."""
    if n_sentences < 1:
        raise DomainError(f"n_sentences must be >= 1, got {n_sentences}")
    sentences = []
    for _ in range(n_sentences):
        words = _phrase(rng) + [str(rng.choice(_VERBS))] + _phrase(rng)
        if rng.random() < 0.3:
            words.append(str(rng.choice(_ADVERBS)))
        sentences.append(" ".join(words))
    return " ".join(sentences)
