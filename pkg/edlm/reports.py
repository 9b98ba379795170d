# -*- coding: utf-8 -*-
"""CSV-отчёты и файлы выборок.

Каждый CSV начинается строками-комментариями:
  # seed=<int>
  # config_digest=<12 hex>
  # format_version=<int>
затем заголовок и строки. Float пишется через repr.
"""
import csv
import io
import math
from typing import Any, Dict, Iterable, List, Sequence

from .constants import FORMAT_VERSION
from .corpus import Vocabulary, detokenize
from .utils import atomic_write_json, atomic_write_text


def _cell(value: Any) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def header_lines(seed: int, config_digest: str) -> List[str]:
    return [
        f"# seed={seed}",
        f"# config_digest={config_digest}",
        f"# format_version={FORMAT_VERSION}",
    ]


def render_csv(rows: Sequence[Dict[str, Any]], columns: Sequence[str],
               seed: int, config_digest: str) -> str:
    buf = io.StringIO()
    for line in header_lines(seed, config_digest):
        buf.write(line + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c, "")) for c in columns])
    return buf.getvalue()


def write_csv(path: str, rows: Sequence[Dict[str, Any]],
              columns: Sequence[str], seed: int, config_digest: str) -> None:
    atomic_write_text(path, render_csv(rows, columns, seed, config_digest))


def read_csv(path: str) -> Dict[str, Any]:
    """Обратное чтение: {"meta": {...}, "rows": [{...}]} (значения str)."""
    meta: Dict[str, str] = {}
    lines = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for line in f:
            if line.startswith("# "):
                key, _, value = line[2:].rstrip("\n").partition("=")
                meta[key] = value
            else:
                lines.append(line)
    return {"meta": meta, "rows": list(csv.DictReader(lines))}


# обратная косая черта экранируется первой
_LINE_ESCAPES = (("\\", "\\\\"), ("\n", "\\n"), ("\r", "\\r"))


def escape_line(text: str) -> str:
    for raw, escaped in _LINE_ESCAPES:
        text = text.replace(raw, escaped)
    return text


def write_samples(path: str, samples: Iterable[Sequence[int]],
                  vocab: Vocabulary, meta: Dict[str, Any]) -> None:
    """Одна детокенизированная строка на выборку; рядом <path>.meta.json
    с seed, config_digest и format_version.

    Обратная косая черта и переводы строк экранируются (\\\\, \\n, \\r).
    """
    text = "".join(escape_line(detokenize(s, vocab)) + "\n"
                   for s in samples)
    atomic_write_text(path, text)
    sidecar = dict(meta)
    sidecar["format_version"] = FORMAT_VERSION
    atomic_write_json(path + ".meta.json", sidecar)
