"""Document model and the line-delimited JSON corpus format.

One document per line::

    {"id": "...",
     "pages": [{"width": W, "height": H,
                "words": [{"text": "...", "box": [x0, y0, x1, y1]}, ...]}, ...],
     "spans": [{"class": "...", "page": p, "start": s, "end": e}, ...]}

``start`` and ``end`` are word indices within page ``p``, both inclusive.
Prediction files use the same ``id`` and ``spans`` keys and nothing else.
"""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path

GRID = 1000


@dataclass(frozen=True)
class Word:
    text: str
    box: tuple[int, int, int, int]


@dataclass(frozen=True)
class Page:
    width: float
    height: float
    words: tuple[Word, ...]


@dataclass(frozen=True, order=True)
class Span:
    page: int
    start: int
    end: int
    label: str

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class Document:
    id: str
    pages: tuple[Page, ...]
    spans: tuple[Span, ...] = field(default_factory=tuple)

    @property
    def n_words(self) -> int:
        return sum(len(p.words) for p in self.pages)

    def validate(self) -> "Document":
        for p, page in enumerate(self.pages):
            if page.width <= 0 or page.height <= 0:
                raise ValueError(f"{self.id}: page {p} has non-positive dimensions")
            for w, word in enumerate(page.words):
                x0, y0, x1, y1 = word.box
                if x0 > x1 or y0 > y1:
                    raise ValueError(f"{self.id}: page {p} word {w} has an inverted box {word.box}")
        by_page: dict[int, list[Span]] = {}
        for span in self.spans:
            if not 0 <= span.page < len(self.pages):
                raise ValueError(f"{self.id}: span {span} points at a missing page")
            if not 0 <= span.start <= span.end < len(self.pages[span.page].words):
                raise ValueError(f"{self.id}: span {span} is out of bounds")
            by_page.setdefault(span.page, []).append(span)
        for spans in by_page.values():
            spans.sort()
            for a, b in zip(spans, spans[1:]):
                if b.start <= a.end:
                    raise ValueError(f"{self.id}: spans {a} and {b} overlap")
        return self


def _scale(value, dim) -> int:
    if isinstance(value, int) and isinstance(dim, int):
        # exact floor(value * 1000 / dim + 1/2)
        scaled = (2 * value * GRID + dim) // (2 * dim)
    else:
        scaled = math.floor(value * GRID / dim + 0.5)
    return min(max(int(scaled), 0), GRID)


def normalize_boxes(doc: Document) -> Document:
    """Scale every box onto the 0-1000 grid (round half up, clamped).

    Normalised pages report a 1000 x 1000 size, so calling this twice is a
    no-op.
    """
    pages = []
    for p, page in enumerate(doc.pages):
        w, h = page.width, page.height
        if not (w > 0 and h > 0):
            raise ValueError(f"{doc.id}: page {p} has non-positive dimensions ({w} x {h})")
        words = tuple(
            Word(word.text, (_scale(word.box[0], w), _scale(word.box[1], h), _scale(word.box[2], w), _scale(word.box[3], h)))
            for word in page.words
        )
        pages.append(Page(GRID, GRID, words))
    return Document(doc.id, tuple(pages), doc.spans)


def span_to_json(span: Span) -> dict:
    return {"class": span.label, "page": span.page, "start": span.start, "end": span.end}


def span_from_json(obj: dict) -> Span:
    return Span(int(obj["page"]), int(obj["start"]), int(obj["end"]), str(obj["class"]))


def document_to_json(doc: Document) -> dict:
    return {
        "id": doc.id,
        "pages": [
            {"width": p.width, "height": p.height, "words": [{"text": w.text, "box": list(w.box)} for w in p.words]}
            for p in doc.pages
        ],
        "spans": [span_to_json(s) for s in doc.spans],
    }


def document_from_json(obj: dict) -> Document:
    pages = tuple(
        Page(
            p["width"],
            p["height"],
            tuple(Word(str(w["text"]), tuple(int(c) for c in w["box"])) for w in p["words"]),
        )
        for p in obj["pages"]
    )
    spans = tuple(span_from_json(s) for s in obj.get("spans", ()))
    return Document(str(obj["id"]), pages, spans)


def _write_lines(records: Iterable[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


def _read_lines(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None


def write_corpus(docs: Iterable[Document], path: str | Path) -> None:
    _write_lines((document_to_json(d) for d in docs), path)


def read_corpus(path: str | Path) -> list[Document]:
    return [document_from_json(obj).validate() for obj in _read_lines(path)]


def write_predictions(predictions: dict[str, list[Span]], path: str | Path) -> None:
    _write_lines(({"id": doc_id, "spans": [span_to_json(s) for s in spans]} for doc_id, spans in predictions.items()), path)


def read_predictions(path: str | Path) -> dict[str, list[Span]]:
    out: dict[str, list[Span]] = {}
    for obj in _read_lines(path):
        doc_id = str(obj["id"])
        if doc_id in out:
            raise ValueError(f"{path}: duplicate document id {doc_id!r}")
        out[doc_id] = [span_from_json(s) for s in obj.get("spans", ())]
    return out
