"""Tokenised documents and the two chunking strategies.

``chunk_fixed`` cuts the sub-token sequence into consecutive slices of
``n_max``. ``chunk_split_page`` also starts a new chunk at each page and falls
back to fixed slices inside pages that are too long. A span cut by a chunk
boundary is re-tagged so each fragment is valid BIESO on its own; only the
first sub-token of a word carries a tag, continuation pieces get ``None``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bieso import bieso_encode
from .documents import Document, Span
from .tokenizer import Tokenizer


@dataclass
class TokenSequence:
    doc_id: str
    ids: np.ndarray  # (M,)
    boxes: np.ndarray  # (M, 4) on the 0-1000 grid
    pages: np.ndarray  # (M,)
    word_of: np.ndarray  # (M,) global word index
    first: np.ndarray  # (M,) True on the first piece of each word
    word_pos: list[tuple[int, int]]  # global word -> (page, index within page)
    spans: tuple[Span, ...]

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class Chunk:
    doc_id: str
    offset: int
    ids: np.ndarray
    boxes: np.ndarray
    pages: np.ndarray
    positions: np.ndarray
    word_of: np.ndarray
    first: np.ndarray
    tags: list[str | None]

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def word_ids(self) -> np.ndarray:
        """Global indices of the words whose first piece lies in this chunk."""
        return self.word_of[self.first]


def tokenize_document(doc: Document, tokenizer: Tokenizer) -> TokenSequence:
    ids, boxes, pages, word_of, first, word_pos = [], [], [], [], [], []
    for p, page in enumerate(doc.pages):
        for w, word in enumerate(page.words):
            g = len(word_pos)
            word_pos.append((p, w))
            pieces = tokenizer.encode_word(word.text)
            for j, tok in enumerate(pieces):
                ids.append(tok)
                boxes.append(word.box)
                pages.append(p)
                word_of.append(g)
                first.append(j == 0)
    return TokenSequence(
        doc.id,
        np.asarray(ids, dtype=np.int64),
        np.asarray(boxes, dtype=np.int64).reshape(-1, 4),
        np.asarray(pages, dtype=np.int64),
        np.asarray(word_of, dtype=np.int64),
        np.asarray(first, dtype=bool),
        word_pos,
        doc.spans,
    )


def boundaries_fixed(n: int, n_max: int) -> list[tuple[int, int]]:
    if n_max < 1:
        raise ValueError("n_max must be positive")
    return [(s, min(s + n_max, n)) for s in range(0, n, n_max)]


def boundaries_split_page(pages: np.ndarray, n_max: int) -> list[tuple[int, int]]:
    if n_max < 1:
        raise ValueError("n_max must be positive")
    pages = np.asarray(pages)
    if len(pages) == 0:
        return []
    starts = [0] + [int(i) for i in np.flatnonzero(pages[1:] != pages[:-1]) + 1]
    ends = starts[1:] + [len(pages)]
    out = []
    for s, e in zip(starts, ends):
        out.extend((s + a, s + b) for a, b in boundaries_fixed(e - s, n_max))
    return out


def _global_spans(seq: TokenSequence) -> list[tuple[str, int, int]]:
    page_offset: dict[int, int] = {}
    for g, (p, w) in enumerate(seq.word_pos):
        if w == 0:
            page_offset[p] = g
    return [(s.label, page_offset[s.page] + s.start, page_offset[s.page] + s.end) for s in seq.spans]


def _make_chunks(seq: TokenSequence, bounds: list[tuple[int, int]]) -> list[Chunk]:
    spans = _global_spans(seq)
    chunks = []
    for s, e in bounds:
        first = seq.first[s:e]
        words = seq.word_of[s:e][first]
        tags: list[str | None] = [None] * (e - s)
        if len(words):
            lo, hi = int(words[0]), int(words[-1])
            local = [
                (label, max(a, lo) - lo, min(b, hi) - lo) for label, a, b in spans if a <= hi and b >= lo
            ]
            word_tags = bieso_encode(local, hi - lo + 1)
            for t, slot in enumerate(np.flatnonzero(first)):
                tags[slot] = word_tags[t]
        chunks.append(
            Chunk(
                seq.doc_id,
                s,
                seq.ids[s:e],
                seq.boxes[s:e],
                seq.pages[s:e],
                np.arange(e - s),
                seq.word_of[s:e],
                first,
                tags,
            )
        )
    return chunks


def chunk_fixed(seq: TokenSequence, n_max: int) -> list[Chunk]:
    return _make_chunks(seq, boundaries_fixed(len(seq), n_max))


def chunk_split_page(seq: TokenSequence, n_max: int) -> list[Chunk]:
    return _make_chunks(seq, boundaries_split_page(seq.pages, n_max))


CHUNKERS = {"fixed": chunk_fixed, "split_page": chunk_split_page}


def reassemble(chunks: list[Chunk]) -> dict[str, np.ndarray]:
    """Concatenate chunks by offset; raises on gaps or overlaps."""
    ordered = sorted(chunks, key=lambda c: c.offset)
    pos = 0
    for c in ordered:
        if c.offset != pos:
            raise ValueError(f"chunk at offset {c.offset} leaves a gap or overlap at {pos}")
        pos += len(c)
    return {
        name: np.concatenate([getattr(c, name) for c in ordered]) if ordered else np.zeros(0, dtype=np.int64)
        for name in ("ids", "boxes", "pages", "word_of", "first")
    }
