"""BIESO span tagging.

Spans are ``(label, start, end)`` triples with inclusive ``end``. Encoding
is strict; decoding is lenient so that arbitrary model output still yields
spans: an ``I``/``E`` with no open span of the same label starts a new one.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence

OUTSIDE = "O"


def tag_set(labels: Iterable[str]) -> list[str]:
    """``O`` followed by ``B-/I-/E-/S-`` tags for every label."""
    return [OUTSIDE] + [f"{p}-{label}" for label in labels for p in "BIES"]


def bieso_encode(spans: Iterable[tuple[str, int, int]], length: int) -> list[str]:
    tags = [OUTSIDE] * length
    owner: list[tuple[str, int, int] | None] = [None] * length
    for span in spans:
        label, start, end = span
        if not 0 <= start <= end < length:
            raise ValueError(f"span {span} out of bounds for {length} tokens")
        for i in range(start, end + 1):
            if owner[i] is not None:
                raise ValueError(f"spans {owner[i]} and {span} overlap at token {i}")
            owner[i] = span
        if start == end:
            tags[start] = f"S-{label}"
        else:
            tags[start] = f"B-{label}"
            for i in range(start + 1, end):
                tags[i] = f"I-{label}"
            tags[end] = f"E-{label}"
    return tags


def _split(tag: str) -> tuple[str, str | None]:
    if len(tag) > 2 and tag[1] == "-" and tag[0] in "BIES":
        return tag[0], tag[2:]
    return OUTSIDE, None


def bieso_decode(tags: Sequence[str]) -> list[tuple[str, int, int]]:
    spans = []
    open_label: str | None = None
    open_start = 0

    def close(end):
        nonlocal open_label
        if open_label is not None:
            spans.append((open_label, open_start, end))
            open_label = None

    for i, tag in enumerate(tags):
        prefix, label = _split(tag)
        if prefix == OUTSIDE:
            close(i - 1)
        elif prefix == "S":
            close(i - 1)
            spans.append((label, i, i))
        elif prefix == "B":
            close(i - 1)
            open_label, open_start = label, i
        else:
            if open_label != label:
                close(i - 1)
                open_label, open_start = label, i
            if prefix == "E":
                close(i)
    close(len(tags) - 1)
    return spans
