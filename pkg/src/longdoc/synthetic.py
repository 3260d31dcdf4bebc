"""Synthetic multi-page purchase orders.

Each document has header fields placed once (document number, date, total
amount) and table fields repeated per line item (item id, quantity), plus
distractors that share their formats: a reference number, a delivery
date, an optional subtotal, unit prices and line amounts. The page header is
repeated on every page but only labelled on the first one. Filler text brings
every document to an exact word count drawn from its length category.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np

from .documents import Document, Page, Span, Word

FIELDS = ("document_number", "date", "total_amount", "item_id", "quantity")
HEADER_FIELDS = ("document_number", "date", "total_amount")
TABLE_FIELDS = ("item_id", "quantity")

CATEGORIES = ("short", "medium", "long")
CATEGORY_BOUNDS = ((1, 512), (513, 2048), (2049, math.inf))

PAGE_W, PAGE_H = 612, 792
MARGIN = 40
CHAR_W = 5

COL_ITEM, COL_DESC, COL_QTY, COL_PRICE, COL_AMOUNT = 40, 130, 360, 425, 500

_MONTHS = "January February March April May June July August September October November December".split()
_COMPANIES = "Acme Globex Initech Umbrella Stark Wayne Hooli Vandelay Wonka Cyberdyne Soylent Tyrell".split()
_SUFFIXES = "Inc Ltd GmbH Corp LLC SA".split()
_STREETS = "Main Oak Pine Maple Cedar Elm Lake Hill Park River".split()
_CITIES = "Springfield Rivertown Lakeside Fairview Greenville Madison Georgetown Clinton".split()
_PRODUCTS = (
    "steel bolt washer bracket valve pump filter cable sensor relay switch bearing gasket hose "
    "clamp panel fitting motor belt spring nozzle adapter housing seal lever"
).split()
_ADJECTIVES = "small large heavy light blue red galvanized stainless industrial compact standard premium".split()
_FILLER = (
    "the supplier shall deliver goods described in this order according to agreed terms and "
    "conditions all invoices must reference order number payment within days of receipt "
    "prices include packaging unless otherwise stated shipping address must be indicated on "
    "each parcel buyer reserves right to reject damaged items quality inspection will be "
    "performed upon arrival please confirm acceptance by return contact our purchasing "
    "department for any question regarding this document warranty period applies to "
    "materials workmanship delivery schedule partial shipments are not accepted without "
    "prior approval late delivery may result in penalties as specified in framework agreement"
).split()


def length_category(n_tokens: int) -> str:
    for name, (lo, hi) in zip(CATEGORIES, CATEGORY_BOUNDS):
        if lo <= n_tokens <= hi:
            return name
    return "short"


@dataclass(frozen=True)
class SyntheticConfig:
    seed: int = 0
    count: int = 100
    length_mix: tuple[float, float, float] = (0.55, 0.40, 0.05)
    short_range: tuple[int, int] = (80, 512)
    medium_range: tuple[int, int] = (513, 2048)
    long_range: tuple[int, int] = (2049, 3000)
    words_per_page: int = 380
    max_pages: int = 6
    subtotal_prob: float = 0.3
    id_prefix: str = "doc"

    def validate(self) -> "SyntheticConfig":
        if self.count < 0:
            raise ValueError("count must be non-negative")
        mix = self.length_mix
        if len(mix) != 3 or min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-6:
            raise ValueError(f"length_mix must be three non-negative fractions summing to 1, got {mix}")
        for (lo, hi), (clo, chi) in zip((self.short_range, self.medium_range, self.long_range), CATEGORY_BOUNDS):
            if not (clo <= lo <= hi <= chi):
                raise ValueError(f"length range {(lo, hi)} leaves its category {(clo, chi)}")
        if self.short_range[0] < 60:
            raise ValueError("documents need at least 60 words for the fixed layout")
        if self.words_per_page < 50 or not 1 <= self.max_pages:
            raise ValueError("words_per_page must be >= 50 and max_pages >= 1")
        return self


# A line is a list of (text, x, field, group); words of one labelled value
# share a group id.
_Line = list


def _place(words, x, field=None, group=None):
    out = []
    for w in words:
        out.append((w, x, field, group))
        x += CHAR_W * len(w) + 6
    return out


class _Builder:
    def __init__(self, rng: random.Random, cfg: SyntheticConfig):
        self.rng = rng
        self.cfg = cfg
        self.groups = 0

    def group(self):
        self.groups += 1
        return self.groups

    def doc_number(self):
        r = self.rng
        kind = r.randrange(4)
        if kind == 0:
            return [f"PO-{r.randrange(10000, 99999)}"]
        if kind == 1:
            return [str(r.randrange(100000, 999999))]
        if kind == 2:
            return [f"SO{r.randrange(1000, 9999)}-{r.randrange(10, 99)}"]
        return ["PO", str(r.randrange(10000, 99999))]

    def date(self):
        r = self.rng
        d, m, y = r.randrange(1, 29), r.randrange(1, 13), r.randrange(2015, 2024)
        kind = r.randrange(4)
        if kind == 0:
            return [f"{d:02d}/{m:02d}/{y}"]
        if kind == 1:
            return [f"{y}-{m:02d}-{d:02d}"]
        if kind == 2:
            return [str(d), _MONTHS[m - 1], str(y)]
        return [_MONTHS[m - 1], f"{d},", str(y)]

    def amount(self, low=10.0, high=20000.0):
        value = self.rng.uniform(low, high)
        return f"{value:,.2f}"

    def item_id(self):
        r = self.rng
        letters = "".join(r.choice("ABCDEFGHJKLMNPRSTUVWXYZ") for _ in range(2))
        if r.random() < 0.2:
            return [letters, str(r.randrange(1000, 99999))]
        return [f"{letters}-{r.randrange(1000, 99999)}"]

    def filler_words(self, n):
        r = self.rng
        out = []
        for _ in range(n):
            if r.random() < 0.04:
                out.append(str(r.randrange(1, 120)))
            else:
                out.append(r.choice(_FILLER))
        return out

    def wrap(self, words) -> list[_Line]:
        lines, line, x = [], [], MARGIN
        for w in words:
            width = CHAR_W * len(w) + 6
            if line and x + width > PAGE_W - MARGIN:
                lines.append(line)
                line, x = [], MARGIN
            line.append((w, x, None, None))
            x += width
        if line:
            lines.append(line)
        return lines


def _page_header(docnum, page, n_pages, labelled, b: _Builder) -> _Line:
    field = "document_number" if labelled else None
    group = b.group() if labelled else None
    return (
        _place(["Order", "No:"], MARGIN)
        + _place(docnum, MARGIN + 60, field, group)
        + _place(["Page", str(page + 1), "of", str(n_pages)], 470)
    )


def _generate_one(cfg: SyntheticConfig, index: int) -> Document:
    rng = random.Random(f"{cfg.seed}:{index}")
    b = _Builder(rng, cfg)
    cat = rng.choices(range(3), weights=cfg.length_mix)[0]
    lo, hi = (cfg.short_range, cfg.medium_range, cfg.long_range)[cat]
    target = rng.randint(lo, hi)
    n_pages = min(max(math.ceil(target / cfg.words_per_page), 1), cfg.max_pages)

    docnum = b.doc_number()
    company = [rng.choice(_COMPANIES), rng.choice(_SUFFIXES)]
    header: list[_Line] = [
        _place(["PURCHASE", "ORDER"], MARGIN) + _place(company, 400),
        _page_header(docnum, 0, n_pages, True, b),
        _place(["Date:"], MARGIN) + _place(b.date(), MARGIN + 60, "date", b.group()),
        _place(["Ref:"], MARGIN) + _place(b.doc_number(), MARGIN + 60),
        _place(["Delivery", "Date:"], MARGIN) + _place(b.date(), MARGIN + 90),
        _place(["Vendor:", rng.choice(_COMPANIES), rng.choice(_SUFFIXES)], MARGIN),
        _place([str(rng.randrange(1, 999)), rng.choice(_STREETS), "Street"], MARGIN),
        _place([rng.choice(_CITIES), str(rng.randrange(10000, 99999))], MARGIN),
        _place(["Phone:", f"+1-{rng.randrange(200, 999)}-{rng.randrange(1000, 9999)}"], MARGIN),
    ]
    table_head = (
        _place(["Item"], COL_ITEM)
        + _place(["Description"], COL_DESC)
        + _place(["Qty"], COL_QTY)
        + _place(["Price"], COL_PRICE)
        + _place(["Amount"], COL_AMOUNT)
    )

    def item_line():
        desc = [rng.choice(_ADJECTIVES)] + [rng.choice(_PRODUCTS) for _ in range(rng.randint(1, 3))]
        return (
            _place(b.item_id(), COL_ITEM, "item_id", b.group())
            + _place(desc, COL_DESC)
            + _place([str(rng.randint(1, 500))], COL_QTY, "quantity", b.group())
            + _place([b.amount(1, 900)], COL_PRICE)
            + _place([b.amount(10, 9000)], COL_AMOUNT)
        )

    totals: list[_Line] = []
    if rng.random() < cfg.subtotal_prob:
        totals.append(_place(["Subtotal:"], COL_PRICE - 20) + _place([b.amount()], COL_AMOUNT))
    total_words = ([rng.choice(["USD", "EUR"])] if rng.random() < 0.4 else []) + [b.amount()]
    totals.append(_place(["Total:"], COL_PRICE - 20) + _place(total_words, COL_AMOUNT - 30, "total_amount", b.group()))

    def count(lines):
        return sum(len(line) for line in lines)

    repeat_words = (n_pages - 1) * (6 + len(docnum))
    fixed = count(header) + count([table_head]) + count(totals) + repeat_words
    n_items = min(max(round(target * rng.uniform(0.25, 0.6) / 9), 1), 50)
    items = [item_line() for _ in range(n_items)]
    while items and fixed + count(items) > target and len(items) > 1:
        items.pop()
    filler = target - fixed - count(items)
    if filler < 0:
        raise ValueError(f"target length {target} too small for the fixed layout")
    before = min(filler, rng.randint(0, 40))
    body = header + b.wrap(b.filler_words(before)) + [table_head] + items + totals + b.wrap(b.filler_words(filler - before))

    page_groups = [list(g) for g in np.array_split(np.arange(len(body)), n_pages)]
    pages, spans = [], []
    for p, rows in enumerate(page_groups):
        lines = [body[i] for i in rows]
        if p > 0:
            lines = [_page_header(docnum, p, n_pages, False, b)] + lines
        line_h = min(14.0, (PAGE_H - 2 * MARGIN) / max(len(lines), 1))
        words, open_groups = [], {}
        for r, line in enumerate(lines):
            y0 = MARGIN + r * line_h
            y1 = y0 + 0.7 * line_h
            for text, x, field, group in line:
                x1 = min(x + CHAR_W * len(text), PAGE_W)
                words.append(Word(text, (int(x), int(round(y0)), int(x1), int(round(y1)))))
                if field is not None:
                    lo_hi = open_groups.setdefault(group, [field, len(words) - 1, len(words) - 1])
                    lo_hi[2] = len(words) - 1
        pages.append(Page(PAGE_W, PAGE_H, tuple(words)))
        spans.extend(Span(p, s, e, f) for f, s, e in open_groups.values())
    doc = Document(f"{cfg.id_prefix}-{cfg.seed}-{index:06d}", tuple(pages), tuple(sorted(spans)))
    assert doc.n_words == target, (doc.n_words, target)
    return doc.validate()


def generate_synthetic(cfg: SyntheticConfig) -> list[Document]:
    cfg.validate()
    return [_generate_one(cfg, i) for i in range(cfg.count)]
