"""Corpus-to-predictions plumbing shared by the CLI and the experiments.

A :class:`Tagger` bundles a model with its tokenizer, label list and chunking
strategy. Prediction tags every chunk, decodes BIESO per chunk, merges
fragments that meet at a chunk boundary and splits anything that crosses a
page, so output spans always live on one page.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .bieso import bieso_decode, tag_set
from .chunking import CHUNKERS, Chunk, tokenize_document
from .documents import Document, Span, normalize_boxes, read_corpus, write_predictions
from .model import LayoutEncoder, ModelConfig
from .synthetic import SyntheticConfig, generate_synthetic
from .tokenizer import Tokenizer
from .training import TrainConfig, evaluate_f1, finetune_tagging, mlm_pretrain, tagging_examples

log = logging.getLogger(__name__)


def corpus_labels(docs: Sequence[Document]) -> list[str]:
    return sorted({s.label for d in docs for s in d.spans})


def train_tokenizer(docs: Sequence[Document], **kw) -> Tokenizer:
    return Tokenizer.train((w.text for d in docs for p in d.pages for w in p.words), **kw)


@dataclass
class Tagger:
    model: LayoutEncoder
    tokenizer: Tokenizer
    labels: list[str]
    chunker: str = "split_page"

    def __post_init__(self):
        if self.chunker not in CHUNKERS:
            raise ValueError(f"unknown chunker {self.chunker!r}; expected one of {sorted(CHUNKERS)}")
        self.tags = tag_set(self.labels)
        if self.model.config.num_labels != len(self.tags):
            raise ValueError(f"model has {self.model.config.num_labels} outputs for {len(self.tags)} tags")

    @property
    def n_max(self) -> int:
        return self.model.config.max_len

    def chunks(self, doc: Document) -> list[Chunk]:
        seq = tokenize_document(normalize_boxes(doc), self.tokenizer)
        return CHUNKERS[self.chunker](seq, self.n_max)

    def predict(self, doc: Document) -> list[Span]:
        fragments: list[list] = []  # [label, first global word, last global word]
        prev_last = None
        for chunk in self.chunks(doc):
            words = chunk.word_ids
            if not len(words):
                continue
            logits = self.model.logits(self.model.encode(chunk))[chunk.first]
            word_tags = [self.tags[i] for i in logits.argmax(axis=1)]
            for n, (label, s, e) in enumerate(bieso_decode(word_tags)):
                a, b = int(words[s]), int(words[e])
                joins = (
                    n == 0
                    and s == 0
                    and fragments
                    and fragments[-1][0] == label
                    and fragments[-1][2] == prev_last
                    and a == prev_last + 1
                )
                if joins:
                    fragments[-1][2] = b
                else:
                    fragments.append([label, a, b])
            prev_last = int(words[-1])
        return _to_page_spans(doc, fragments)

    def predict_corpus(self, docs: Sequence[Document]) -> dict[str, list[Span]]:
        return {d.id: self.predict(d) for d in docs}

    def save(self, path) -> None:
        self.model.save(path, extra={"tokenizer": json.loads(self.tokenizer.to_json()), "labels": self.labels, "chunker": self.chunker})

    @classmethod
    def load(cls, path) -> "Tagger":
        model, extra = LayoutEncoder.load(path)
        missing = {"tokenizer", "labels", "chunker"} - set(extra)
        if missing:
            raise ValueError(f"{path} is missing tagger metadata: {sorted(missing)}")
        return cls(model, Tokenizer.from_json(json.dumps(extra["tokenizer"])), list(extra["labels"]), extra["chunker"])


def _to_page_spans(doc: Document, fragments) -> list[Span]:
    page_of, index_of = [], []
    for p, page in enumerate(doc.pages):
        page_of.extend([p] * len(page.words))
        index_of.extend(range(len(page.words)))
    spans = []
    for label, a, b in fragments:
        start = a
        for g in range(a, b + 1):
            if g == b or page_of[g + 1] != page_of[g]:
                spans.append(Span(page_of[g], index_of[start], index_of[g], label))
                start = g + 1
    return sorted(spans)


# -- experiments ---------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Everything ``longdoc train`` needs; loaded from a JSON file."""

    train: str | dict
    test: str | dict | None = None
    model: dict = field(default_factory=dict)
    finetune: dict = field(default_factory=dict)
    pretrain: dict | None = None
    chunker: str = "split_page"
    n_max: int = 512
    tokenizer: dict = field(default_factory=dict)
    labels: list[str] | None = None
    out: str | None = None
    metrics: str | None = None
    predictions: str | None = None

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        obj = json.loads(Path(path).read_text())
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


def load_documents(source: str | dict) -> list[Document]:
    """A corpus path, or ``{"synthetic": {...SyntheticConfig fields}}``."""
    if isinstance(source, dict):
        params = dict(source.get("synthetic", source))
        if "length_mix" in params:
            params["length_mix"] = tuple(params["length_mix"])
        for key in ("short_range", "medium_range", "long_range"):
            if key in params:
                params[key] = tuple(params[key])
        return generate_synthetic(SyntheticConfig(**params))
    return read_corpus(source)


def build_tagger(train_docs: Sequence[Document], model_kw: dict, chunker: str, n_max: int, tokenizer_kw=None, labels=None, seed=0) -> Tagger:
    tokenizer = train_tokenizer(train_docs, **(tokenizer_kw or {}))
    labels = list(labels) if labels is not None else corpus_labels(train_docs)
    config = ModelConfig(vocab_size=len(tokenizer), num_labels=len(tag_set(labels)), max_len=n_max, **model_kw)
    return Tagger(LayoutEncoder(config, seed=seed), tokenizer, labels, chunker)


def train_tagger(
    tagger: Tagger,
    train_docs: Sequence[Document],
    finetune: TrainConfig,
    pretrain: TrainConfig | None = None,
    on_record: Callable[[dict], None] | None = None,
) -> list[dict]:
    chunks = [c for d in train_docs for c in tagger.chunks(d)]
    records = []
    if pretrain is not None:
        log.info("pre-training on %d chunks for %d steps", len(chunks), pretrain.total_steps)
        for r in mlm_pretrain(tagger.model, chunks, pretrain, tagger.tokenizer.mask_id, on_record=on_record):
            records.append(dict(r, phase="pretrain"))
    log.info("finetuning on %d chunks for %d steps", len(chunks), finetune.total_steps)
    for r in finetune_tagging(tagger.model, tagging_examples(chunks, tagger.labels), finetune, on_record=on_record):
        records.append(dict(r, phase="finetune"))
    if tagger.model.degenerate_rows:
        log.warning("%d attention rows had a vanishing cosformer denominator and were set to zero", tagger.model.degenerate_rows)
    return records


def run_experiment(cfg: ExperimentConfig) -> tuple[Tagger, list[dict], dict | None]:
    train_docs = load_documents(cfg.train)
    finetune = TrainConfig(**cfg.finetune)
    pretrain = TrainConfig(**cfg.pretrain) if cfg.pretrain is not None else None
    model_kw = dict(cfg.model)
    model_kw.setdefault("dtype", "float32")
    tagger = build_tagger(train_docs, model_kw, cfg.chunker, cfg.n_max, cfg.tokenizer, cfg.labels, seed=finetune.seed)
    metrics_fh = open(cfg.metrics, "w") if cfg.metrics else None
    try:
        on_record = (lambda r: metrics_fh.write(json.dumps(r) + "\n")) if metrics_fh else None
        records = train_tagger(tagger, train_docs, finetune, pretrain, on_record)
    finally:
        if metrics_fh:
            metrics_fh.close()
    if cfg.out:
        tagger.save(cfg.out)
    report = None
    if cfg.test is not None:
        test_docs = load_documents(cfg.test)
        predictions = tagger.predict_corpus(test_docs)
        if cfg.predictions:
            write_predictions(predictions, cfg.predictions)
        report = evaluate_f1(predictions, {d.id: d.spans for d in test_docs}, {d.id: d.n_words for d in test_docs})
    return tagger, records, report
