"""Masked-token pre-training, BIESO finetuning and span-level F1.

A training step draws ``batch_size * grad_accum`` chunks in a seeded order
and minimises the mean over chunks of each chunk's mean token loss, so
accumulating micro-batches gives the same update as one large batch.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .bieso import tag_set
from .chunking import Chunk
from .documents import Span
from .model import LayoutEncoder
from .synthetic import CATEGORIES, length_category
from .tokenizer import SPECIALS

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-5
    warmup_fraction: float = 0.05
    total_steps: int = 1000
    batch_size: int = 8
    grad_accum: int = 1
    seed: int = 0
    mask_prob: float = 0.15
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1]")
        if min(self.total_steps, self.batch_size, self.grad_accum) < 1:
            raise ValueError("total_steps, batch_size and grad_accum must be positive")
        if not 0.0 < self.mask_prob <= 1.0:
            raise ValueError("mask_prob must lie in (0, 1]")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to ``cfg.lr`` then linear decay to 0 at ``total_steps``."""
    total = cfg.total_steps
    warm = cfg.warmup_fraction * total
    if step <= 0 or step >= total:
        return 0.0
    if step < warm:
        return cfg.lr * step / warm
    return cfg.lr * (total - step) / (total - warm)


class Adam:
    def __init__(self, params: Mapping[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# -- examples ---------------------------------------------------------------------


@dataclass
class TaggingExample:
    chunk: Chunk
    targets: np.ndarray  # tag index on first pieces, -1 on continuation pieces


def tagging_targets(chunk: Chunk, tags: Sequence[str]) -> np.ndarray:
    index = {t: i for i, t in enumerate(tags)}
    return np.array([-1 if t is None else index[t] for t in chunk.tags], dtype=np.int64)


def tagging_examples(chunks: Iterable[Chunk], labels: Sequence[str]) -> list[TaggingExample]:
    tags = tag_set(labels)
    return [TaggingExample(c, tagging_targets(c, tags)) for c in chunks]


def mask_tokens(ids: np.ndarray, rng: np.random.Generator, vocab_size: int, mask_id: int, mask_prob: float):
    """15/80/10/10-style corruption; returns ``(corrupted ids, targets)``."""
    ids = np.asarray(ids)
    selected = rng.random(len(ids)) < mask_prob
    if len(ids) and not selected.any():
        selected[rng.integers(len(ids))] = True
    targets = np.where(selected, ids, -1)
    roll = rng.random(len(ids))
    corrupted = ids.copy()
    corrupted[selected & (roll < 0.8)] = mask_id
    randomise = selected & (roll >= 0.8) & (roll < 0.9)
    corrupted[randomise] = rng.integers(len(SPECIALS), vocab_size, size=int(randomise.sum()))
    return corrupted, targets


# -- loop ---------------------------------------------------------------------


def _batches(n_items: int, cfg: TrainConfig):
    """Seeded, epoch-shuffled item indices: one list of micro-batches per step."""
    rng = np.random.default_rng(cfg.seed)
    order: list[int] = []
    per_step = cfg.batch_size * cfg.grad_accum
    for _ in range(cfg.total_steps):
        while len(order) < per_step:
            order.extend(rng.permutation(n_items).tolist())
        take, order = order[:per_step], order[per_step:]
        yield [take[i : i + cfg.batch_size] for i in range(0, per_step, cfg.batch_size)]


def _train(model, n_items, loss_fn, cfg: TrainConfig, on_record: Callable[[dict], None] | None):
    if n_items == 0:
        raise ValueError("training corpus is empty")
    opt = Adam(model.params, cfg.beta1, cfg.beta2, cfg.adam_eps)
    records = []
    per_step = cfg.batch_size * cfg.grad_accum
    for step, micro_batches in enumerate(_batches(n_items, cfg), start=1):
        lr = lr_schedule(step, cfg)
        grads = model.zero_grads()
        total = 0.0
        for micro in micro_batches:
            for item in micro:
                total += loss_fn(item, grads, 1.0 / per_step, step)
        opt.step(model.params, grads, lr)
        record = {"step": step, "lr": lr, "loss": total / per_step}
        records.append(record)
        if on_record is not None:
            on_record(record)
    return records


def finetune_tagging(model: LayoutEncoder, examples: Sequence[TaggingExample], cfg: TrainConfig, on_record=None) -> list[dict]:
    """Train the tagging head and encoder in place; returns ``{step, lr, loss}`` records."""

    def loss_fn(i, grads, scale, step):
        ex = examples[i]
        return model.loss_and_grads(ex.chunk, ex.targets, "tag", grads=grads, scale=scale)[0]

    return _train(model, len(examples), loss_fn, cfg, on_record)


def mlm_pretrain(model: LayoutEncoder, chunks: Sequence[Chunk], cfg: TrainConfig, mask_id: int, on_record=None) -> list[dict]:
    """Masked-token pre-training in place. Boxes of masked tokens are kept."""
    vocab = model.config.vocab_size

    def loss_fn(i, grads, scale, step):
        rng = np.random.default_rng([cfg.seed, step, i])
        ids, targets = mask_tokens(chunks[i].ids, rng, vocab, mask_id, cfg.mask_prob)
        return model.loss_and_grads(chunks[i], targets, "mlm", ids=ids, grads=grads, scale=scale)[0]

    return _train(model, len(chunks), loss_fn, cfg, on_record)


def mean_tagging_loss(model: LayoutEncoder, examples: Sequence[TaggingExample]) -> float:
    return float(np.mean([model.loss(ex.chunk, ex.targets) for ex in examples]))


def mean_mlm_loss(model: LayoutEncoder, chunks: Sequence[Chunk], mask_id: int, seed: int = 0, mask_prob: float = 0.15) -> float:
    """Masked-token loss under a fixed corruption, comparable across checkpoints."""
    losses = []
    for i, c in enumerate(chunks):
        ids, targets = mask_tokens(c.ids, np.random.default_rng([seed, i]), model.config.vocab_size, mask_id, mask_prob)
        losses.append(model.loss(c, targets, "mlm", ids=ids))
    return float(np.mean(losses))


# -- evaluation ---------------------------------------------------------------------


def _prf(tp: int, n_pred: int, n_gold: int) -> dict:
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return {"precision": p, "recall": r, "f1": f, "support": n_gold, "predicted": n_pred, "correct": tp}


def evaluate_f1(
    predictions: Mapping[str, Iterable[Span]],
    gold: Mapping[str, Iterable[Span]],
    lengths: Mapping[str, int],
) -> dict:
    """Exact-match span F1 per class, grouped by length category.

    Returns ``{category: {"documents": n, "classes": {label: prf}, "macro_f1": x}}``
    for each category plus ``"all"``. The macro average runs over classes with
    gold support in that category; it is ``None`` when there are none.
    """
    if set(predictions) != set(gold):
        missing = sorted(set(gold) - set(predictions))[:3]
        extra = sorted(set(predictions) - set(gold))[:3]
        raise ValueError(f"prediction and gold document ids differ (missing {missing}, unexpected {extra})")
    if not set(gold) <= set(lengths):
        raise ValueError("every document needs a length")
    counts: dict[str, dict[str, list[int]]] = {c: {} for c in (*CATEGORIES, "all")}
    docs = {c: 0 for c in counts}
    for doc_id in sorted(gold):
        pred = {(s.label, s.page, s.start, s.end) for s in predictions[doc_id]}
        ref = {(s.label, s.page, s.start, s.end) for s in gold[doc_id]}
        for cat in (length_category(lengths[doc_id]), "all"):
            docs[cat] += 1
            for label in {s[0] for s in pred | ref}:
                row = counts[cat].setdefault(label, [0, 0, 0])
                row[0] += sum(1 for s in pred & ref if s[0] == label)
                row[1] += sum(1 for s in pred if s[0] == label)
                row[2] += sum(1 for s in ref if s[0] == label)
    report = {}
    for cat, by_label in counts.items():
        classes = {label: _prf(*by_label[label]) for label in sorted(by_label)}
        supported = [m["f1"] for m in classes.values() if m["support"]]
        report[cat] = {
            "documents": docs[cat],
            "classes": classes,
            "macro_f1": float(np.mean(supported)) if supported else None,
        }
    return report


def format_report(report: dict) -> str:
    lines = []
    for cat, body in report.items():
        macro = body["macro_f1"]
        lines.append(f"[{cat}] documents={body['documents']} macro_f1={'n/a' if macro is None else f'{macro:.4f}'}")
        for label, m in body["classes"].items():
            lines.append(
                f"  {label}: precision={m['precision']:.4f} recall={m['recall']:.4f} f1={m['f1']:.4f} support={m['support']}"
            )
    return "\n".join(lines)
