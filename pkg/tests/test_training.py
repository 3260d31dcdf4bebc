import numpy as np
import pytest

from longdoc.documents import Span
from longdoc.model import LayoutEncoder, ModelConfig
from longdoc.pipeline import Tagger, build_tagger, train_tagger
from longdoc.synthetic import SyntheticConfig, generate_synthetic
from longdoc.training import (
    Adam,
    TrainConfig,
    evaluate_f1,
    finetune_tagging,
    format_report,
    lr_schedule,
    mask_tokens,
    mean_mlm_loss,
    mean_tagging_loss,
    mlm_pretrain,
    tagging_examples,
)

DEFAULT_SCHEDULE = TrainConfig(lr=2e-5, warmup_fraction=0.05, total_steps=1000)


# -- schedule ---------------------------------------------------------------------


@pytest.mark.parametrize(
    "step,expected",
    [(0, 0.0), (25, 1e-5), (50, 2e-5), (525, 2e-5 * (1000 - 525) / (1000 - 50)), (1000, 0.0), (1500, 0.0)],
)
def test_schedule_values(step, expected):
    assert abs(lr_schedule(step, DEFAULT_SCHEDULE) - expected) <= 1e-12


def test_schedule_peak_attained_once_and_continuous():
    values = np.array([lr_schedule(s, DEFAULT_SCHEDULE) for s in range(1001)])
    assert np.count_nonzero(values == values.max()) == 1
    assert values.argmax() == 50
    assert np.max(np.abs(np.diff(values))) <= 2e-5 / 50 + 1e-18


def test_schedule_without_warmup_starts_at_peak():
    cfg = TrainConfig(lr=1.0, warmup_fraction=0.0, total_steps=10)
    assert lr_schedule(1, cfg) == pytest.approx(0.9)


@pytest.mark.parametrize("kw", [dict(warmup_fraction=1.5), dict(total_steps=0), dict(grad_accum=0), dict(mask_prob=0.0)])
def test_train_config_rejects(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


# -- optimiser and masking ---------------------------------------------------------------------


def test_adam_first_step_is_signed_lr():
    params = {"w": np.array([1.0, -2.0, 0.5])}
    grads = {"w": np.array([0.3, -4.0, 1e-3])}
    Adam(params).step(params, grads, lr=0.1)
    expected = np.array([1.0, -2.0, 0.5]) - 0.1 * grads["w"] / (np.abs(grads["w"]) + 1e-8)
    np.testing.assert_allclose(params["w"], expected, rtol=1e-12)


def test_adam_matches_reference_recursion():
    rng = np.random.default_rng(0)
    w = rng.normal(size=4)
    params = {"w": w.copy()}
    opt = Adam(params)
    m = v = np.zeros(4)
    for t in range(1, 6):
        g = rng.normal(size=4)
        opt.step(params, {"w": g}, lr=0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(params["w"], w, rtol=1e-12)


def test_mask_tokens_proportions():
    ids = np.full(200_000, 7)
    corrupted, targets = mask_tokens(ids, np.random.default_rng(0), vocab_size=50, mask_id=2, mask_prob=0.15)
    selected = targets >= 0
    assert selected.mean() == pytest.approx(0.15, abs=0.005)
    assert np.all(targets[selected] == 7)
    assert np.all(corrupted[~selected] == 7)
    masked = (corrupted[selected] == 2).mean()
    kept = (corrupted[selected] == 7).mean()
    assert masked == pytest.approx(0.8, abs=0.01)
    # random replacements can coincide with the original id 1/47 of the time
    assert kept == pytest.approx(0.1 + 0.1 / 47, abs=0.01)
    assert corrupted.min() >= 2


def test_mask_tokens_selects_at_least_one():
    _, targets = mask_tokens(np.arange(3, 6), np.random.default_rng(1), 10, 2, 1e-9)
    assert (targets >= 0).sum() == 1


# -- training loops ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_corpus():
    cfg = SyntheticConfig(seed=5, count=8, length_mix=(1.0, 0.0, 0.0), short_range=(80, 160))
    return generate_synthetic(cfg)


def _tagger(docs, seed=0, **kw):
    model_kw = dict(d_model=16, heads=2, layers=1, init_std=0.1)
    model_kw.update(kw)
    return build_tagger(docs, model_kw, "split_page", 64, dict(min_count=1), seed=seed)


def test_finetune_memorises_one_document(small_corpus):
    tagger = _tagger(small_corpus[:1])
    examples = tagging_examples(tagger.chunks(small_corpus[0]), tagger.labels)
    before = mean_tagging_loss(tagger.model, examples)
    finetune_tagging(tagger.model, examples, TrainConfig(lr=3e-3, total_steps=200, batch_size=2))
    assert mean_tagging_loss(tagger.model, examples) < 0.2 * before


def test_mlm_memorises_one_document(small_corpus):
    tagger = _tagger(small_corpus[:1])
    chunks = tagger.chunks(small_corpus[0])
    mask_id = tagger.tokenizer.mask_id
    before = mean_mlm_loss(tagger.model, chunks, mask_id)
    records = mlm_pretrain(tagger.model, chunks, TrainConfig(lr=3e-3, total_steps=200, batch_size=2), mask_id)
    assert mean_mlm_loss(tagger.model, chunks, mask_id) < before
    assert np.mean([r["loss"] for r in records[-20:]]) < np.mean([r["loss"] for r in records[:20]])


@pytest.mark.parametrize("phase", ["finetune", "pretrain"])
def test_training_is_deterministic(small_corpus, phase):
    curves = []
    for _ in range(2):
        tagger = _tagger(small_corpus[:3])
        pre = TrainConfig(lr=1e-3, total_steps=15, batch_size=2, seed=4) if phase == "pretrain" else None
        records = train_tagger(tagger, small_corpus[:3], TrainConfig(lr=1e-3, total_steps=15, batch_size=2, seed=4), pre)
        curves.append([(r["step"], r["lr"], r["loss"]) for r in records])
    assert curves[0] == curves[1]


def test_held_out_loss_improves():
    docs = generate_synthetic(SyntheticConfig(seed=6, count=40, length_mix=(1.0, 0.0, 0.0), short_range=(80, 160)))
    train, held_out = docs[:32], docs[32:]
    tagger = build_tagger(train, dict(d_model=16, heads=2, layers=1, init_std=0.1), "split_page", 64, seed=0)
    train_chunks = [c for d in train for c in tagger.chunks(d)]
    held_chunks = [c for d in held_out for c in tagger.chunks(d)]
    mask_id = tagger.tokenizer.mask_id
    mlm_before = mean_mlm_loss(tagger.model, held_chunks, mask_id)
    mlm_pretrain(tagger.model, train_chunks, TrainConfig(lr=3e-3, total_steps=200, batch_size=4), mask_id)
    assert mean_mlm_loss(tagger.model, held_chunks, mask_id) < mlm_before

    held = tagging_examples(held_chunks, tagger.labels)
    tag_before = mean_tagging_loss(tagger.model, held)
    finetune_tagging(tagger.model, tagging_examples(train_chunks, tagger.labels), TrainConfig(lr=2e-3, total_steps=120, batch_size=4))
    assert mean_tagging_loss(tagger.model, held) < tag_before


def test_gradient_accumulation_matches_large_batch(small_corpus):
    results = []
    for batch, accum in [(4, 1), (2, 2), (1, 4)]:
        tagger = _tagger(small_corpus[:3], seed=1)
        examples = tagging_examples([c for d in small_corpus[:3] for c in tagger.chunks(d)], tagger.labels)
        cfg = TrainConfig(lr=1e-3, total_steps=5, batch_size=batch, grad_accum=accum, warmup_fraction=0.2)
        records = finetune_tagging(tagger.model, examples, cfg)
        results.append((tagger.model.params, [r["loss"] for r in records]))
    ref_params, ref_losses = results[0]
    for params, losses in results[1:]:
        np.testing.assert_allclose(losses, ref_losses, atol=1e-6)
        for name in ref_params:
            np.testing.assert_allclose(params[name], ref_params[name], atol=1e-6, rtol=0)


def test_empty_corpus_rejected():
    model = LayoutEncoder(ModelConfig(vocab_size=5, num_labels=3, d_model=4, heads=1, layers=1, max_len=4))
    with pytest.raises(ValueError, match="empty"):
        finetune_tagging(model, [], TrainConfig(total_steps=1))
    with pytest.raises(ValueError, match="empty"):
        mlm_pretrain(model, [], TrainConfig(total_steps=1), mask_id=2)


# -- evaluation ---------------------------------------------------------------------


def _spans(*triples, label="date"):
    return [Span(p, s, e, label) for p, s, e in triples]


def test_perfect_predictions_score_one():
    gold = {"a": _spans((0, 1, 2), (0, 5, 5)) + _spans((1, 0, 0), label="total"), "b": _spans((0, 3, 4))}
    report = evaluate_f1(gold, gold, {"a": 100, "b": 900})
    for cat in ("short", "medium", "all"):
        assert all(m["f1"] == 1.0 for m in report[cat]["classes"].values())
        assert report[cat]["macro_f1"] == 1.0
    assert report["long"]["macro_f1"] is None


def test_empty_predictions_score_zero():
    gold = {"a": _spans((0, 1, 2))}
    report = evaluate_f1({"a": []}, gold, {"a": 10})
    m = report["short"]["classes"]["date"]
    assert (m["recall"], m["f1"]) == (0.0, 0.0)


def test_two_of_four_with_one_spurious():
    gold = {"a": _spans((0, 0, 1), (0, 3, 3), (1, 2, 4), (2, 0, 0))}
    pred = {"a": _spans((0, 0, 1), (1, 2, 4), (0, 7, 8))}
    m = evaluate_f1(pred, gold, {"a": 10})["all"]["classes"]["date"]
    assert m["precision"] == pytest.approx(2 / 3)
    assert m["recall"] == pytest.approx(1 / 2)
    assert m["f1"] == pytest.approx(4 / 7)


def test_offset_span_is_not_a_match():
    report = evaluate_f1({"a": _spans((0, 1, 3))}, {"a": _spans((0, 1, 2))}, {"a": 10})
    assert report["all"]["classes"]["date"]["f1"] == 0.0


def test_length_categories_use_boundaries():
    gold = {k: _spans((0, 0, 0)) for k in "abcd"}
    report = evaluate_f1(gold, gold, {"a": 512, "b": 513, "c": 2048, "d": 2049})
    assert [report[c]["documents"] for c in ("short", "medium", "long")] == [1, 2, 1]


def test_mismatched_ids_rejected():
    with pytest.raises(ValueError, match="ids differ"):
        evaluate_f1({"a": []}, {"b": []}, {"a": 1, "b": 1})


def test_report_is_order_independent():
    gold = {"a": _spans((0, 1, 2)), "b": _spans((0, 0, 0), label="total")}
    pred = {"b": [], "a": _spans((0, 1, 2))}
    lengths = {"a": 5, "b": 5}
    assert evaluate_f1(pred, gold, lengths) == evaluate_f1(dict(reversed(pred.items())), dict(reversed(gold.items())), lengths)
    assert "macro_f1=0.5000" in format_report(evaluate_f1(pred, gold, lengths))


# -- prediction pipeline ---------------------------------------------------------------------


class _GoldModel:
    """Stands in for the encoder and emits the chunk's gold tags as logits."""

    def __init__(self, model, tags):
        self.config = model.config
        self.tags = tags
        self._chunk = None

    def encode(self, chunk):
        self._chunk = chunk
        return None

    def logits(self, hidden):
        out = np.zeros((len(self._chunk), len(self.tags)))
        for i, t in enumerate(self._chunk.tags):
            out[i, self.tags.index(t or "O")] = 1.0
        return out


@pytest.mark.parametrize("chunker,n_max", [("fixed", 5), ("fixed", 17), ("split_page", 7), ("split_page", 64)])
def test_gold_tags_survive_chunking_and_merging(small_corpus, chunker, n_max):
    docs = generate_synthetic(SyntheticConfig(seed=9, count=4, length_mix=(0.0, 1.0, 0.0), medium_range=(600, 900)))
    tagger = build_tagger(docs, dict(d_model=8, heads=2, layers=1), chunker, n_max, dict(min_count=1))
    tagger.model = _GoldModel(tagger.model, tagger.tags)
    for doc in docs:
        assert tagger.predict(doc) == sorted(doc.spans)


def test_tagger_checkpoint_round_trip(small_corpus, tmp_path):
    tagger = _tagger(small_corpus[:2])
    path = tmp_path / "tagger.npz"
    tagger.save(path)
    loaded = Tagger.load(path)
    assert loaded.labels == tagger.labels and loaded.chunker == tagger.chunker
    assert loaded.tokenizer.vocab == tagger.tokenizer.vocab
    assert loaded.predict(small_corpus[3]) == tagger.predict(small_corpus[3])
