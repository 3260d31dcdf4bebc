import math
from types import SimpleNamespace

import numpy as np
import pytest

from longdoc.bieso import bieso_decode, bieso_encode, tag_set
from longdoc.model import LayoutEncoder, ModelConfig, cross_entropy, gelu, gelu_grad, softmax
from oracles import central_difference, relative_error


def make_chunk(n, seed=0, vocab=12, pages=None):
    rng = np.random.default_rng(seed)
    x0 = rng.integers(0, 900, n)
    y0 = rng.integers(0, 900, n)
    boxes = np.stack([x0, y0, x0 + rng.integers(1, 100, n), y0 + rng.integers(1, 100, n)], axis=1)
    return SimpleNamespace(
        ids=rng.integers(0, vocab, n),
        boxes=boxes,
        positions=np.arange(n),
        pages=np.zeros(n, dtype=int) if pages is None else np.asarray(pages),
    )


def tiny(**kw):
    base = dict(vocab_size=12, num_labels=5, d_model=8, heads=2, layers=2, max_len=6, init_std=0.5)
    base.update(kw)
    return ModelConfig(**base)


# -- config ---------------------------------------------------------------------


def test_config_rejects_indivisible_heads():
    with pytest.raises(ValueError, match="divisible"):
        tiny(heads=3)


def test_config_rejects_linformer_k_above_max_len():
    with pytest.raises(ValueError, match="k <= max_len"):
        tiny(attention="linformer", k=7)


def test_config_rejects_linformer_with_bias():
    with pytest.raises(ValueError):
        tiny(attention="linformer", k=6, bias="squircle")


# -- embed ---------------------------------------------------------------------


def test_zero_tables_give_zero_embedding():
    model = LayoutEncoder(tiny())
    for name in model.params:
        if name.startswith("embed."):
            model.params[name][:] = 0.0
    assert np.array_equal(model.embed(make_chunk(5)), np.zeros((5, 8)))


def test_identical_tokens_embed_identically():
    chunk = make_chunk(4)
    chunk.ids[3], chunk.boxes[3], chunk.positions[3] = chunk.ids[1], chunk.boxes[1], chunk.positions[1]
    e = LayoutEncoder(tiny()).embed(chunk)
    assert np.array_equal(e[1], e[3])


def test_page_change_shifts_by_page_row_difference():
    model = LayoutEncoder(tiny())
    a = make_chunk(5)
    b = make_chunk(5)
    b.pages = a.pages.copy()
    b.pages[2] = 3
    diff = model.embed(b) - model.embed(a)
    table = model.params["embed.page"]
    expected = np.zeros_like(diff)
    expected[2] = table[3] - table[0]
    np.testing.assert_allclose(diff, expected, atol=1e-14)


def test_embed_is_table_lookup_sum():
    model = LayoutEncoder(tiny())
    chunk = make_chunk(3)
    p = model.params
    for i in range(3):
        x0, y0, x1, y1 = chunk.boxes[i]
        row = (
            p["embed.token"][chunk.ids[i]]
            + p["embed.position"][chunk.positions[i]]
            + p["embed.x0"][x0]
            + p["embed.y0"][y0]
            + p["embed.x1"][x1]
            + p["embed.y1"][y1]
            + p["embed.width"][x1 - x0]
            + p["embed.height"][y1 - y0]
            + p["embed.page"][chunk.pages[i]]
        )
        np.testing.assert_allclose(model.embed(chunk)[i], row, atol=1e-14)


def test_out_of_grid_box_rejected():
    chunk = make_chunk(3)
    chunk.boxes[0, 2] = 1001
    with pytest.raises(ValueError, match="normalised"):
        LayoutEncoder(tiny()).embed(chunk)


def test_sequence_longer_than_max_len_rejected():
    with pytest.raises(ValueError, match="max_len"):
        LayoutEncoder(tiny()).encode(make_chunk(7))


# -- encode ---------------------------------------------------------------------


def test_zero_layers_is_embedding():
    model = LayoutEncoder(tiny(layers=0))
    chunk = make_chunk(5)
    assert np.array_equal(model.encode(chunk), model.embed(chunk))


def _oracle_single_layer(model, chunk):
    """Straight-line scalar reference of one full-attention, one-head block."""
    p = {k: v.tolist() for k, v in model.params.items()}
    emb = model.embed(chunk).tolist()
    n, d = len(emb), len(emb[0])

    def linear(x, w, b):
        return [sum(x[a] * w[a][c] for a in range(len(x))) + b[c] for c in range(len(b))]

    def norm(x, g, b):
        mu = sum(x) / len(x)
        var = sum((t - mu) ** 2 for t in x) / len(x)
        return [(t - mu) / math.sqrt(var + 1e-12) * g[c] + b[c] for c, t in enumerate(x)]

    def gelu_scalar(t):
        return 0.5 * t * (1 + math.tanh(math.sqrt(2 / math.pi) * (t + 0.044715 * t**3)))

    q = [linear(x, p["layer0.attn.wq"], p["layer0.attn.bq"]) for x in emb]
    k = [linear(x, p["layer0.attn.wk"], p["layer0.attn.bk"]) for x in emb]
    v = [linear(x, p["layer0.attn.wv"], p["layer0.attn.bv"]) for x in emb]
    out = []
    for i in range(n):
        s = [sum(q[i][c] * k[j][c] for c in range(d)) / math.sqrt(d) for j in range(n)]
        m = max(s)
        e = [math.exp(t - m) for t in s]
        w = [t / sum(e) for t in e]
        att = [sum(w[j] * v[j][c] for j in range(n)) for c in range(d)]
        o = linear(att, p["layer0.attn.wo"], p["layer0.attn.bo"])
        h1 = norm([emb[i][c] + o[c] for c in range(d)], p["layer0.ln1.gamma"], p["layer0.ln1.beta"])
        a = [gelu_scalar(t) for t in linear(h1, p["layer0.ffn.w1"], p["layer0.ffn.b1"])]
        f = linear(a, p["layer0.ffn.w2"], p["layer0.ffn.b2"])
        out.append(norm([h1[c] + f[c] for c in range(d)], p["layer0.ln2.gamma"], p["layer0.ln2.beta"]))
    return np.array(out)


def test_tiny_model_matches_scalar_oracle():
    model = LayoutEncoder(tiny(layers=1, heads=1, d_model=4), seed=3)
    chunk = make_chunk(3, seed=4)
    np.testing.assert_allclose(model.encode(chunk), _oracle_single_layer(model, chunk), atol=1e-10, rtol=0)


@pytest.mark.parametrize("attention,bias", [("full", "none"), ("full", "squircle"), ("cosformer", "cross")])
def test_swapping_identical_tokens_swaps_rows(attention, bias):
    model = LayoutEncoder(tiny(attention=attention, bias=bias, bias_M=1000.0))
    chunk = make_chunk(5)
    chunk.ids[4], chunk.boxes[4], chunk.pages[4] = chunk.ids[1], chunk.boxes[1], chunk.pages[1]
    chunk.positions[:] = 0
    out = model.encode(chunk)
    swapped = make_chunk(5)
    for name in ("ids", "boxes", "positions", "pages"):
        arr = getattr(chunk, name).copy()
        arr[[1, 4]] = arr[[4, 1]]
        setattr(swapped, name, arr)
    np.testing.assert_allclose(model.encode(swapped), out[[0, 4, 2, 3, 1]], atol=1e-12)


@pytest.mark.parametrize("attention,bias", [("full", "none"), ("full", "cross"), ("cosformer", "squircle"), ("cosformer", "none")])
def test_encode_shape_and_finite(attention, bias):
    out = LayoutEncoder(tiny(attention=attention, bias=bias)).encode(make_chunk(6))
    assert out.shape == (6, 8)
    assert np.all(np.isfinite(out))


@pytest.mark.parametrize("n", [6, 4])
def test_full_matches_identity_linformer(n):
    full = LayoutEncoder(tiny(), seed=1)
    lin = LayoutEncoder(tiny(attention="linformer", k=6, projection_init="identity"), seed=1)
    for name, value in full.params.items():
        lin.params[name] = value.copy()
    chunk = make_chunk(n)
    np.testing.assert_allclose(lin.encode(chunk), full.encode(chunk), atol=1e-10, rtol=0)


def test_random_projection_scaled_by_sqrt_n():
    model = LayoutEncoder(tiny(attention="linformer", k=3, max_len=400, init_std=0.02), seed=0)
    pk = model.params["layer0.attn.pk"]
    assert pk.shape == (3, 400)
    assert abs(pk.std() - 1 / math.sqrt(400)) < 0.005


# -- tag ---------------------------------------------------------------------


def test_zero_head_gives_uniform_tags():
    model = LayoutEncoder(tiny())
    model.params["tag.w"][:] = 0.0
    model.params["tag.b"][:] = 0.0
    np.testing.assert_allclose(model.tag(make_chunk(4)), np.full((4, 5), 0.2), atol=1e-15)


def test_tag_rows_sum_to_one():
    probs = LayoutEncoder(tiny(num_labels=9)).tag(make_chunk(6))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(probs >= 0)


def test_forced_logits_round_trip_through_bieso():
    tags = tag_set(["date", "total"])
    spans = [("date", 0, 2), ("total", 4, 4)]
    gold = bieso_encode(spans, 6)
    model = LayoutEncoder(tiny(num_labels=len(tags)))
    # hidden states are layer-normed; a bias dominating the weights forces the argmax
    model.params["tag.w"][:] = 0.0
    chunk = make_chunk(6)
    hidden = model.encode(chunk)
    forced = np.full((6, len(tags)), -50.0)
    for i, t in enumerate(gold):
        forced[i, tags.index(t)] = 50.0
    probs = softmax(model.logits(hidden) + forced)
    predicted = [tags[i] for i in probs.argmax(axis=1)]
    assert bieso_decode(predicted) == spans


# -- gradients ---------------------------------------------------------------------


def test_gelu_grad_matches_difference():
    x = np.linspace(-4, 4, 41)
    num = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6
    np.testing.assert_allclose(gelu_grad(x), num, atol=1e-8)


def test_cross_entropy_ignores_negative_targets():
    logits = np.random.default_rng(0).normal(size=(4, 3))
    loss, grad = cross_entropy(logits, np.array([0, -1, 2, -1]))
    assert np.all(grad[[1, 3]] == 0)
    ref = -np.mean([np.log(softmax(logits[0])[0]), np.log(softmax(logits[2])[2])])
    assert loss == pytest.approx(ref)


def _assert_grad_close(analytic, numeric, name):
    # key biases shift every score in a row equally, so softmax attention makes
    # their gradient exactly zero; relative error is undefined there
    if np.max(np.abs(numeric)) < 1e-9 and np.max(np.abs(analytic)) < 1e-9:
        return
    assert relative_error(analytic, numeric) <= 1e-3, name


def _check_all_gradients(model, chunk, targets):
    _, grads = model.loss_and_grads(chunk, targets)
    lookups = model._lookup_indices(chunk)
    for name, param in model.params.items():
        if name.startswith("embed."):
            rows = np.unique(lookups[name])
            untouched = np.setdiff1d(np.arange(param.shape[0]), rows)
            assert np.all(grads[name][untouched] == 0), name
            view = param[rows]

            def f(x, name=name, rows=rows):
                old = model.params[name][rows].copy()
                model.params[name][rows] = x
                try:
                    return model.loss(chunk, targets)
                finally:
                    model.params[name][rows] = old

            num = central_difference(f, view.copy(), step=1e-5)
            _assert_grad_close(grads[name][rows], num, name)
        elif name.startswith("mlm."):
            assert np.all(grads[name] == 0)
        else:

            def f(x, name=name):
                old = model.params[name]
                model.params[name] = x
                try:
                    return model.loss(chunk, targets)
                finally:
                    model.params[name] = old

            num = central_difference(f, param.copy(), step=1e-5)
            _assert_grad_close(grads[name], num, name)


@pytest.mark.parametrize(
    "kw",
    [
        dict(),
        dict(bias="squircle"),
        dict(bias="cosine1d", renormalize=False),
        dict(attention="linformer", k=4),
        dict(attention="cosformer"),
        dict(attention="cosformer", bias="cross", cross_page_floor=0.5),
    ],
    ids=["full", "full-squircle", "full-cosine1d-raw", "linformer", "cosformer", "cosformer-cross-pages"],
)
def test_end_to_end_gradients(kw):
    model = LayoutEncoder(tiny(**kw), seed=7)
    chunk = make_chunk(5, seed=8, pages=[0, 0, 0, 1, 1])
    targets = np.array([1, -1, 0, 4, 2])
    _check_all_gradients(model, chunk, targets)


def test_mlm_head_gradient():
    model = LayoutEncoder(tiny(), seed=2)
    chunk = make_chunk(4, seed=2)
    targets = np.array([-1, 3, -1, 7])
    _, grads = model.loss_and_grads(chunk, targets, head="mlm")
    num = central_difference(lambda x: _with(model, "mlm.w", x, lambda: model.loss(chunk, targets, "mlm")), model.params["mlm.w"].copy())
    assert relative_error(grads["mlm.w"], num) <= 1e-3
    assert np.all(grads["tag.w"] == 0)


def _with(model, name, value, fn):
    old = model.params[name]
    model.params[name] = value
    try:
        return fn()
    finally:
        model.params[name] = old


# -- checkpoints ---------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    model = LayoutEncoder(tiny(attention="linformer", k=4), seed=5)
    path = tmp_path / "m.npz"
    model.save(path, extra={"labels": ["a", "b"]})
    loaded, extra = LayoutEncoder.load(path)
    assert extra == {"labels": ["a", "b"]}
    assert loaded.config == model.config
    chunk = make_chunk(5)
    assert np.array_equal(loaded.encode(chunk), model.encode(chunk))


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.npz"
    np.savez(path, __meta__=np.array('{"format": "other"}'))
    with pytest.raises(ValueError, match="not a"):
        LayoutEncoder.load(path)
