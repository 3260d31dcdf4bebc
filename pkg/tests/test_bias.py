import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longdoc.bias import (
    BiasSpec,
    NotSeparableError,
    approximate_cross_expansion,
    box_centers,
    dense_bias,
    expand_separable,
    expansion_for,
)

from oracles import loop_bias

layouts = st.integers(1, 40).flatmap(
    lambda n: st.lists(
        st.tuples(st.floats(0, 1000, allow_nan=False), st.floats(0, 1000, allow_nan=False)), min_size=n, max_size=n
    )
)


def _spec(pattern, pos, **kw):
    return BiasSpec(pattern, np.asarray(pos, dtype=float), **kw)


@pytest.mark.parametrize("pattern", ["none", "squircle", "cross"])
def test_diagonal_is_one(pattern):
    rng = np.random.default_rng(0)
    b = dense_bias(_spec(pattern, rng.uniform(0, 1000, size=(7, 2))))
    np.testing.assert_array_equal(np.diag(b), 1.0)


def test_squircle_and_cross_analytic_values():
    pos = [[0.0, 0.0], [500.0, 500.0]]
    assert dense_bias(_spec("squircle", pos))[0, 1] == pytest.approx(0.5, abs=1e-15)
    assert dense_bias(_spec("cross", pos))[0, 1] == pytest.approx(math.sqrt(0.5), abs=1e-15)


def test_cosine1d_quarter_period():
    spec = BiasSpec("cosine1d", np.array([0.0, 2048.0]), M=2048)
    assert dense_bias(spec)[0, 1] == pytest.approx(0.0, abs=1e-15)


def test_dense_matches_loop_oracle():
    rng = np.random.default_rng(1)
    pos = rng.uniform(0, 1000, size=(9, 2))
    for pattern in ("squircle", "cross"):
        np.testing.assert_allclose(dense_bias(_spec(pattern, pos)), loop_bias(pattern, pos, 1000.0), atol=1e-15)
    idx = np.arange(9.0)
    np.testing.assert_allclose(dense_bias(BiasSpec("cosine1d", idx, M=9)), loop_bias("cosine1d", idx, 9.0), atol=1e-15)


def test_rejects_small_M():
    with pytest.raises(ValueError, match="M="):
        _spec("squircle", [[0, 0], [900, 0]], M=800)
    with pytest.raises(ValueError):
        BiasSpec("cosine1d", np.arange(10.0), M=5)
    with pytest.raises(ValueError):
        _spec("diagonal", [[0, 0]])


def test_cosine1d_expansion_entry():
    exp = expand_separable(BiasSpec("cosine1d", np.array([0.0, 1.0, 2.0]), M=3))
    assert exp.n_terms == 2
    assert sum(g[0] * h[2] for g, h in exp.terms) == pytest.approx(0.5, abs=1e-15)


def test_squircle_expansion_reconstructs_dense():
    rng = np.random.default_rng(2)
    spec = _spec("squircle", rng.uniform(0, 1000, size=(5, 2)))
    exp = expand_separable(spec)
    assert exp.n_terms == 4
    np.testing.assert_allclose(exp.reconstruct(), dense_bias(spec), atol=1e-12, rtol=0)


def test_squircle_expansion_coincident_tokens():
    exp = expand_separable(_spec("squircle", np.full((4, 2), 321.0)))
    np.testing.assert_allclose(exp.reconstruct(), 1.0, atol=1e-15)


def test_cross_is_not_separable():
    with pytest.raises(NotSeparableError):
        expand_separable(_spec("cross", [[0, 0], [1, 1]]))


def test_cross_surrogate_exact_when_aligned():
    spec = _spec("cross", [[100.0, 0.0], [100.0, 700.0], [100.0, 1000.0]])
    exp, err = approximate_cross_expansion(spec)
    assert exp.n_terms == 8
    np.testing.assert_allclose(exp.reconstruct(), 1.0, atol=1e-12)
    assert err < 1e-12


def test_cross_surrogate_diagonal_error():
    spec = _spec("cross", [[0.0, 0.0], [500.0, 500.0]])
    exp, err = approximate_cross_expansion(spec)
    c = math.cos(math.pi / 4)
    assert exp.reconstruct()[0, 1] == pytest.approx(2 * c - c * c, abs=1e-12)
    assert err == pytest.approx(c - c * c, abs=1e-12)


def test_cross_surrogate_error_equals_brute_force():
    rng = np.random.default_rng(3)
    pos = rng.uniform(0, 1000, size=(64, 2))
    _, err = approximate_cross_expansion(_spec("cross", pos))
    worst = 0.0
    w = math.pi / 2000
    for i in range(64):
        for j in range(64):
            cx = math.cos(w * (pos[i, 0] - pos[j, 0]))
            cy = math.cos(w * (pos[i, 1] - pos[j, 1]))
            worst = max(worst, abs(cx + cy - cx * cy - max(cx, cy)))
    assert err == pytest.approx(worst, abs=1e-12)


def test_page_floor_dense_and_expansion_agree():
    rng = np.random.default_rng(4)
    pos = rng.uniform(0, 1000, size=(10, 2))
    pages = np.array([0, 0, 0, 1, 1, 1, 1, 2, 2, 2])
    spec = _spec("squircle", pos, pages=pages, cross_page_floor=0.25)
    dense = dense_bias(spec)
    assert dense[0, 5] == pytest.approx(0.25 * dense_bias(_spec("squircle", pos))[0, 5])
    np.testing.assert_allclose(expand_separable(spec).reconstruct(), dense, atol=1e-12)
    _, err = approximate_cross_expansion(_spec("cross", pos, pages=pages, cross_page_floor=0.25))
    assert err <= approximate_cross_expansion(_spec("cross", pos))[1] + 1e-12


def test_expansion_for_unbiased_is_none():
    assert expansion_for(_spec("none", [[0, 0], [3, 3]])) is None
    assert expansion_for(_spec("cross", [[0, 0], [3, 3]])).n_terms == 8


def test_box_centers():
    np.testing.assert_array_equal(box_centers([[0, 10, 100, 30]]), [[50.0, 20.0]])


@settings(max_examples=200, deadline=None)
@given(layouts)
def test_bias_invariants(pos):
    pos = np.array(pos)
    mats = {p: dense_bias(_spec(p, pos)) for p in ("none", "squircle", "cross")}
    for b in mats.values():
        assert b.min() >= 0.0 and b.max() <= 1.0
        np.testing.assert_array_equal(np.diag(b), 1.0)
        np.testing.assert_array_equal(b, b.T)
    assert np.all(mats["cross"] >= mats["squircle"])
    surrogate = approximate_cross_expansion(_spec("cross", pos))[0].reconstruct()
    assert np.all(surrogate >= mats["cross"] - 1e-12)
    np.testing.assert_allclose(expand_separable(_spec("squircle", pos)).reconstruct(), mats["squircle"], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1000), st.lists(st.floats(0, 1000), min_size=2, max_size=20))
def test_squircle_monotone_in_dx(dy, dxs):
    dxs = sorted(dxs)
    pos = [[0.0, 0.0]] + [[dx, dy] for dx in dxs]
    row = dense_bias(_spec("squircle", pos))[0, 1:]
    assert np.all(np.diff(row) <= 1e-15)


def test_expansion_reconstruction_large_layout():
    rng = np.random.default_rng(5)
    spec = _spec("squircle", rng.uniform(0, 1000, size=(256, 2)))
    assert np.max(np.abs(expand_separable(spec).reconstruct() - dense_bias(spec))) <= 1e-12
