"""Scaling benchmarks and the self-verification suites.

``run_scaling_bench`` times each attention mechanism single-threaded and
takes peak memory from the allocation probe, which counts kernel
temporaries rather than process RSS. Warm-up runs are discarded; each
repetition loops the call until it lasts at least 0.2 s and the record
holds the median per-call time.
Batch size is 1: one sequence of ``N`` tokens with head width ``d``.

``run_equivalence_suite`` and ``run_gradient_suite`` re-check every kernel
and bias property against reference computations. Both accept a mapping of
kernel overrides so a deliberately broken implementation can be shown to
fail under its own name.
"""

from __future__ import annotations

import csv
import logging
import math
import timeit
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from . import kernels as _kernels
from .bias import (
    BiasSpec,
    approximate_cross_expansion,
    cross_surrogate_expansion,
    dense_bias,
    expand_separable,
    expansion_for,
)
from .kernels import ProjectionPair
from .probe import probing

log = logging.getLogger(__name__)

MECHANISMS = ("full", "linformer", "cosformer")
CSV_COLUMNS = ("mechanism", "bias", "N", "d", "k", "reps", "median_seconds", "peak_bytes")
DEFAULT_LENGTHS = (256, 512, 1024, 2048, 4096)
DEFAULT_MEMORY_BUDGET = 1 << 30


@dataclass(frozen=True)
class BenchRecord:
    mechanism: str
    bias: str
    N: int
    d: int
    k: int | None
    reps: int
    median_seconds: float | None
    peak_bytes: int | None
    skipped: str | None = None

    def row(self) -> dict:
        return {c: ("" if getattr(self, c) is None else getattr(self, c)) for c in CSV_COLUMNS}


def _bench_inputs(mechanism: str, bias: str, n: int, d: int, k: int, rng):
    q, key, v = (rng.standard_normal((n, d)) for _ in range(3))
    spec = None
    if bias != "none":
        positions = np.arange(n, dtype=np.float64) if bias == "cosine1d" else rng.uniform(0, 1000, size=(n, 2))
        spec = BiasSpec(bias, positions, M=max(1000.0, float(n)) if bias == "cosine1d" else 1000.0)
    if mechanism == "full":
        if spec is None:
            return lambda: _kernels.full_attention(q, key, v)
        b = dense_bias(spec)
        return lambda: _kernels.biased_full_attention(q, key, v, b)
    if mechanism == "linformer":
        if spec is not None:
            raise ValueError("linformer does not take a relative bias")
        proj = ProjectionPair(rng.standard_normal((k, n)) / math.sqrt(n), rng.standard_normal((k, n)) / math.sqrt(n))
        return lambda: _kernels.linformer_attention(q, key, v, proj)
    if mechanism == "cosformer":
        expansion = expansion_for(spec) if spec is not None else None
        return lambda: _kernels.cosformer_attention(q, key, v, expansion)
    raise ValueError(f"unknown mechanism {mechanism!r}; expected one of {MECHANISMS}")


def run_scaling_bench(
    mechanisms: Sequence[str] = MECHANISMS,
    lengths: Sequence[int] = DEFAULT_LENGTHS,
    d: int = 64,
    k: int = 128,
    reps: int = 5,
    bias: str = "none",
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
    seed: int = 0,
) -> list[BenchRecord]:
    """One record per (mechanism, N); full attention past the budget is a skip."""
    lengths = list(lengths)
    if lengths != sorted(lengths) or len(set(lengths)) != len(lengths):
        raise ValueError("lengths must be strictly ascending")
    if reps < 3:
        raise ValueError("reps must be at least 3")
    unknown = set(mechanisms) - set(MECHANISMS)
    if unknown:
        raise ValueError(f"unknown mechanisms {sorted(unknown)}; expected a subset of {MECHANISMS}")
    records = []
    with threadpool_limits(limits=1):
        for mech in mechanisms:
            mech_bias = "none" if mech == "linformer" else bias
            for n in lengths:
                kk = min(k, n) if mech == "linformer" else None

                def skip(reason):
                    log.info("skipping %s at N=%d: %s", mech, n, reason)
                    return BenchRecord(mech, mech_bias, n, d, kk, reps, None, None, reason)

                if mech == "full" and 8 * n * n > memory_budget:
                    records.append(skip("N x N buffer exceeds the memory budget"))
                    continue
                try:
                    fn = _bench_inputs(mech, mech_bias, n, d, kk or 0, np.random.default_rng(seed))
                    with probing() as probe:
                        fn()
                    # calibration doubles as the discarded warm-up
                    timer = timeit.Timer(fn)
                    number, _ = timer.autorange()
                    times = [t / number for t in timer.repeat(repeat=reps, number=number)]
                except MemoryError:
                    records.append(skip("out of memory"))
                    continue
                records.append(BenchRecord(mech, mech_bias, n, d, kk, reps, float(np.median(times)), probe.peak_bytes))
    return records


def fit_complexity_slope(records: Iterable[BenchRecord]) -> dict[str, float]:
    """Least-squares slope of log(time) on log(N) over the three largest N."""
    groups: dict[str, list[BenchRecord]] = {}
    for r in records:
        if r.median_seconds is None:
            continue
        key = r.mechanism if r.bias == "none" else f"{r.mechanism}[{r.bias}]"
        groups.setdefault(key, []).append(r)
    if not groups:
        raise ValueError("no timed records to fit")
    slopes = {}
    for key, rs in groups.items():
        rs = sorted(rs, key=lambda r: r.N)[-3:]
        if len(rs) < 3:
            raise ValueError(f"{key}: need at least 3 timed lengths, got {len(rs)}")
        x = np.log([r.N for r in rs])
        y = np.log([r.median_seconds for r in rs])
        slopes[key] = float(np.polyfit(x, y, 1)[0])
    return slopes


def memory_ratios(records: Iterable[BenchRecord], mechanism: str) -> list[float]:
    """Peak-byte ratio between consecutive measured lengths of one mechanism."""
    rs = sorted((r for r in records if r.mechanism == mechanism and r.peak_bytes), key=lambda r: r.N)
    return [b.peak_bytes / a.peak_bytes for a, b in zip(rs, rs[1:])]


def write_csv(records: Iterable[BenchRecord], target) -> None:
    """Write to a path or an open text stream."""
    if hasattr(target, "write"):
        writer = csv.DictWriter(target, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(r.row() for r in records)
        return
    with open(target, "w", newline="") as fh:
        write_csv(records, fh)


# -- verification suites ---------------------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


KernelTable = Mapping[str, Callable]


def _kernel_table(overrides: KernelTable | None) -> dict[str, Callable]:
    table = {
        name: getattr(_kernels, name)
        for name in (
            "full_attention",
            "biased_full_attention",
            "linformer_attention",
            "cosformer_attention",
            "cosformer_attention_explicit",
            "attention_backward",
        )
    }
    if overrides:
        unknown = set(overrides) - set(table)
        if unknown:
            raise ValueError(f"unknown kernel overrides: {sorted(unknown)}")
        table.update(overrides)
    return table


class _Runner:
    def __init__(self):
        self.results: list[CheckResult] = []

    def check(self, name: str, fn: Callable[[], tuple[bool, str]]) -> None:
        try:
            passed, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        self.results.append(CheckResult(name, bool(passed), detail))


def _max_diff(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) if np.size(a) else 0.0


def _within(a, b, tol) -> tuple[bool, str]:
    err = _max_diff(a, b)
    return err <= tol, f"max abs diff {err:.3e} (tol {tol:.0e})"


def _reference_softmax_attention(q, k, v, bias=None, renormalize=True):
    s = q @ k.T / math.sqrt(q.shape[1])
    w = np.exp(s - s.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    if bias is not None:
        w = w * bias
        if renormalize:
            w /= w.sum(axis=1, keepdims=True)
    return w @ v, w


def _random_layout(rng, n, pattern):
    if pattern == "cosine1d":
        pos = rng.permutation(n).astype(np.float64)
        return BiasSpec(pattern, pos, M=float(max(n, 1)))
    return BiasSpec(pattern, rng.uniform(0, 1000, size=(n, 2)), M=1000.0)


def run_equivalence_suite(kernels: KernelTable | None = None, seed: int = 0, trials: int = 100) -> list[CheckResult]:
    """Forward-path and bias properties; every entry names one invariant."""
    kt = _kernel_table(kernels)
    rng = np.random.default_rng(seed)
    r = _Runner()

    def qkv(n, d, low=-1.0):
        return [rng.uniform(low, 1.0, size=(n, d)) for _ in range(3)]

    # full attention
    def full_rows():
        worst = 0.0
        for _ in range(trials):
            n, d = int(rng.integers(1, 33)), int(rng.integers(1, 9))
            res = kt["full_attention"](*qkv(n, d))
            worst = max(worst, _max_diff(res.attn.sum(axis=1), 1.0))
        return worst <= 1e-9, f"worst row-sum deviation {worst:.2e}"

    def full_convex():
        for _ in range(trials):
            n, d = int(rng.integers(1, 33)), int(rng.integers(1, 9))
            q, k, v = qkv(n, d)
            out = kt["full_attention"](q, k, v).out
            if np.any(out < v.min(axis=0) - 1e-12) or np.any(out > v.max(axis=0) + 1e-12):
                return False, f"output leaves the hull of V (N={n}, d={d})"
        return True, f"{trials} cases"

    def full_reference():
        q, k, v = qkv(8, 4)
        return _within(kt["full_attention"](q, k, v).out, _reference_softmax_attention(q, k, v)[0], 1e-12)

    def full_zero_queries():
        _, k, v = qkv(3, 2)
        return _within(kt["full_attention"](np.zeros((3, 2)), k, v).out, np.tile(v.mean(axis=0), (3, 1)), 1e-12)

    def full_single():
        q, k, v = qkv(1, 3)
        res = kt["full_attention"](q, k, v)
        return bool(np.array_equal(res.out, v) and np.array_equal(res.attn, [[1.0]])), "N=1"

    r.check("full.rows_sum_to_one", full_rows)
    r.check("full.convex_combination", full_convex)
    r.check("full.matches_reference", full_reference)
    r.check("full.zero_queries_give_column_mean", full_zero_queries)
    r.check("full.single_token_is_identity", full_single)

    # biased full attention
    def biased_ones():
        q, k, v = qkv(7, 3)
        return _within(kt["biased_full_attention"](q, k, v, np.ones((7, 7))).out, kt["full_attention"](q, k, v).out, 1e-12)

    def biased_identity():
        q, k, v = qkv(6, 3)
        return _within(kt["biased_full_attention"](q, k, v, np.eye(6)).out, v, 1e-12)

    def biased_reference():
        worst = 0.0
        for renorm in (True, False):
            for pattern in ("squircle", "cross", "cosine1d"):
                q, k, v = qkv(9, 4)
                b = dense_bias(_random_layout(rng, 9, pattern))
                got = kt["biased_full_attention"](q, k, v, b, renormalize=renorm).out
                worst = max(worst, _max_diff(got, _reference_softmax_attention(q, k, v, b, renorm)[0]))
        return worst <= 1e-12, f"max abs diff {worst:.3e} over 6 cases"

    r.check("biased.all_ones_bias_is_full", biased_ones)
    r.check("biased.identity_bias_renormalized_is_v", biased_identity)
    r.check("biased.matches_reference", biased_reference)

    # linformer
    def lin_identity():
        worst = 0.0
        for _ in range(trials):
            n, d = int(rng.integers(1, 33)), int(rng.integers(1, 9))
            q, k, v = qkv(n, d)
            got = kt["linformer_attention"](q, k, v, ProjectionPair.identity(n)).out
            worst = max(worst, _max_diff(got, kt["full_attention"](q, k, v).out))
        return worst <= 1e-12, f"max abs diff {worst:.3e} over {trials} cases"

    def lin_first_row():
        q, k, v = qkv(2, 3)
        sel = np.array([[1.0, 0.0]])
        return _within(kt["linformer_attention"](q, k, v, ProjectionPair(sel, sel)).out, np.tile(v[0], (2, 1)), 1e-12)

    def lin_reference():
        q, k, v = qkv(16, 4)
        pk, pv = rng.normal(size=(4, 16)), rng.normal(size=(4, 16))
        kp, vp = pk @ k, pv @ v
        s = q @ kp.T / 2.0
        w = np.exp(s - s.max(axis=1, keepdims=True))
        ref = (w / w.sum(axis=1, keepdims=True)) @ vp
        return _within(kt["linformer_attention"](q, k, v, ProjectionPair(pk, pv)).out, ref, 1e-12)

    r.check("linformer.identity_projection_is_full", lin_identity)
    r.check("linformer.selecting_projection_uses_first_row", lin_first_row)
    r.check("linformer.matches_reference", lin_reference)

    # cosformer
    def cos_explicit():
        worst = 0.0
        for _ in range(trials):
            n, d = int(rng.integers(1, 65)), int(rng.integers(1, 17))
            q, k, v = qkv(n, d, low=0.0)
            got = kt["cosformer_attention"](q, k, v).out
            worst = max(worst, _max_diff(got, kt["cosformer_attention_explicit"](q, k, v).out))
        return worst <= 1e-10, f"max abs diff {worst:.3e} over {trials} cases"

    def cos_biased(pattern):
        def run():
            worst = 0.0
            for _ in range(trials):
                n, d = int(rng.integers(1, 65)), int(rng.integers(1, 17))
                q, k, v = qkv(n, d, low=0.0)
                spec = _random_layout(rng, n, pattern)
                got = kt["cosformer_attention"](q, k, v, expand_separable(spec)).out
                ref = kt["cosformer_attention_explicit"](q, k, v, dense_bias(spec)).out
                worst = max(worst, _max_diff(got, ref))
            return worst <= 1e-10, f"max abs diff {worst:.3e} over {trials} cases"

        return run

    def cos_surrogate():
        q, k, v = qkv(20, 4, low=0.0)
        spec = _random_layout(rng, 20, "cross")
        exp = cross_surrogate_expansion(spec)
        got = kt["cosformer_attention"](q, k, v, exp).out
        return _within(got, kt["cosformer_attention_explicit"](q, k, v, np.clip(exp.reconstruct(), 0, 1)).out, 1e-10)

    def cos_identical_keys():
        q = rng.uniform(0.1, 1.0, size=(5, 3))
        k = np.tile(rng.uniform(0.1, 1.0, size=3), (5, 1))
        v = rng.normal(size=(5, 2))
        out = kt["cosformer_attention"](q, k, v).out
        return _within(out, np.tile(v.mean(axis=0), (5, 1)), 1e-12)

    def cos_single():
        out = kt["cosformer_attention"](np.ones((1, 1)), np.ones((1, 1)), np.full((1, 1), 5.0)).out
        return bool(np.allclose(out, [[5.0]], atol=1e-15, rtol=0)), f"out={out.ravel().tolist()}"

    def cos_degenerate():
        q = np.array([[-1.0, -1.0], [1.0, 0.5]])
        res = kt["cosformer_attention"](q, np.abs(q), np.ones((2, 2)))
        return bool(res.degenerate_rows == 1 and np.all(res.out[0] == 0)), f"degenerate_rows={res.degenerate_rows}"

    r.check("cosformer.matches_explicit", cos_explicit)
    r.check("cosformer.cosine1d_expansion_matches_explicit", cos_biased("cosine1d"))
    r.check("cosformer.squircle_expansion_matches_explicit", cos_biased("squircle"))
    r.check("cosformer.cross_surrogate_matches_explicit", cos_surrogate)
    r.check("cosformer.identical_keys_give_equal_rows", cos_identical_keys)
    r.check("cosformer.single_token_is_identity", cos_single)
    r.check("cosformer.degenerate_rows_zeroed_and_counted", cos_degenerate)

    def no_square():
        n, d = 96, 4
        q, k, v = qkv(n, d)
        spec = _random_layout(rng, n, "squircle")
        with probing() as probe:
            kt["linformer_attention"](q, k, v, ProjectionPair(rng.normal(size=(8, n)), rng.normal(size=(8, n))))
            kt["cosformer_attention"](q, k, v)
            kt["cosformer_attention"](q, k, v, expand_separable(spec))
            kt["cosformer_attention"](q, k, v, cross_surrogate_expansion(BiasSpec("cross", spec.positions)))
        return not probe.saw_square(n), f"{len(probe.shapes)} tracked temporaries"

    r.check("probe.efficient_paths_allocate_no_n_by_n", no_square)

    # bias
    patterns = ("cosine1d", "squircle", "cross")

    def bias_property(name, pred):
        def run():
            for i in range(1000):
                n = int(rng.integers(1, 24))
                for pattern in patterns:
                    spec = _random_layout(rng, n, pattern)
                    if not pred(dense_bias(spec)):
                        return False, f"{pattern} layout {i} (N={n})"
            return True, "1000 layouts x 3 patterns"

        return run

    r.check("bias.entries_in_unit_interval", bias_property("range", lambda b: b.min() >= 0.0 and b.max() <= 1.0))
    r.check("bias.unit_diagonal", bias_property("diag", lambda b: np.all(np.diag(b) == 1.0)))
    r.check("bias.symmetric", bias_property("sym", lambda b: np.array_equal(b, b.T)))

    def dominance():
        for _ in range(1000):
            n = int(rng.integers(1, 24))
            pos = rng.uniform(0, 1000, size=(n, 2))
            sq, cr = (dense_bias(BiasSpec(p, pos)) for p in ("squircle", "cross"))
            sur = cross_surrogate_expansion(BiasSpec("cross", pos)).reconstruct()
            if np.any(cr < sq - 1e-15) or np.any(sur < cr - 1e-12):
                return False, f"dominance broken at N={n}"
        return True, "1000 layouts"

    def reconstruction():
        worst = 0.0
        for _ in range(200):
            n = int(rng.integers(1, 257))
            for pattern in ("cosine1d", "squircle"):
                spec = _random_layout(rng, n, pattern)
                worst = max(worst, _max_diff(expand_separable(spec).reconstruct(), dense_bias(spec)))
        return worst <= 1e-12, f"max abs diff {worst:.3e}"

    def page_reconstruction():
        pos = rng.uniform(0, 1000, size=(30, 2))
        spec = BiasSpec("squircle", pos, pages=rng.integers(0, 3, 30), cross_page_floor=0.25)
        return _within(expand_separable(spec).reconstruct(), dense_bias(spec), 1e-12)

    def term_counts():
        pos = rng.uniform(0, 1000, size=(5, 2))
        counts = (
            expand_separable(BiasSpec("cosine1d", np.arange(5.0), M=5.0)).n_terms,
            expand_separable(BiasSpec("squircle", pos)).n_terms,
            cross_surrogate_expansion(BiasSpec("cross", pos)).n_terms,
        )
        return counts == (2, 4, 8), f"terms (cosine1d, squircle, cross surrogate) = {counts}"

    def monotone():
        dx = np.linspace(0, 1000, 101)
        pos = np.stack([np.concatenate([[0.0], dx]), np.concatenate([[0.0], np.full(101, 300.0)])], axis=1)
        row = dense_bias(BiasSpec("squircle", pos))[0, 1:]
        return bool(np.all(np.diff(row) <= 1e-15)), "squircle along x with fixed dy"

    def analytic():
        pos = np.array([[0.0, 0.0], [500.0, 500.0]])
        sq = dense_bias(BiasSpec("squircle", pos))[0, 1]
        cr = dense_bias(BiasSpec("cross", pos))[0, 1]
        edge = dense_bias(BiasSpec("cosine1d", np.array([0.0, 2048.0]), M=2048.0))[0, 1]
        one = expand_separable(BiasSpec("cosine1d", np.arange(3.0), M=3.0))
        entry = float(sum(g[0] * h[2] for g, h in one.terms))
        ok = abs(sq - 0.5) < 1e-12 and abs(cr - math.sqrt(0.5)) < 1e-12 and abs(edge) < 1e-12 and abs(entry - 0.5) < 1e-12
        return ok, f"squircle={sq:.6f} cross={cr:.6f} cosine1d_edge={edge:.1e} entry={entry:.6f}"

    def surrogate_error():
        pos = rng.uniform(0, 1000, size=(64, 2))
        spec = BiasSpec("cross", pos)
        exp, reported = approximate_cross_expansion(spec)
        brute = _max_diff(exp.reconstruct(), dense_bias(spec))
        diag = BiasSpec("cross", np.array([[0.0, 0.0], [500.0, 500.0]]))
        worst_dir = approximate_cross_expansion(diag)[1]
        ok = abs(reported - brute) <= 1e-12 and abs(worst_dir - (2 * math.sqrt(0.5) - 0.5 - math.sqrt(0.5))) < 1e-12
        return ok, f"reported {reported:.6f} brute {brute:.6f} diagonal {worst_dir:.6f}"

    def surrogate_aligned():
        pos = np.stack([np.full(12, 250.0), rng.uniform(0, 1000, 12)], axis=1)
        spec = BiasSpec("cross", pos)
        return _within(cross_surrogate_expansion(spec).reconstruct(), dense_bias(spec), 1e-12)

    def m_guard():
        try:
            BiasSpec("squircle", np.array([[0.0, 0.0], [900.0, 10.0]]), M=500.0)
        except ValueError:
            return True, "rejected M below the coordinate spread"
        return False, "accepted M below the coordinate spread"

    r.check("bias.cross_dominates_squircle_and_surrogate_dominates_cross", dominance)
    r.check("bias.separable_reconstruction", reconstruction)
    r.check("bias.page_attenuated_reconstruction", page_reconstruction)
    r.check("bias.expansion_term_counts", term_counts)
    r.check("bias.squircle_monotone_along_axis", monotone)
    r.check("bias.analytic_values", analytic)
    r.check("bias.surrogate_error_matches_brute_force", surrogate_error)
    r.check("bias.surrogate_exact_when_aligned", surrogate_aligned)
    r.check("bias.M_must_cover_coordinate_spread", m_guard)
    return r.results


def _central_difference(f, x, step):
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * step)
    return grad


def _relative_error(a, b) -> float:
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-12)
    return float(np.max(np.abs(a - b))) / scale


def run_gradient_suite(kernels: KernelTable | None = None, seed: int = 0, tol: float = 1e-4, step: float = 1e-4) -> list[CheckResult]:
    """Every backward pass against central differences of its forward."""
    kt = _kernel_table(kernels)
    rng = np.random.default_rng(seed)
    r = _Runner()
    n, d = 6, 3
    pos = rng.uniform(0, 1000, size=(n, 2))
    cases = {
        "full": dict(forward=lambda q, k, v: kt["full_attention"](q, k, v).out),
        "biased": dict(bias=dense_bias(BiasSpec("squircle", pos))),
        "biased_unnormalized": dict(bias=dense_bias(BiasSpec("cross", pos)), renormalize=False),
        "linformer": dict(proj=ProjectionPair(rng.normal(size=(3, n)), rng.normal(size=(3, n)))),
        "cosformer": dict(),
        "cosformer_cosine1d": dict(expansion=expand_separable(BiasSpec("cosine1d", np.arange(n, dtype=float), M=float(n)))),
        "cosformer_squircle": dict(expansion=expand_separable(BiasSpec("squircle", pos))),
        "cosformer_cross_surrogate": dict(expansion=cross_surrogate_expansion(BiasSpec("cross", pos))),
    }

    def forward(name, kw):
        if name.startswith("biased"):
            return lambda q, k, v: kt["biased_full_attention"](q, k, v, kw["bias"], kw.get("renormalize", True)).out
        if name == "linformer":
            return lambda q, k, v: kt["linformer_attention"](q, k, v, kw["proj"]).out
        if name.startswith("cosformer"):
            return lambda q, k, v: kt["cosformer_attention"](q, k, v, kw.get("expansion")).out
        return kw["forward"]

    for name, kw in cases.items():
        variant = "biased" if name.startswith("biased") else name.split("_")[0]
        low = 0.05 if variant == "cosformer" else -1.0  # keep ReLU away from its kink
        q, k, v = (rng.uniform(low, 1.0, size=(n, d)) for _ in range(3))
        upstream = rng.normal(size=(n, d))
        fwd = forward(name, kw)
        args = {key: val for key, val in kw.items() if key in ("bias", "renormalize", "proj", "expansion")}

        def run(q=q, k=k, v=v, upstream=upstream, fwd=fwd, args=args, variant=variant):
            grads = kt["attention_backward"](variant, q, k, v, upstream, **args)
            worst, which = 0.0, ""
            inputs = {"q": q, "k": k, "v": v}
            for key in ("q", "k", "v"):

                def loss(x, key=key):
                    return float(np.sum(fwd(**{**inputs, key: x}) * upstream))

                err = _relative_error(grads[key], _central_difference(loss, inputs[key], step))
                if err > worst:
                    worst, which = err, key
            if variant == "linformer":
                for key in ("pk", "pv"):

                    def loss(x, key=key):
                        proj = ProjectionPair(x, args["proj"].pv) if key == "pk" else ProjectionPair(args["proj"].pk, x)
                        return float(np.sum(kt["linformer_attention"](q, k, v, proj).out * upstream))

                    err = _relative_error(grads[key], _central_difference(loss, getattr(args["proj"], key), step))
                    if err > worst:
                        worst, which = err, key
            return worst <= tol, f"max relative error {worst:.2e} (w.r.t. {which or 'q'}, tol {tol:.0e})"

        r.check(f"gradient.{name}", run)

        def zero(q=q, k=k, v=v, args=args, variant=variant):
            grads = kt["attention_backward"](variant, q, k, v, np.zeros((n, d)), **args)
            return all(np.all(g == 0) for g in grads.values()), "zero upstream"

        r.check(f"gradient.{name}.zero_upstream_gives_zero", zero)
    return r.results


def summarize(results: Sequence[CheckResult]) -> tuple[int, int]:
    failed = sum(not c.passed for c in results)
    return len(results) - failed, failed
