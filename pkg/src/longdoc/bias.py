"""2D relative attention biases and their separable feature expansions.

A bias ``B`` multiplies attention weights element-wise. For the linear
attention path it must be given as a sum of products
``B[i, j] = sum_n g[n, i] * h[n, j]``; :class:`FeatureExpansion` holds the
``g`` and ``h`` multiplier rows.

Cosine decays use ``cos(pi * delta / (2 M))``. As long as ``M`` is at least the
largest coordinate difference, every argument lies in ``[0, pi/2]`` and every
entry in ``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PATTERNS = ("none", "cosine1d", "squircle", "cross")
GRID_MAX = 1000.0


class NotSeparableError(ValueError):
    """Raised when a bias pattern has no exact sum-of-products form."""


@dataclass(frozen=True)
class BiasSpec:
    """Bias pattern over ``N`` tokens.

    ``positions`` is ``(N,)`` token indices for ``cosine1d`` and ``(N, 2)``
    box centres ``(x, y)`` on the 0-1000 grid otherwise. ``pages`` and
    ``cross_page_floor`` scale pairs on different pages (1.0 disables it).
    """

    pattern: str
    positions: np.ndarray
    M: float = GRID_MAX
    pages: np.ndarray | None = None
    cross_page_floor: float = 1.0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown bias pattern {self.pattern!r}; expected one of {PATTERNS}")
        pos = np.asarray(self.positions, dtype=np.float64)
        if self.pattern == "cosine1d":
            if pos.ndim != 1:
                raise ValueError("cosine1d positions must be a 1-D index array")
        elif pos.ndim != 2 or pos.shape[1] != 2:
            raise ValueError(f"{self.pattern} positions must have shape (N, 2)")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions contain non-finite entries")
        if not self.M > 0:
            raise ValueError(f"normalisation constant M must be positive, got {self.M}")
        if self.pattern != "none" and len(pos):
            spread = float(np.max(pos.max(axis=0) - pos.min(axis=0)))
            if spread > self.M:
                raise ValueError(
                    f"M={self.M} is smaller than the largest coordinate difference {spread}; "
                    "cosine arguments would leave [0, pi/2]"
                )
        if not 0.0 <= self.cross_page_floor <= 1.0:
            raise ValueError("cross_page_floor must lie in [0, 1]")
        pages = None
        if self.pages is not None:
            pages = np.asarray(self.pages, dtype=np.int64)
            if pages.shape != (len(pos),):
                raise ValueError("pages must give one page index per token")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "pages", pages)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def omega(self) -> float:
        return np.pi / (2.0 * self.M)

    @property
    def page_attenuated(self) -> bool:
        return self.pages is not None and self.cross_page_floor < 1.0


@dataclass(frozen=True)
class FeatureExpansion:
    g: np.ndarray
    h: np.ndarray

    @property
    def n_terms(self) -> int:
        return self.g.shape[0]

    @property
    def terms(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.g, self.h))

    def reconstruct(self) -> np.ndarray:
        return self.g.T @ self.h


def box_centers(boxes) -> np.ndarray:
    """Centres ``(x, y)`` of ``(x0, y0, x1, y1)`` boxes."""
    boxes = np.asarray(boxes, dtype=np.float64)
    return np.stack([(boxes[:, 0] + boxes[:, 2]) / 2.0, (boxes[:, 1] + boxes[:, 3]) / 2.0], axis=1)


def _axis_cos(coords: np.ndarray, omega: float) -> np.ndarray:
    delta = np.abs(coords[:, None] - coords[None, :])
    return np.clip(np.cos(omega * delta), 0.0, 1.0)


def _page_factor(spec: BiasSpec) -> np.ndarray:
    same = spec.pages[:, None] == spec.pages[None, :]
    return np.where(same, 1.0, spec.cross_page_floor)


def dense_bias(spec: BiasSpec) -> np.ndarray:
    n = spec.n
    if spec.pattern == "none":
        bias = np.ones((n, n))
    elif spec.pattern == "cosine1d":
        bias = _axis_cos(spec.positions, spec.omega)
    else:
        cx = _axis_cos(spec.positions[:, 0], spec.omega)
        cy = _axis_cos(spec.positions[:, 1], spec.omega)
        bias = cx * cy if spec.pattern == "squircle" else np.maximum(cx, cy)
    if spec.page_attenuated:
        bias = bias * _page_factor(spec)
    return bias


def _cos_sin_terms(coords: np.ndarray, omega: float) -> tuple[np.ndarray, np.ndarray]:
    # cos(w(a - b)) = cos(wa)cos(wb) + sin(wa)sin(wb)
    feats = np.stack([np.cos(omega * coords), np.sin(omega * coords)])
    return feats, feats.copy()


def _product(first: tuple[np.ndarray, np.ndarray], second: tuple[np.ndarray, np.ndarray]):
    g1, h1 = first
    g2, h2 = second
    g = (g1[:, None, :] * g2[None, :, :]).reshape(-1, g1.shape[1])
    h = (h1[:, None, :] * h2[None, :, :]).reshape(-1, h1.shape[1])
    return g, h


def _page_terms(spec: BiasSpec) -> tuple[np.ndarray, np.ndarray]:
    # floor + (1 - floor) * [page_i == page_j], the indicator split per page
    pages = np.unique(spec.pages)
    onehot = (spec.pages[None, :] == pages[:, None]).astype(np.float64)
    g = np.vstack([np.full((1, spec.n), spec.cross_page_floor), (1.0 - spec.cross_page_floor) * onehot])
    h = np.vstack([np.ones((1, spec.n)), onehot])
    return g, h


def _with_pages(spec: BiasSpec, terms: tuple[np.ndarray, np.ndarray]) -> FeatureExpansion:
    if spec.page_attenuated:
        terms = _product(terms, _page_terms(spec))
    return FeatureExpansion(*terms)


def expand_separable(spec: BiasSpec) -> FeatureExpansion:
    """Exact sum-of-products form: 2 terms for cosine1d, 4 for squircle."""
    if spec.pattern == "cross":
        raise NotSeparableError(
            "cross bias (max of two cosines) is not separable; use approximate_cross_expansion "
            "or the explicit path"
        )
    if spec.pattern == "none":
        return _with_pages(spec, (np.ones((1, spec.n)), np.ones((1, spec.n))))
    if spec.pattern == "cosine1d":
        return _with_pages(spec, _cos_sin_terms(spec.positions, spec.omega))
    x_terms = _cos_sin_terms(spec.positions[:, 0], spec.omega)
    y_terms = _cos_sin_terms(spec.positions[:, 1], spec.omega)
    return _with_pages(spec, _product(x_terms, y_terms))


def cross_surrogate_expansion(spec: BiasSpec) -> FeatureExpansion:
    """Separable stand-in ``cx + cy - cx*cy`` for the cross bias (8 terms)."""
    if spec.pattern != "cross":
        raise ValueError("cross surrogate requested for a non-cross pattern")
    x_terms = _cos_sin_terms(spec.positions[:, 0], spec.omega)
    y_terms = _cos_sin_terms(spec.positions[:, 1], spec.omega)
    xy_g, xy_h = _product(x_terms, y_terms)
    g = np.vstack([x_terms[0], y_terms[0], -xy_g])
    h = np.vstack([x_terms[1], y_terms[1], xy_h])
    return _with_pages(spec, (g, h))


def approximate_cross_expansion(spec: BiasSpec) -> tuple[FeatureExpansion, float]:
    """Surrogate expansion plus its largest deviation from the exact cross bias.

    The surrogate equals ``1 - (1 - cx)(1 - cy)``: it dominates ``max(cx, cy)``
    and matches it whenever the tokens share a row or a column.
    """
    expansion = cross_surrogate_expansion(spec)
    error = float(np.max(np.abs(expansion.reconstruct() - dense_bias(spec)))) if spec.n else 0.0
    return expansion, error


def expansion_for(spec: BiasSpec) -> FeatureExpansion | None:
    """Expansion used by the linear path; ``None`` means unbiased."""
    if spec.pattern == "none" and not spec.page_attenuated:
        return None
    if spec.pattern == "cross":
        return cross_surrogate_expansion(spec)
    return expand_separable(spec)
