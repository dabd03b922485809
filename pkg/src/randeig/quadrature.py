"""Gauss-Hermite rules for the standard normal measure, tensor and Smolyak grids."""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from math import comb

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

MERGE_TOL = 1e-12


@dataclass(frozen=True)
class QuadGrid:
    points: np.ndarray = field(repr=False)  # (n, m_xi)
    weights: np.ndarray = field(repr=False)  # (n,)
    meta: str = ""

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[0] != self.weights.shape[0]:
            raise ValueError("points must be (n, m_xi) and match the weight count")
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def n(self) -> int:
        return self.weights.size

    @property
    def m_xi(self) -> int:
        return self.points.shape[1]

    def integrate(self, values) -> np.ndarray:
        """Weighted sum over the leading (point) axis of ``values``."""
        return np.tensordot(self.weights, np.asarray(values), axes=(0, 0))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"xi_{j + 1}" for j in range(self.m_xi)] + ["weight"])
            for x, wt in zip(self.points, self.weights):
                w.writerow([repr(float(v)) for v in x] + [repr(float(wt))])


def gauss_hermite_1d(n: int) -> QuadGrid:
    """``n``-point rule exact for polynomials of degree ``2n-1`` under N(0, 1)."""
    if n < 1:
        raise ValueError("need at least one point")
    x, w = hermegauss(n)
    w = w / w.sum()
    x = np.where(np.abs(x) < 1e-15, 0.0, x)
    return QuadGrid(points=x[:, None].copy(), weights=w, meta=f"gauss-hermite n={n}")


def tensor_grid(rules: list[QuadGrid]) -> QuadGrid:
    if not rules:
        raise ValueError("need at least one rule")
    pts = [r.points for r in rules]
    wts = [r.weights for r in rules]
    grids = np.meshgrid(*[p[:, 0] for p in pts], indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)
    wgrid = np.meshgrid(*wts, indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrid], axis=1), axis=1)
    return QuadGrid(points=points, weights=weights,
                    meta="tensor " + "x".join(str(r.n) for r in rules))


def full_tensor(m_xi: int, n: int) -> QuadGrid:
    """Isotropic tensor Gauss-Hermite grid with ``n`` points per variable."""
    return tensor_grid([gauss_hermite_1d(n)] * m_xi)


def smolyak(m_xi: int, level: int) -> QuadGrid:
    """Smolyak combination of non-nested Gauss-Hermite rules.

    The 1D rule of index ``i`` has ``i`` points. Multi-indices satisfy
    ``m_xi <= |i| <= m_xi + level - 1`` and carry the usual combination
    coefficient ``(-1)^(q-|i|) * C(m_xi-1, q-|i|)`` with ``q = m_xi + level - 1``.
    Coinciding nodes are merged; weights may be negative. The result is exact
    for total degree ``2*level - 1``.
    """
    if level < 1:
        raise ValueError("level must be >= 1")
    if m_xi < 1:
        raise ValueError("m_xi must be >= 1")
    q = m_xi + level - 1
    rules = {n: gauss_hermite_1d(n) for n in range(1, level + 1)}
    acc: dict[tuple, list] = {}
    for idx in itertools.product(range(1, level + 1), repeat=m_xi):
        s = sum(idx)
        if s < max(m_xi, q - m_xi + 1) or s > q:
            continue
        coef = (-1) ** (q - s) * comb(m_xi - 1, q - s)
        tg = tensor_grid([rules[i] for i in idx])
        for x, w in zip(tg.points, tg.weights):
            key = tuple(np.round(x / MERGE_TOL).astype(np.int64))
            if key in acc:
                acc[key][1] += coef * w
            else:
                acc[key] = [x, coef * w]
    keys = sorted(acc)
    points = np.array([acc[k][0] for k in keys])
    weights = np.array([acc[k][1] for k in keys])
    keep = np.abs(weights) > 1e-15
    return QuadGrid(points=points[keep], weights=weights[keep],
                    meta=f"smolyak m_xi={m_xi} level={level}")


def gaussian_moment(k: int) -> float:
    """E[x^k] for x ~ N(0, 1)."""
    if k % 2:
        return 0.0
    out = 1.0
    for j in range(k - 1, 0, -2):
        out *= j
    return out
