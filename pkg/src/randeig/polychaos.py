"""Orthonormal Hermite chaos: multi-indices, basis evaluation, expectation tensors.

The univariate polynomials are the probabilists' Hermite polynomials scaled to
unit norm under the standard normal density, ``h_n = He_n / sqrt(n!)``.
Multivariate basis functions are products ``psi_l(xi) = prod_j h_{a_j}(xi_j)``
indexed by multi-indices ``a`` in graded order: total degree first, then
reverse lexicographic within a degree, e.g. for three variables and degree 2::

    (2,0,0) (1,1,0) (1,0,1) (0,2,0) (0,1,1) (0,0,2)

Index 0 is always the all-zeros multi-index, i.e. the constant function.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb, factorial, sqrt

import numpy as np

DROP_TOL = 1e-12


@dataclass(frozen=True)
class GpcBasis:
    """Total-degree Hermite chaos basis in ``m_xi`` variables up to degree ``p``."""

    m_xi: int
    p: int
    indices: np.ndarray = field(repr=False)  # (size, m_xi) int array

    @property
    def size(self) -> int:
        return self.indices.shape[0]

    def __len__(self) -> int:
        return self.size

    @property
    def degrees(self) -> np.ndarray:
        """Total degree of every basis function."""
        return self.indices.sum(axis=1)

    def degree_slices(self) -> list[slice]:
        """Index ranges grouping basis functions by total degree."""
        deg = self.degrees
        return [slice(int(np.searchsorted(deg, d)), int(np.searchsorted(deg, d, side="right")))
                for d in range(self.p + 1)]

    def eval(self, xi) -> np.ndarray:
        """Evaluate every basis function at points ``xi``.

        ``xi`` has shape (m_xi,) or (n, m_xi). Returns shape (size,) or (n, size).
        """
        xi = np.asarray(xi, dtype=float)
        single = xi.ndim == 1
        pts = np.atleast_2d(xi)
        if pts.shape[1] != self.m_xi:
            raise ValueError(f"points have {pts.shape[1]} coordinates, basis has m_xi={self.m_xi}")
        out = np.ones((pts.shape[0], self.size))
        for j in range(self.m_xi):
            table = hermite_table(self.p, pts[:, j])  # (n, p+1)
            out *= table[:, self.indices[:, j]]
        return out[0] if single else out


def basis_size(m_xi: int, p: int) -> int:
    """Number of total-degree-``p`` multi-indices in ``m_xi`` variables."""
    return comb(m_xi + p, p)


def gen_multi_indices(m_xi: int, p: int) -> GpcBasis:
    if m_xi < 1:
        raise ValueError("m_xi must be >= 1")
    if p < 0:
        raise ValueError("p must be >= 0")
    rows = []
    for d in range(p + 1):
        level = [a for a in itertools.product(range(d + 1), repeat=m_xi) if sum(a) == d]
        rows.extend(sorted(level, reverse=True))
    indices = np.array(rows, dtype=int).reshape(-1, m_xi)
    indices.setflags(write=False)
    return GpcBasis(m_xi=m_xi, p=p, indices=indices)


def hermite_table(n: int, x) -> np.ndarray:
    """Orthonormal Hermite values ``h_0..h_n`` at ``x``; shape ``x.shape + (n+1,)``.

    Uses the normalized recurrence
    ``h_{k+1} = (x h_k - sqrt(k) h_{k-1}) / sqrt(k+1)``.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (n + 1,))
    out[..., 0] = 1.0
    if n >= 1:
        out[..., 1] = x
    for k in range(1, n):
        out[..., k + 1] = (x * out[..., k] - sqrt(k) * out[..., k - 1]) / sqrt(k + 1)
    return out


def hermite_eval(n: int, x):
    if n < 0:
        raise ValueError("degree must be non-negative")
    val = hermite_table(n, x)[..., n]
    return float(val) if np.ndim(val) == 0 else val


def basis_eval(basis: GpcBasis, ell: int, xi) -> float:
    if not 0 <= ell < basis.size:
        raise IndexError(f"basis index {ell} out of range [0, {basis.size})")
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (basis.m_xi,):
        raise ValueError(f"xi must have shape ({basis.m_xi},)")
    val = 1.0
    for j, a in enumerate(basis.indices[ell]):
        val *= hermite_eval(int(a), xi[j])
    return val


# -- univariate expectation tables -------------------------------------------

def _he_triple(a: int, b: int, c: int) -> float:
    # E[He_a He_b He_c] for unnormalized probabilists' Hermite
    s2 = a + b + c
    if s2 % 2:
        return 0.0
    s = s2 // 2
    if s < a or s < b or s < c:
        return 0.0
    return factorial(a) * factorial(b) * factorial(c) / (
        factorial(s - a) * factorial(s - b) * factorial(s - c))


def triple_table_1d(na: int, nb: int, nc: int) -> np.ndarray:
    """``T[a,b,c] = E[h_a h_b h_c]`` for the orthonormal univariate polynomials."""
    t = np.zeros((na + 1, nb + 1, nc + 1))
    for a, b, c in itertools.product(range(na + 1), range(nb + 1), range(nc + 1)):
        v = _he_triple(a, b, c)
        if v:
            t[a, b, c] = v / sqrt(factorial(a) * factorial(b) * factorial(c))
    return t


def quad_table_1d(na: int, nb: int, nc: int, nd: int) -> np.ndarray:
    """``Q[a,b,c,d] = E[h_a h_b h_c h_d]`` via the linearization
    ``He_a He_b = sum_r C(a,r) C(b,r) r! He_{a+b-2r}``."""
    q = np.zeros((na + 1, nb + 1, nc + 1, nd + 1))
    for a, b, c, d in itertools.product(range(na + 1), range(nb + 1), range(nc + 1), range(nd + 1)):
        if (a + b + c + d) % 2:
            continue
        tot = 0
        for r in range(min(a, b) + 1):
            tot += comb(a, r) * comb(b, r) * factorial(r) * _he_triple(a + b - 2 * r, c, d)
        if tot:
            q[a, b, c, d] = tot / sqrt(factorial(a) * factorial(b) * factorial(c) * factorial(d))
    return q


# -- multivariate tensors ----------------------------------------------------

@dataclass(frozen=True)
class SparseTensor:
    """Expectation tensor kept both dense and as coordinate lists.

    ``coords`` has one row per stored entry (dropped below ``DROP_TOL``) and
    ``values`` the matching entries.
    """

    dense: np.ndarray = field(repr=False)
    coords: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.dense.shape

    @property
    def nnz(self) -> int:
        return self.values.size

    def __getitem__(self, key):
        return self.dense[key]

    def save_coo(self, path) -> None:
        """Write one ``i j k ... value`` line per stored entry."""
        with open(path, "w") as fh:
            fh.write("# shape " + " ".join(map(str, self.shape)) + "\n")
            for idx, v in zip(self.coords, self.values):
                fh.write(" ".join(map(str, idx)) + f" {v:.17g}\n")

    @classmethod
    def load_coo(cls, path) -> "SparseTensor":
        with open(path) as fh:
            header = fh.readline().split()
            if header[:2] != ["#", "shape"]:
                raise ValueError(f"{path}: missing '# shape' header")
            shape = tuple(int(s) for s in header[2:])
            rows = np.loadtxt(fh, ndmin=2)
        dense = np.zeros(shape)
        if rows.size:
            idx = tuple(rows[:, i].astype(int) for i in range(len(shape)))
            dense[idx] = rows[:, -1]
        return _from_dense(dense, cls)


class TripleTensor(SparseTensor):
    """``c[l, j, k] = E[psi_l psi_j psi_k]``, l over the operator basis."""


class QuadTensor(SparseTensor):
    """``c[l, i, j, k] = E[psi_l psi_i psi_j psi_k]``; l, k over the operator basis."""


def _from_dense(dense: np.ndarray, cls=SparseTensor):
    dense = np.where(np.abs(dense) < DROP_TOL, 0.0, dense)
    coords = np.argwhere(dense != 0.0)
    values = dense[tuple(coords.T)]
    dense.setflags(write=False)
    return cls(dense=dense, coords=coords, values=values)


def _check_pair(basis_a: GpcBasis, basis_sol: GpcBasis) -> None:
    if basis_a.m_xi != basis_sol.m_xi:
        raise ValueError(f"basis dimension mismatch: m_xi {basis_a.m_xi} vs {basis_sol.m_xi}")


def triple_tensor(basis_a: GpcBasis, basis_sol: GpcBasis) -> TripleTensor:
    _check_pair(basis_a, basis_sol)
    pa, ps = basis_a.p, basis_sol.p
    t1 = triple_table_1d(pa, ps, ps)
    ia = basis_a.indices[:, None, None, :]
    ij = basis_sol.indices[None, :, None, :]
    ik = basis_sol.indices[None, None, :, :]
    dense = np.ones((basis_a.size, basis_sol.size, basis_sol.size))
    for v in range(basis_a.m_xi):
        dense *= t1[ia[..., v], ij[..., v], ik[..., v]]
    return _from_dense(dense, TripleTensor)


def quad_tensor(basis_a: GpcBasis, basis_sol: GpcBasis) -> QuadTensor:
    _check_pair(basis_a, basis_sol)
    pa, ps = basis_a.p, basis_sol.p
    q1 = quad_table_1d(pa, ps, ps, pa)
    il = basis_a.indices[:, None, None, None, :]
    ii = basis_sol.indices[None, :, None, None, :]
    ij = basis_sol.indices[None, None, :, None, :]
    ik = basis_a.indices[None, None, None, :, :]
    dense = np.ones((basis_a.size, basis_sol.size, basis_sol.size, basis_a.size))
    for v in range(basis_a.m_xi):
        dense *= q1[il[..., v], ii[..., v], ij[..., v], ik[..., v]]
    return _from_dense(dense, QuadTensor)
