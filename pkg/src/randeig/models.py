"""Vibration benchmarks with a random Young's modulus.

Both models are linear in the modulus, so element stiffness matrices are
built once for unit modulus and every chaos coefficient of the stiffness is a
modulus-weighted sum of them. The modulus is constant per element, taken from
the field at the element midpoint (beam) or centroid (plate).

DOF layout is node-major: beam ``(w, theta)``, plate ``(w, theta_x, theta_y)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .linalg import CholeskyError, cholesky


@dataclass
class BeamParams:
    E0: float = 1e8
    nu: float = 0.30
    length: float = 1.0
    thickness: float = 0.001
    kappa: float = 5.0 / 6.0
    rho: float = 1.0
    n_elements: int = 20


@dataclass
class PlateParams:
    E0: float = 10920.0
    nu: float = 0.30
    side: float = 1.0
    thickness: float = 0.1
    kappa: float = 5.0 / 6.0
    rho: float = 1.0
    nx: int = 10
    ny: int = 10


@dataclass(frozen=True)
class GeneralizedProblem:
    K: np.ndarray = field(repr=False)  # (M_A+1, M_x, M_x)
    M: np.ndarray = field(repr=False)
    free_dofs: np.ndarray = field(repr=False)
    dof_labels: list = field(repr=False)
    fixed_dofs: np.ndarray = field(repr=False)
    element_centers: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.M.shape[0]


@dataclass(frozen=True)
class MatrixExpansion:
    """Coefficients ``A_l`` of a matrix chaos expansion, stacked on axis 0.

    ``chol`` is the lower Cholesky factor of the mass matrix when the expansion
    came from a generalized problem; eigenvectors map back via ``L^-T w``.
    """

    A: np.ndarray = field(repr=False)
    m_xi: int = 0
    p: int = 0
    chol: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        # contiguous storage for reshaped BLAS calls; subnormals flushed to zero
        A = np.array(self.A, dtype=float, order="C")
        A[np.abs(A) < np.finfo(float).tiny] = 0.0
        object.__setattr__(self, "A", A)

    @property
    def n_terms(self) -> int:
        return self.A.shape[0]

    @property
    def size(self) -> int:
        return self.A.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.A[0]

    def scaled(self, c: float) -> "MatrixExpansion":
        return MatrixExpansion(self.A * c, self.m_xi, self.p, self.chol)

    def to_physical(self, w: np.ndarray) -> np.ndarray:
        """Map standard-form vectors (last axis) back to physical DOFs."""
        if self.chol is None:
            return w
        flat = np.reshape(w, (-1, w.shape[-1])).T
        out = sla.solve_triangular(self.chol, flat, lower=True, trans="T")
        return out.T.reshape(w.shape)


def _field_values(field_coeffs, n_el: int, E0: float) -> np.ndarray:
    if field_coeffs is None:
        return np.full((1, n_el), float(E0))
    c = np.asarray(field_coeffs, dtype=float)
    if c.ndim == 1:
        c = c[None, :]
    if c.shape[1] != n_el:
        raise ValueError(f"field has {c.shape[1]} element values, mesh has {n_el} elements")
    return c


def _assemble(ke_unit, dofs, E, ndof) -> np.ndarray:
    K = np.zeros((E.shape[0], ndof, ndof))
    rows = dofs[:, :, None]
    cols = dofs[:, None, :]
    for ell in range(E.shape[0]):
        np.add.at(K[ell], (rows, cols), E[ell][:, None, None] * ke_unit)
    return K


def beam_midpoints(params: BeamParams) -> np.ndarray:
    n = params.n_elements
    return (np.arange(n) + 0.5) * params.length / n


def timoshenko_assemble(params: BeamParams, field_coeffs=None) -> GeneralizedProblem:
    """Cantilever Timoshenko beam, linear elements, clamped at ``x = 0``.

    ``field_coeffs`` is an ``(M_A+1, n_elements)`` array of modulus chaos
    coefficients per element; ``None`` gives the deterministic beam with
    modulus ``params.E0``.
    """
    n = params.n_elements
    if n < 2:
        raise ValueError("need at least 2 elements")
    le = params.length / n
    if le <= 0:
        raise ValueError("singular element geometry: non-positive element length")
    t = params.thickness
    I = t ** 3 / 12.0
    G_unit = 1.0 / (2.0 * (1.0 + params.nu))

    # unit-modulus element stiffness: 2-point bending (exact), 1-point shear
    kb = np.zeros((4, 4))
    kb[np.ix_([1, 3], [1, 3])] = I / le * np.array([[1.0, -1.0], [-1.0, 1.0]])
    bs = np.array([-1.0 / le, 0.5, 1.0 / le, 0.5])
    ks = params.kappa * t * G_unit * le * np.outer(bs, bs)
    ke = kb + ks

    mline = le / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    me = np.zeros((4, 4))
    me[np.ix_([0, 2], [0, 2])] = params.rho * t * mline
    me[np.ix_([1, 3], [1, 3])] = params.rho * I * mline

    nn = n + 1
    ndof = 2 * nn
    dofs = np.array([[2 * e, 2 * e + 1, 2 * e + 2, 2 * e + 3] for e in range(n)])
    E = _field_values(field_coeffs, n, params.E0)
    K = _assemble(np.broadcast_to(ke, (n, 4, 4)), dofs, E, ndof)
    M = np.zeros((ndof, ndof))
    np.add.at(M, (dofs[:, :, None], dofs[:, None, :]), np.broadcast_to(me, (n, 4, 4)))

    fixed = np.array([0, 1])
    free = np.setdiff1d(np.arange(ndof), fixed)
    labels = [(node, name) for node in range(nn) for name in ("w", "theta")]
    return GeneralizedProblem(
        K=K[:, free][:, :, free], M=M[np.ix_(free, free)], free_dofs=free,
        dof_labels=[labels[i] for i in free], fixed_dofs=fixed,
        element_centers=beam_midpoints(params)[:, None])


def plate_centroids(params: PlateParams) -> np.ndarray:
    hx = params.side / params.nx
    hy = params.side / params.ny
    return np.array([[(i + 0.5) * hx, (j + 0.5) * hy]
                     for i in range(params.nx) for j in range(params.ny)])


def _q4_shape(r, s):
    xi = np.array([-1.0, 1.0, 1.0, -1.0])
    eta = np.array([-1.0, -1.0, 1.0, 1.0])
    N = 0.25 * (1 + xi * r) * (1 + eta * s)
    dNr = 0.25 * xi * (1 + eta * s)
    dNs = 0.25 * eta * (1 + xi * r)
    return N, dNr, dNs


def mindlin_assemble(params: PlateParams, field_coeffs=None) -> GeneralizedProblem:
    """Square Mindlin plate on a regular Q4 mesh.

    Bending uses 2x2 Gauss points and shear 1x1 (selective reduced
    integration); mass is consistent with 2x2 Gauss points. Every DOF on the
    boundary nodes is constrained.
    """
    nx, ny = params.nx, params.ny
    hx, hy = params.side / nx, params.side / ny
    if hx <= 0 or hy <= 0:
        raise ValueError("singular element geometry")
    t = params.thickness
    nu = params.nu
    Db = t ** 3 / 12.0 / (1 - nu ** 2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
    Ds = params.kappa * t / (2.0 * (1.0 + nu)) * np.eye(2)
    I = t ** 3 / 12.0
    mdiag = np.diag([params.rho * t, params.rho * I, params.rho * I])
    detJ = hx * hy / 4.0
    g = 1.0 / np.sqrt(3.0)

    ke = np.zeros((12, 12))
    me = np.zeros((12, 12))
    for r in (-g, g):
        for s in (-g, g):
            N, dNr, dNs = _q4_shape(r, s)
            dx, dy = dNr * 2 / hx, dNs * 2 / hy
            Bb = np.zeros((3, 12))
            Bb[0, 1::3] = dx
            Bb[1, 2::3] = dy
            Bb[2, 1::3] = dy
            Bb[2, 2::3] = dx
            ke += Bb.T @ Db @ Bb * detJ
            Nm = np.zeros((3, 12))
            for c in range(3):
                Nm[c, c::3] = N
            me += Nm.T @ mdiag @ Nm * detJ
    N, dNr, dNs = _q4_shape(0.0, 0.0)
    Bs = np.zeros((2, 12))
    Bs[0, 0::3] = dNr * 2 / hx
    Bs[0, 1::3] = N
    Bs[1, 0::3] = dNs * 2 / hy
    Bs[1, 2::3] = N
    ke += Bs.T @ Ds @ Bs * 4.0 * detJ

    node = lambda i, j: i * (ny + 1) + j
    nn = (nx + 1) * (ny + 1)
    ndof = 3 * nn
    elems = [[node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)]
             for i in range(nx) for j in range(ny)]
    dofs = np.array([[3 * q + c for q in el for c in range(3)] for el in elems])
    n_el = len(elems)
    E = _field_values(field_coeffs, n_el, params.E0)
    K = _assemble(np.broadcast_to(ke, (n_el, 12, 12)), dofs, E, ndof)
    M = np.zeros((ndof, ndof))
    np.add.at(M, (dofs[:, :, None], dofs[:, None, :]), np.broadcast_to(me, (n_el, 12, 12)))

    boundary = [node(i, j) for i in range(nx + 1) for j in range(ny + 1)
                if i in (0, nx) or j in (0, ny)]
    fixed = np.array(sorted(3 * q + c for q in boundary for c in range(3)))
    free = np.setdiff1d(np.arange(ndof), fixed)
    labels = [(q, name) for q in range(nn) for name in ("w", "theta_x", "theta_y")]
    return GeneralizedProblem(
        K=K[:, free][:, :, free], M=M[np.ix_(free, free)], free_dofs=free,
        dof_labels=[labels[i] for i in free], fixed_dofs=fixed,
        element_centers=plate_centroids(params))


def to_standard(gp: GeneralizedProblem, m_xi: int = 0, p: int = 0) -> MatrixExpansion:
    """``A_l = L^-1 K_l L^-T`` with ``M = L L^T``."""
    try:
        L = cholesky(gp.M)
    except CholeskyError as exc:
        raise CholeskyError(f"mass matrix is not SPD: {exc}") from exc
    A = np.empty_like(gp.K)
    for ell, K in enumerate(gp.K):
        X = sla.solve_triangular(L, K, lower=True)
        X = sla.solve_triangular(L, X.T, lower=True)
        A[ell] = 0.5 * (X + X.T)
    return MatrixExpansion(A=A, m_xi=m_xi, p=p, chol=L)


# -- file format ---------------------------------------------------------------
# line 1: "M_x M_A m_xi p"; then M_A+1 blocks of M_x rows, M_x values per row.

SYM_TOL = 1e-10


def save_expansion(exp: MatrixExpansion, path) -> None:
    mx = exp.size
    with open(path, "w") as fh:
        fh.write(f"{mx} {exp.n_terms - 1} {exp.m_xi} {exp.p}\n")
        # 17 significant digits round-trip every float64
        np.savetxt(fh, exp.A.reshape(-1, mx), fmt="%.17g")


def load_expansion(path) -> MatrixExpansion:
    lines = Path(path).read_text().split("\n")
    try:
        mx, ma, m_xi, p = (int(v) for v in lines[0].split())
    except ValueError as exc:
        raise ValueError(f"{path}: malformed header {lines[0]!r}") from exc
    if mx < 1 or ma < 0:
        raise ValueError(f"{path}: empty matrix list")
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != (ma + 1) * mx:
        raise ValueError(f"{path}: expected {(ma + 1) * mx} rows, found {len(body)}")
    rows = [ln.split() for ln in body]
    if any(len(r) != mx for r in rows):
        raise ValueError(f"{path}: dimension mismatch, every row must have {mx} values")
    A = np.array(rows, dtype=float).reshape(ma + 1, mx, mx)
    for ell, blk in enumerate(A):
        scale = max(np.abs(blk).max(), 1e-300)
        if np.abs(blk - blk.T).max() > SYM_TOL * scale:
            raise ValueError(f"{path}: block {ell} is not symmetric")
    return MatrixExpansion(A=A, m_xi=m_xi, p=p)
