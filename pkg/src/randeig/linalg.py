"""Dense kernels: symmetric eigensolver, Cholesky, cached factorizations, PCG."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

SYM_RTOL = 1e-10


class CholeskyError(np.linalg.LinAlgError):
    pass


class SingularMatrixError(np.linalg.LinAlgError):
    pass


class BreakdownError(RuntimeError):
    pass


@dataclass(frozen=True)
class SymEigResult:
    values: np.ndarray  # ascending
    vectors: np.ndarray = field(repr=False)  # columns


def _check_symmetric(A: np.ndarray) -> None:
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    scale = np.abs(A).max()
    if scale and np.abs(A - A.T).max() > SYM_RTOL * scale:
        raise ValueError("matrix is not symmetric")


def fix_signs(V: np.ndarray) -> np.ndarray:
    """Flip columns so the largest-magnitude entry of each is positive."""
    idx = np.argmax(np.abs(V), axis=0)
    s = np.sign(V[idx, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


def sym_eig(A, check: bool = True) -> SymEigResult:
    A = np.asarray(A, dtype=float)
    if check:
        _check_symmetric(A)
    vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
    return SymEigResult(values=vals, vectors=fix_signs(vecs))


def sym_eig_inverse(A, n_refine: int | None = None) -> SymEigResult:
    """Eigenpairs of an SPD matrix computed from its Cholesky-based inverse.

    Small eigenvalues of badly conditioned matrices come out with relative
    accuracy (``eigh`` on ``A`` only resolves them to ``eps * ||A||``). The
    eigenvectors of the inverse are accurate, its eigenvalues less so
    (about 2e-8 relative at cond(A) ~ 4e12), so values are returned as
    Rayleigh quotients of the vectors accumulated in long double.
    ``n_refine`` limits that to the smallest ``n_refine`` pairs (default all);
    the rest keep the inverse's eigenvalues.
    Raises ``CholeskyError`` when ``A`` is not positive definite.
    """
    A = np.asarray(A, dtype=float)
    try:
        fac = sla.cho_factor(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise CholeskyError(str(exc)) from exc
    inv = sla.cho_solve(fac, np.eye(A.shape[0]))
    mu, vecs = np.linalg.eigh(0.5 * (inv + inv.T))
    vals, vecs = 1.0 / mu[::-1], vecs[:, ::-1]
    k = vals.size if n_refine is None else min(max(int(n_refine), 0), vals.size)
    if k:
        V = vecs[:, :k].astype(np.longdouble)
        rq = ((A.astype(np.longdouble) @ V) * V).sum(axis=0) / (V * V).sum(axis=0)
        vals[:k] = rq.astype(float)
    order = np.argsort(vals, kind="stable")
    return SymEigResult(values=vals[order], vectors=fix_signs(vecs[:, order]))


def spd_eigvals(A) -> np.ndarray:
    """All eigenvalues of a symmetric matrix, each from the solver that resolves it.

    ``eigh`` values lie within about ``n * eps * lambda_max`` of the truth. An
    inverse-route value inside that band is kept (it is relatively accurate
    at the small end and for graded matrices); one outside it can only be the
    inaccurate one, typically at the large end. Non-SPD matrices get plain
    ``eigh`` values.
    """
    vals = sym_eig(A).values
    try:
        inv = sym_eig_inverse(A).values
    except CholeskyError:
        return vals
    band = 8 * vals.size * np.finfo(float).eps * np.abs(vals).max()
    return np.where(np.abs(inv - vals) <= band, inv, vals)


def cholesky(M) -> np.ndarray:
    """Lower-triangular ``L`` with ``L L^T = M``."""
    M = np.asarray(M, dtype=float)
    _check_symmetric(M)
    L, info = lapack.dpotrf(M, lower=1, clean=1)
    if info > 0:
        raise CholeskyError(f"non-positive pivot at row {info - 1}")
    if info < 0:
        raise ValueError(f"illegal argument {-info} to dpotrf")
    return L


class Factorization:
    """Factor a symmetric matrix once and solve repeatedly.

    Cholesky is tried first; indefinite matrices (shifted systems) fall back to
    LU with partial pivoting.
    """

    def __init__(self, A):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {A.shape}")
        self.n = A.shape[0]
        self._A = A
        try:
            self._cho = sla.cho_factor(A, lower=True, check_finite=True)
            self.kind = "cholesky"
        except np.linalg.LinAlgError:
            self._cho = None
            with warnings.catch_warnings():
                # exact zero pivots are reported below as SingularMatrixError
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                lu, piv = sla.lu_factor(A, check_finite=True)
            d = np.abs(np.diag(lu))
            if d.min() <= np.finfo(float).eps * d.max() * self.n:
                raise SingularMatrixError("matrix is singular to working precision")
            self._lu = (lu, piv)
            self.kind = "lu"

    def solve(self, B) -> np.ndarray:
        B = np.asarray(B, dtype=float)
        if self._cho is not None:
            return sla.cho_solve(self._cho, B)
        return sla.lu_solve(self._lu, B)


def factor_solve(A, B) -> np.ndarray:
    return Factorization(A).solve(B)


@dataclass
class PcgResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool


def pcg(apply_A: Callable[[np.ndarray], np.ndarray], b, precond: Callable | None = None,
        tol: float = 1e-10, maxit: int = 500, x0=None) -> PcgResult:
    """Preconditioned conjugate gradients for a matrix-free SPD operator.

    Stops when ``||r|| <= tol * ||b||``. Non-positive curvature ``p^T A p``
    raises ``BreakdownError``.
    """
    b = np.asarray(b, dtype=float)
    precond = precond or (lambda r: r)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return PcgResult(np.zeros_like(b), 0, 0.0, True)
    r = b - apply_A(x)
    z = precond(r)
    p = z.copy()
    rz = float(r.ravel() @ z.ravel())
    res = np.linalg.norm(r) / bnorm
    it = 0
    while res > tol and it < maxit:
        Ap = apply_A(p)
        curv = float(p.ravel() @ Ap.ravel())
        if curv <= 0.0:
            raise BreakdownError(f"non-positive curvature {curv:.3e} at iteration {it}")
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        it += 1
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            break
        z = precond(r)
        rz_new = float(r.ravel() @ z.ravel())
        p = z + (rz_new / rz) * p
        rz = rz_new
    return PcgResult(x, it, res, res <= tol)


def pcg_kron(A_terms, c_tensor, b, tol: float = 1e-10, maxit: int = 500,
             mean_factor: Factorization | None = None) -> PcgResult:
    """Solve the stochastic Galerkin system without assembling it.

    The operator is ``v_k = sum_{l,j} c[l,j,k] A_l u_j`` acting on a block
    vector of shape ``(n_blocks, M_x)``; the preconditioner applies the mean
    block ``A_0^{-1}`` to every block.
    """
    A_terms = np.asarray(A_terms)
    c = c_tensor.dense if hasattr(c_tensor, "dense") else np.asarray(c_tensor)
    nb = c.shape[1]
    c = c[: A_terms.shape[0], :nb, :nb]
    fac = mean_factor or Factorization(A_terms[0])
    b = np.asarray(b, dtype=float)

    def apply(u):
        W = np.einsum("lxy,jy->ljx", A_terms, u, optimize=True)
        return np.einsum("ljk,ljx->kx", c, W, optimize=True)

    def prec(r):
        return fac.solve(r.T).T

    return pcg(apply, b, prec, tol=tol, maxit=maxit)
