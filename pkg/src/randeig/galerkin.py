"""Stochastic Galerkin operators and stochastic inverse subspace iteration.

A stochastic vector is stored as an array of shape ``(M_xi+1, M_x)`` holding
its chaos coefficients ``u_0 .. u_{M_xi}``; sets of them are stacked on a
leading axis. Expansion terms are given either as a ``MatrixExpansion`` or as
a plain ``(M_A+1, M_x, M_x)`` array.

Mode numbers in ``SisiConfig`` are 1-based and count from the smallest mean
eigenvalue (from the largest for ``subspace_iteration_max``).
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .linalg import Factorization, sym_eig
from .polychaos import GpcBasis, QuadTensor, TripleTensor
from .quadrature import QuadGrid

log = logging.getLogger(__name__)

ORTHO_TOL = 1e-8


def _terms(A) -> np.ndarray:
    return A.A if hasattr(A, "A") else np.asarray(A, dtype=float)


def _ctensor(c, n_terms: int, nb: int) -> np.ndarray:
    dense = c.dense if hasattr(c, "dense") else np.asarray(c)
    if dense.shape[0] < n_terms or dense.shape[1] < nb or dense.shape[2] < nb:
        raise ValueError(f"tensor of shape {dense.shape} too small for {n_terms} terms "
                         f"and {nb} solution blocks")
    return dense[:n_terms, :nb, :nb]


# -- data types ----------------------------------------------------------------

@dataclass
class EigenExpansion:
    """Chaos coefficients of one eigenvalue and its eigenvector."""

    lambda_coeffs: np.ndarray
    vector: np.ndarray = field(repr=False)  # (M_xi+1, M_x)
    mode: int = 1
    method: str = ""

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "lambda_k"] + [f"u_k[{i}]" for i in range(self.vector.shape[1])])
            for k, lam in enumerate(self.lambda_coeffs):
                row = self.vector[k] if k < self.vector.shape[0] else np.full(self.vector.shape[1], np.nan)
                w.writerow([k, repr(float(lam))] + [repr(float(x)) for x in row])


@dataclass
class IterationLog:
    """Per-iteration indicators, one inner list entry per mode."""

    eps0: list = field(default_factory=list)
    eps_sigma2: list = field(default_factory=list)
    u_delta: list = field(default_factory=list)
    converged: bool = False
    diverged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.eps0)

    def append(self, eps0, eps_sigma2, u_delta) -> None:
        self.eps0.append(list(eps0))
        self.eps_sigma2.append(list(eps_sigma2))
        self.u_delta.append(list(u_delta))

    def array(self, name: str) -> np.ndarray:
        return np.array(getattr(self, name), dtype=float).reshape(self.iterations, -1)

    def to_csv(self, path, modes=None) -> None:
        e0, es, ud = self.array("eps0"), self.array("eps_sigma2"), self.array("u_delta")
        modes = modes if modes is not None else list(range(1, e0.shape[1] + 1))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "mode", "eps0", "eps_sigma2", "u_delta"])
            for it in range(self.iterations):
                for s, mode in enumerate(modes):
                    w.writerow([it + 1, mode] + [repr(float(x[it, s])) for x in (e0, es, ud)])


@dataclass
class SisiConfig:
    """Settings for the stochastic iterations.

    ``variant`` is ``"plain"``, ``"shifted"`` or ``"deflated"``. ``deflate`` lists
    1-based mean modes to deflate and ``c_lambda`` the constant they are moved
    to (default: largest eigenvalue of ``A_0``). ``tol`` applies to ``u_delta``
    relative to the norm of the stacked coefficients; 0 runs exactly
    ``max_iter`` steps.
    """

    modes: tuple = (1,)
    n_e: int | None = None
    max_iter: int = 20
    tol: float = 1e-8
    variant: str = "plain"
    rho: float = 0.0
    deflate: tuple = ()
    c_lambda: float | None = None
    backend: str = "direct"
    divergence_window: int = 10

    @property
    def n_s(self) -> int:
        return len(self.modes)


# -- projections on a quadrature grid -----------------------------------------------

class GridProjector:
    """Sample chaos expansions on a grid and project samples back.

    ``project`` is the discrete projection ``x_k = sum_q x(xi_q) psi_k(xi_q) w_q``.
    """

    def __init__(self, basis: GpcBasis, grid: QuadGrid):
        if basis.m_xi != grid.m_xi:
            raise ValueError(f"basis m_xi={basis.m_xi} but grid has {grid.m_xi} coordinates")
        self.basis = basis
        self.grid = grid
        self.psi = basis.eval(grid.points)  # (nq, nb)
        self.wpsi = self.psi * grid.weights[:, None]

    def eval(self, coeffs) -> np.ndarray:
        """Coefficients ``(..., nb, M_x)`` to samples ``(..., nq, M_x)``."""
        return np.einsum("qk,...kx->...qx", self.psi, coeffs)

    def project(self, samples) -> np.ndarray:
        return np.einsum("qk,...qx->...kx", self.wpsi, samples)


# -- operator algebra -------------------------------------------------------------

def stoch_matvec(A, c: TripleTensor, u) -> np.ndarray:
    """``v_k = sum_j sum_l c[l,j,k] A_l u_j`` for one or several stochastic vectors."""
    At = _terms(A)
    u = np.asarray(u, dtype=np.result_type(At.dtype, np.asarray(u).dtype, float))
    nb = u.shape[-2]
    if u.shape[-1] != At.shape[1]:
        raise ValueError(f"vector length {u.shape[-1]} does not match matrix size {At.shape[1]}")
    cc = _ctensor(c, At.shape[0], nb)
    W = np.einsum("lxy,...jy->...ljx", At, u, optimize=True)
    return np.einsum("ljk,...ljx->...kx", cc, W, optimize=True)


def assemble_global(A, c: TripleTensor, nb: int | None = None) -> np.ndarray:
    """Dense Galerkin matrix with block ``(k, j) = sum_l c[l,j,k] A_l``."""
    At = _terms(A)
    if nb is None:
        nb = c.shape[1]
    mx = At.shape[1]
    cc = _ctensor(c, At.shape[0], nb)
    G = np.zeros((nb * mx, nb * mx))
    for ell, j, k in np.argwhere(cc != 0.0):
        G[k * mx:(k + 1) * mx, j * mx:(j + 1) * mx] += cc[ell, j, k] * At[ell]
    return G


def rayleigh_quotient(u, v, c: TripleTensor) -> np.ndarray:
    """``lambda_k = sum_{i,j} c[i,j,k] <u_i, v_j>`` for ``k <= M_xi``."""
    u = np.asarray(u)
    nb = u.shape[-2]
    cc = _ctensor(c, nb, nb)
    gram = np.einsum("...ix,...jx->...ij", u, v)
    return np.einsum("ijk,...ij->...k", cc, gram)


def rayleigh_quotient_full(u, A, c4: QuadTensor) -> np.ndarray:
    """``lambda_k = sum c[l,i,j,k] u_i^T A_l u_j`` for ``k <= M_A``."""
    At = _terms(A)
    u = np.asarray(u)
    nb = u.shape[0]
    dense = c4.dense if hasattr(c4, "dense") else np.asarray(c4)
    cc = dense[:At.shape[0], :nb, :nb, :]
    Q = np.einsum("ix,lxy,jy->lij", u, At, u, optimize=True)
    return np.einsum("lijk,lij->k", cc, Q, optimize=True)


def lambda_times_vector(lam, u, c: TripleTensor) -> np.ndarray:
    """Galerkin product ``w_k = sum_{i,j} c[i,j,k] lambda_i u_j``."""
    u = np.asarray(u)
    nb = u.shape[-2]
    nl = np.shape(lam)[-1]
    cc = _ctensor(c, nl, nb)
    return np.einsum("ijk,...i,...jx->...kx", cc, lam, u, optimize=True)


def residual_coeffs(A, c: TripleTensor, u, lam) -> np.ndarray:
    """Coefficients of ``A u - lambda u``, i.e. the Galerkin system's left minus right side."""
    return stoch_matvec(A, c, u) - lambda_times_vector(lam, u, c)


def indicators(r, u, u_prev) -> tuple[float, float, float]:
    """``(eps_0, eps_sigma2, u_delta)`` for one mode.

    ``eps_sigma2`` is the 2-norm of the entrywise sum of squares of the
    non-mean residual coefficients.
    """
    r = np.asarray(r)
    eps0 = float(np.linalg.norm(r[0]))
    eps_s2 = float(np.linalg.norm((r[1:] ** 2).sum(axis=0)))
    u_delta = float(np.linalg.norm(np.asarray(u) - np.asarray(u_prev)))
    return eps0, eps_s2, u_delta


# -- normalization and orthogonalization -------------------------------------------

def normalize(v, proj: GridProjector) -> np.ndarray:
    samples = proj.eval(v)
    norms = np.linalg.norm(samples, axis=-1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise ZeroDivisionError(f"zero-norm sample at grid point {bad[0]}: {proj.grid.points[bad[0]]}")
    return proj.project(samples / norms[:, None])


def _mgs_samples(S: np.ndarray) -> np.ndarray:
    # S: (n_s, nq, M_x); pointwise modified Gram-Schmidt
    U = S.copy()
    ref = np.linalg.norm(S, axis=-1)
    for s in range(U.shape[0]):
        for t in range(s):
            coef = np.einsum("qx,qx->q", U[s], U[t]) / np.einsum("qx,qx->q", U[t], U[t])
            U[s] -= coef[:, None] * U[t]
        nrm = np.linalg.norm(U[s], axis=-1)
        bad = np.flatnonzero(nrm <= 1e-13 * np.maximum(ref[s], 1e-300))
        if bad.size:
            raise np.linalg.LinAlgError(f"vector {s} is rank deficient at grid point {bad[0]}")
        U[s] /= nrm[:, None]
    return U


def ortho_defect(U: np.ndarray) -> float:
    """Largest ``|<u^s, u^t> - delta_st|`` over grid points, for samples ``(n_s, nq, M_x)``."""
    G = np.einsum("sqx,tqx->qst", U, U)
    return float(np.abs(G - np.eye(U.shape[0])[None]).max())


def smgs(vs, proj: GridProjector, return_samples: bool = False):
    """Stochastic modified Gram-Schmidt.

    Every vector is sampled on the grid, the samples are orthonormalized point
    by point, and the results projected back onto the chaos basis. A second
    pass runs when the pointwise orthonormality defect exceeds ``ORTHO_TOL``.
    """
    vs = np.asarray(vs, dtype=float)
    S = proj.eval(vs)
    U = _mgs_samples(S)
    if ortho_defect(U) > ORTHO_TOL:
        U = _mgs_samples(U)
        defect = ortho_defect(U)
        if defect > ORTHO_TOL:
            raise np.linalg.LinAlgError(f"orthonormality defect {defect:.2e} after second pass")
    coeffs = proj.project(U)
    return (coeffs, U) if return_samples else coeffs


# -- shifts and deflation --------------------------------------------------------

def apply_shift(A, rho: float) -> np.ndarray:
    At = _terms(A).copy()
    At[0] = At[0] - rho * np.eye(At.shape[1])
    return At


def unshift_lambda(lam, rho: float) -> np.ndarray:
    """Undo a shift on eigenvalue coefficients: ``lambda_0 + rho``."""
    out = np.array(lam, dtype=float, copy=True)
    out[..., 0] += rho
    return out


def shift_lambda(lam, rho: float) -> np.ndarray:
    out = np.array(lam, dtype=float, copy=True)
    out[..., 0] -= rho
    return out


def deflate(A, mean_pairs, c_lambda: float | None = None) -> np.ndarray:
    """``A_0 + sum_d (C - lambda_d) u_d u_d^T``; higher terms unchanged.

    ``mean_pairs`` is a sequence of ``(lambda_d, u_d)`` mean eigenpairs.
    """
    At = _terms(A).copy()
    pairs = list(mean_pairs)
    if not pairs:
        return At
    if c_lambda is None:
        c_lambda = float(sym_eig(At[0]).values[-1])
    for lam_d, u_d in pairs:
        if c_lambda <= lam_d:
            raise ValueError(f"C_lambda={c_lambda:.6g} must exceed deflated eigenvalue {lam_d:.6g}")
        u_d = np.asarray(u_d)
        At[0] += (c_lambda - lam_d) * np.outer(u_d, u_d)
    At[0] = 0.5 * (At[0] + At[0].T)
    return At


# -- iterations ------------------------------------------------------------------

def _mean_modes(A0: np.ndarray, modes, largest: bool = False):
    eig = sym_eig(A0)
    vals, vecs = eig.values, eig.vectors
    if largest:
        vals, vecs = vals[::-1], vecs[:, ::-1]
    idx = [m - 1 for m in modes]
    if min(idx) < 0 or max(idx) >= vals.size:
        raise ValueError(f"mode numbers {modes} outside 1..{vals.size}")
    return vals, vecs, idx


def _initial(vecs, idx, nb: int) -> np.ndarray:
    U = np.zeros((len(idx), nb, vecs.shape[0]))
    for s, i in enumerate(idx):
        U[s, 0] = vecs[:, i]
    return U


def _orthonormalize(V, proj):
    if V.shape[0] == 1:
        return normalize(V[0], proj)[None]
    return smgs(V, proj)


def _rq_extended(At, c, U) -> np.ndarray:
    """Rayleigh quotient coefficients with ``A u`` accumulated in long double.

    In float64 the product carries an absolute error of order eps * ||A_0||,
    which for stiff models (cond(A_0) ~ 1e12) dominates the smallest
    eigenvalues. Where long double is plain double this is the float64 value.
    """
    ld = np.longdouble
    U = np.asarray(U).astype(ld)
    V = stoch_matvec(np.asarray(At).astype(ld), c, U)
    return rayleigh_quotient(U, V, c).astype(float)


def _finish(At, c, U, modes, method) -> list[EigenExpansion]:
    lam = _rq_extended(At, c, U)
    return [EigenExpansion(lambda_coeffs=lam[s], vector=U[s].copy(), mode=m, method=method)
            for s, m in enumerate(modes)]


def _log_step(logbook, At, c, U, U_prev):
    V = stoch_matvec(At, c, U)
    lam = rayleigh_quotient(U, V, c)
    R = V - lambda_times_vector(lam, U, c)
    rows = [indicators(R[s], U[s], U_prev[s]) for s in range(U.shape[0])]
    logbook.append(*zip(*rows))
    return rows


def _converged(U, U_prev, tol) -> bool:
    if tol <= 0:
        return False
    return all(np.linalg.norm(U[s] - U_prev[s]) <= tol * np.linalg.norm(U[s])
               for s in range(U.shape[0]))


def iteration_operator(A, config: SisiConfig) -> np.ndarray:
    """Expansion terms the iteration works with: deflated when requested."""
    At = _terms(A)
    if config.variant == "deflated" and config.deflate:
        vals, vecs, idx = _mean_modes(At[0], config.deflate)
        return deflate(At, [(vals[i], vecs[:, i]) for i in idx], config.c_lambda)
    return At


def _solver(G, At, c, nb, backend):
    if backend == "direct":
        fac = Factorization(G)
        return lambda B: fac.solve(B)
    if backend == "pcg":
        from .linalg import pcg_kron
        mean_fac = Factorization(At[0])
        mx = At.shape[1]

        def solve(B):
            out = np.empty_like(B)
            for col in range(B.shape[1]):
                res = pcg_kron(At, c, B[:, col].reshape(nb, mx), tol=1e-12, maxit=1000,
                               mean_factor=mean_fac)
                if not res.converged:
                    log.warning("pcg stopped at residual %.2e", res.residual)
                out[:, col] = res.x.ravel()
            return out
        return solve
    raise ValueError(f"unknown backend {backend!r}")


def sisi_run(A, c: TripleTensor, proj: GridProjector, config: SisiConfig):
    """Stochastic inverse subspace iteration.

    Returns ``(expansions, log)``. ``max_iter=0`` gives the zero-step estimate
    from the mean eigenvectors.
    """
    At = iteration_operator(A, config)
    nb = proj.basis.size
    mx = At.shape[1]
    _, vecs, idx = _mean_modes(_terms(A)[0], config.modes)
    U = _initial(vecs, idx, nb)
    logbook = IterationLog()
    if config.max_iter > 0:
        solve = _solver(assemble_global(At, c, nb), At, c, nb, config.backend)
    for it in range(config.max_iter):
        rhs = U.reshape(U.shape[0], nb * mx).T
        V = solve(rhs).T.reshape(U.shape)
        U_prev, U = U, _orthonormalize(V, proj)
        _log_step(logbook, At, c, U, U_prev)
        if _converged(U, U_prev, config.tol):
            logbook.converged = True
            break
    return _finish(At, c, U, config.modes, "sisi"), logbook


def subspace_iteration_max(A, c: TripleTensor, proj: GridProjector, config: SisiConfig):
    """Stochastic subspace iteration for the largest eigenvalues (matvec instead of solve)."""
    At = _terms(A)
    nb = proj.basis.size
    _, vecs, idx = _mean_modes(At[0], config.modes, largest=True)
    U = _initial(vecs, idx, nb)
    logbook = IterationLog()
    for it in range(config.max_iter):
        V = stoch_matvec(At, c, U)
        U_prev, U = U, _orthonormalize(V, proj)
        _log_step(logbook, At, c, U, U_prev)
        if _converged(U, U_prev, config.tol):
            logbook.converged = True
            break
    return _finish(At, c, U, config.modes, "subspace-max"), logbook


def sii_shifted_run(A, c: TripleTensor, proj: GridProjector, rho: float, config: SisiConfig):
    """Single-mode stochastic inverse iteration with a fixed shift ``rho``.

    The left side uses ``A_0 - rho I`` throughout; the right side is the
    Galerkin product of the current eigenvalue estimate (shifted by ``rho``)
    with the current vector. The run is flagged as diverged once ``eps_0``
    has grown ``config.divergence_window`` times in a row.
    """
    At = _terms(A)
    nb = proj.basis.size
    mx = At.shape[1]
    if config.n_s != 1:
        raise ValueError("shifted iteration handles a single mode")
    A0 = At[0]
    if config.modes and config.modes != (0,):
        _, vecs, idx = _mean_modes(A0, config.modes)
    else:
        eig = sym_eig(A0)
        vecs, idx = eig.vectors, [int(np.argmin(np.abs(eig.values - rho)))]
    U = _initial(vecs, idx, nb)
    mode = idx[0] + 1
    shifted = apply_shift(At, rho)
    solve = _solver(assemble_global(shifted, c, nb), shifted, c, nb, config.backend)
    logbook = IterationLog()
    growth = 0
    for it in range(config.max_iter):
        lam = rayleigh_quotient(U[0], stoch_matvec(At, c, U[0]), c)
        rhs = lambda_times_vector(shift_lambda(lam, rho), U[0], c)
        V = solve(rhs.reshape(nb * mx, 1)).T.reshape(1, nb, mx)
        if not np.all(np.isfinite(V)):
            logbook.diverged = True
            break
        U_prev, U = U, normalize(V[0], proj)[None]
        _log_step(logbook, At, c, U, U_prev)
        if logbook.iterations > 1:
            growth = growth + 1 if logbook.eps0[-1][0] > logbook.eps0[-2][0] else 0
            if growth >= config.divergence_window:
                logbook.diverged = True
                break
        if _converged(U, U_prev, config.tol):
            logbook.converged = True
            break
    return _finish(At, c, U, (mode,), f"sii-shifted rho={rho:g}")[0], logbook
