"""Sampling-based references: Monte Carlo and stochastic collocation.

Both evaluate ``A(xi) = sum_l A_l psi_l(xi)`` at sample points and solve the
deterministic eigenproblems. By default mode ``s`` at every point is the
eigenpair holding the same sorted position as mode ``s`` of the mean problem;
a greedy overlap assignment to the mean eigenvectors is available as well.
Eigenvectors are sign-aligned with the mean eigenvectors.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .galerkin import EigenExpansion, _terms
from .linalg import CholeskyError, sym_eig, sym_eig_inverse
from .polychaos import GpcBasis
from .quadrature import QuadGrid

log = logging.getLogger(__name__)


@dataclass
class SampleSet:
    """Eigenpairs at sample points.

    ``values[n, s]`` and ``vectors[n, s]`` belong to ``modes[s]`` after
    alignment; rows in ``failed`` could not be solved and hold NaN.
    """

    points: np.ndarray = field(repr=False)  # (n, m_xi)
    values: np.ndarray = field(repr=False)  # (n, n_s)
    vectors: np.ndarray = field(repr=False)  # (n, n_s, M_x)
    modes: tuple = ()
    failed: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def valid(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.failed] = False
        return mask

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"xi_{j + 1}" for j in range(self.points.shape[1])]
                       + [f"lambda_{m}" for m in self.modes])
            for x, lam in zip(self.points, self.values):
                w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in lam])


def evaluate_operator(A, basis_a: GpcBasis, xi) -> np.ndarray:
    """``sum_l A_l psi_l(xi)``; ``xi`` of shape (m_xi,) or (n, m_xi)."""
    At = _terms(A)
    xi = np.asarray(xi, dtype=float)
    psi = basis_a.eval(np.atleast_2d(xi))[:, :At.shape[0]]
    out = (psi @ At.reshape(At.shape[0], -1)).reshape(-1, *At.shape[1:])
    return out[0] if xi.ndim == 1 else out


def _greedy_pick(vectors, reference) -> np.ndarray:
    O = np.abs(np.asarray(reference).T @ vectors)  # (n_s, M_x)
    pick = np.full(O.shape[0], -1)
    for _ in range(O.shape[0]):
        s, j = np.unravel_index(np.argmax(O), O.shape)
        pick[s] = j
        O[s, :] = -1.0
        O[:, j] = -1.0
    return pick


def align_samples(values, vectors, reference, positions=None) -> tuple[np.ndarray, np.ndarray]:
    """Pick and orient the eigenpairs belonging to the columns of ``reference``.

    ``values`` (M_x,) ascending and ``vectors`` (M_x, M_x) are one full
    eigendecomposition. With ``positions`` given, mode ``s`` is the eigenpair
    at sorted position ``positions[s]``; otherwise each reference column is
    matched to a distinct eigenvector by repeatedly taking the largest
    remaining ``|<v, ref>|``. Signs are chosen so that ``<v, ref> >= 0``.
    """
    ref = np.asarray(reference)
    pick = np.asarray(positions) if positions is not None else _greedy_pick(vectors, ref)
    vecs = vectors[:, pick].T.copy()
    sgn = np.sign(np.einsum("sx,xs->s", vecs, ref))
    sgn[sgn == 0] = 1.0
    return values[pick], vecs * sgn[:, None]


def reference_modes(A, modes, largest: bool = False):
    """Mean eigenvalues and eigenvectors of the 1-based ``modes`` (from the top if ``largest``)."""
    eig = sym_eig(_terms(A)[0])
    vals, vecs = eig.values, eig.vectors
    if largest:
        vals, vecs = vals[::-1], vecs[:, ::-1]
    idx = [m - 1 for m in modes]
    return vals[idx], vecs[:, idx]


def point_eig(A, largest: bool = False, n_small: int | None = None):
    """Full eigendecomposition tuned for one end of the spectrum.

    Modes at the small end come from the inverse, which keeps them accurate
    relative to their own size (the smallest ``n_small`` refined, default all);
    non-SPD matrices and the large end use ``eigh``.
    """
    if not largest:
        try:
            return sym_eig_inverse(A, n_small)
        except CholeskyError:
            pass
    return sym_eig(A, check=False)


def sorted_positions(A, reference, largest: bool = False) -> np.ndarray:
    """Sorted positions in the spectrum of ``A_0`` of the vectors in ``reference``.

    Differs from the mode numbers when ``A`` is deflated.
    """
    eig = point_eig(_terms(A)[0], largest)
    pos = _greedy_pick(eig.vectors, reference)
    return pos


def solve_at_points(A, basis_a: GpcBasis, points, modes=(1,), largest: bool = False,
                    reference=None, match: str = "sorted") -> SampleSet:
    """Aligned eigenpairs of ``A(xi)`` at every row of ``points``.

    ``match="sorted"`` keeps the sorted position each mode has in the mean
    problem; ``match="overlap"`` follows the mean eigenvectors by greedy
    overlap, which may reorder modes that cross.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    modes = tuple(modes)
    At = _terms(A)
    if reference is None:
        _, reference = reference_modes(At, modes, largest)
    if match not in ("sorted", "overlap"):
        raise ValueError(f"unknown match rule {match!r}")
    mean_pos = sorted_positions(At, reference, largest)
    positions = mean_pos if match == "sorted" else None
    # overlap matching may pick neighbours of the mean positions
    n_small = int(mean_pos.max()) + 1 + len(modes)
    mx = At.shape[1]
    values = np.full((points.shape[0], len(modes)), np.nan)
    vectors = np.full((points.shape[0], len(modes), mx), np.nan)
    failed = []
    for n, xi in enumerate(points):
        An = evaluate_operator(At, basis_a, xi)
        try:
            eig = point_eig(An, largest, n_small)
        except np.linalg.LinAlgError as err:
            log.warning("eigensolver failed at sample %d: %s", n, err)
            failed.append(n)
            continue
        values[n], vectors[n] = align_samples(eig.values, eig.vectors, reference, positions)
    return SampleSet(points=points, values=values, vectors=vectors, modes=modes, failed=failed)


def mc_run(A, basis_a: GpcBasis, n_samples: int, seed: int = 0, modes=(1,),
           largest: bool = False, reference=None, match: str = "sorted") -> SampleSet:
    """Monte Carlo: ``n_samples`` standard normal points from ``default_rng(seed)``."""
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((n_samples, basis_a.m_xi))
    return solve_at_points(A, basis_a, pts, modes, largest, reference, match)


def project_samples(samples: SampleSet, basis_sol: GpcBasis, grid: QuadGrid,
                    method: str = "sc") -> list[EigenExpansion]:
    """Discrete projection of eigenpair samples taken on ``grid``."""
    if samples.failed:
        raise np.linalg.LinAlgError(f"collocation points {samples.failed} failed to solve")
    wpsi = basis_sol.eval(grid.points) * grid.weights[:, None]  # (nq, nb)
    lam = wpsi.T @ samples.values  # (nb, n_s)
    vec = np.einsum("qk,qsx->skx", wpsi, samples.vectors)
    return [EigenExpansion(lambda_coeffs=lam[:, s], vector=vec[s], mode=m, method=method)
            for s, m in enumerate(samples.modes)]


def sc_run(A, basis_a: GpcBasis, basis_sol: GpcBasis, grid: QuadGrid, modes=(1,),
           largest: bool = False, reference=None,
           match: str = "sorted") -> tuple[list[EigenExpansion], SampleSet]:
    """Stochastic collocation on ``grid`` followed by projection onto ``basis_sol``."""
    samples = solve_at_points(A, basis_a, grid.points, modes, largest, reference, match)
    return project_samples(samples, basis_sol, grid), samples


def sample_expansion(exp: EigenExpansion, basis_sol: GpcBasis, points) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate an eigenpair expansion at ``points``: ``(lambda (n,), u (n, M_x))``."""
    psi = basis_sol.eval(np.atleast_2d(points))
    lam = psi[:, :exp.lambda_coeffs.size] @ exp.lambda_coeffs
    u = psi[:, :exp.vector.shape[0]] @ exp.vector
    return lam, u
