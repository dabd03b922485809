import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import psi_oracle, random_expansion, tensor_rule
from randeig.galerkin import (EigenExpansion, GridProjector, IterationLog, SisiConfig, apply_shift,
                              assemble_global, deflate, indicators, lambda_times_vector, normalize,
                              ortho_defect, rayleigh_quotient, rayleigh_quotient_full,
                              residual_coeffs, shift_lambda, sii_shifted_run, sisi_run, smgs,
                              stoch_matvec, subspace_iteration_max, unshift_lambda)
from randeig.linalg import sym_eig, sym_eig_inverse
from randeig.polychaos import gen_multi_indices, quad_tensor, triple_tensor
from randeig.quadrature import full_tensor, smolyak

M_XI, P, MX = 2, 2, 6
BA, BS = gen_multi_indices(M_XI, 2 * P), gen_multi_indices(M_XI, P)
C3, C4 = triple_tensor(BA, BS), quad_tensor(BA, BS)
PTS, WTS = tensor_rule(M_XI, 10)
PSI_A, PSI_S = psi_oracle(BA.indices, PTS), psi_oracle(BS.indices, PTS)


def _sample(coeffs, psi):
    return np.einsum("qk,k...->q...", psi, coeffs)


def _project(samples, psi):
    return np.einsum("q,qk,q...->k...", WTS, psi, samples)


def _random(seed):
    rng = np.random.default_rng(seed)
    return rng, random_expansion(rng, BA.size, MX), rng.standard_normal((BS.size, MX))


# -- sample-project oracles -----------------------------------------------------------

@given(seed=st.integers(0, 2 ** 32 - 1))
def test_stoch_matvec_oracle(seed):
    _, A, u = _random(seed)
    Aq, uq = _sample(A, PSI_A), _sample(u, PSI_S)
    ref = _project(np.einsum("qxy,qy->qx", Aq, uq), PSI_S)
    assert np.abs(stoch_matvec(A, C3, u) - ref).max() <= 1e-10 * np.abs(ref).max()


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_rayleigh_quotient_oracle(seed):
    rng, A, u = _random(seed)
    v = rng.standard_normal(u.shape)
    ref = _project(np.einsum("qx,qx->q", _sample(u, PSI_S), _sample(v, PSI_S)), PSI_S)
    assert np.abs(rayleigh_quotient(u, v, C3) - ref).max() <= 1e-10 * np.abs(ref).max()


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_rayleigh_quotient_full_oracle(seed):
    _, A, u = _random(seed)
    uq = _sample(u, PSI_S)
    ref = _project(np.einsum("qx,qxy,qy->q", uq, _sample(A, PSI_A), uq), PSI_A)
    assert np.abs(rayleigh_quotient_full(u, A, C4) - ref).max() <= 1e-10 * np.abs(ref).max()


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_lambda_times_vector_oracle(seed):
    rng, _, u = _random(seed)
    lam = rng.standard_normal(BS.size)
    ref = _project(_sample(lam, PSI_S)[:, None] * _sample(u, PSI_S), PSI_S)
    assert np.abs(lambda_times_vector(lam, u, C3) - ref).max() <= 1e-10 * np.abs(ref).max()


def test_rq_of_matvec_is_full_rq_truncated():
    _, A, u = _random(1)
    rq = rayleigh_quotient(u, stoch_matvec(A, C3, u), C3)
    full = rayleigh_quotient_full(u, A, C4)
    # the two agree only on average; the mean coefficient is exact for both
    assert rq[0] == pytest.approx(full[0], rel=1e-12)


def test_matvec_mean_only():
    _, A, u = _random(2)
    A = A.copy()
    A[1:] = 0
    u = u.copy()
    u[1:] = 0
    v = stoch_matvec(A, C3, u)
    assert np.allclose(v[0], A[0] @ u[0]) and np.all(v[1:] == 0)


def test_matvec_identity():
    _, _, u = _random(3)
    A = np.zeros((BA.size, MX, MX))
    A[0] = np.eye(MX)
    assert np.allclose(stoch_matvec(A, C3, u), u)


def test_matvec_dimension_mismatch():
    _, A, u = _random(4)
    with pytest.raises(ValueError):
        stoch_matvec(A, C3, u[:, :5])
    with pytest.raises(ValueError):
        stoch_matvec(A, C3, np.zeros((BS.size + 5, MX)))


# -- global matrix -------------------------------------------------------------------

def test_global_matrix_symmetric_and_consistent():
    rng, A, u = _random(5)
    G = assemble_global(A, C3, BS.size)
    assert np.abs(G - G.T).max() <= 1e-12 * np.abs(G).max()
    ref = stoch_matvec(A, C3, u).ravel()
    assert np.abs(G @ u.ravel() - ref).max() <= 1e-12 * np.abs(ref).max()


def test_global_matrix_deterministic_block_diagonal():
    _, A, _ = _random(6)
    G = assemble_global(A[:1], C3, BS.size)
    assert np.allclose(G, np.kron(np.eye(BS.size), A[0]))


# -- normalization and orthogonalization ----------------------------------------------

@pytest.fixture(scope="module")
def proj():
    return GridProjector(BS, smolyak(M_XI, 4))


def test_normalize_deterministic_vector(proj):
    v = np.zeros((BS.size, MX))
    v[0] = 3.0 * np.arange(1, MX + 1)
    u = normalize(v, proj)
    assert np.allclose(u[0], v[0] / np.linalg.norm(v[0]), atol=1e-12)
    assert np.abs(u[1:]).max() <= 1e-12


def test_normalize_zero_vector(proj):
    with pytest.raises(ZeroDivisionError, match="grid point"):
        normalize(np.zeros((BS.size, MX)), proj)


def test_smgs_pointwise_orthonormal(proj):
    rng = np.random.default_rng(7)
    V = rng.standard_normal((3, BS.size, MX))
    V[:, 0] *= 10.0  # keep the samples away from rank deficiency
    coeffs, U = smgs(V, proj, return_samples=True)
    assert coeffs.shape == V.shape
    assert ortho_defect(U) <= 1e-8


def test_smgs_deterministic_exact(proj):
    V = np.zeros((2, BS.size, MX))
    V[0, 0] = [1, 1, 0, 0, 0, 0]
    V[1, 0] = [1, 0, 1, 0, 0, 0]
    U = smgs(V, proj)
    assert np.allclose(U[0, 0], np.array([1, 1, 0, 0, 0, 0]) / np.sqrt(2), atol=1e-12)
    assert np.allclose(U[1, 0], np.array([1, -1, 2, 0, 0, 0]) / np.sqrt(6), atol=1e-12)
    assert np.abs(U[:, 1:]).max() <= 1e-12


def test_smgs_rank_deficient(proj):
    V = np.zeros((2, BS.size, MX))
    V[0, 0] = V[1, 0] = np.arange(1, MX + 1)
    with pytest.raises(np.linalg.LinAlgError, match="rank deficient"):
        smgs(V, proj)


def test_ortho_defect():
    U = np.zeros((2, 3, 4))
    U[0, :, 0] = 1
    U[1, :, 1] = 1
    assert ortho_defect(U) == 0.0
    U[1, 2, 0] = 0.5
    assert ortho_defect(U) == pytest.approx(0.5)


# -- shifts, deflation, indicators -------------------------------------------------------

def test_shift_round_trip():
    lam = np.array([5.0, 1.0, -2.0])
    assert np.array_equal(unshift_lambda(shift_lambda(lam, 3.5), 3.5), lam)
    _, A, _ = _random(8)
    S = apply_shift(A, 2.0)
    assert np.allclose(S[0], A[0] - 2 * np.eye(MX)) and np.array_equal(S[1:], A[1:])


def test_deflation_moves_eigenvalues(beam25):
    A = beam25.expansion.A
    eig = sym_eig_inverse(A[0])
    pairs = [(eig.values[i], eig.vectors[:, i]) for i in range(3)]
    # C ~ ||A_0|| would cost eps * ||A_0|| absolute on lambda_4, so pick C well below it
    D = deflate(A, pairs, c_lambda=1e10)
    # 40-digit reference for the fourth mean eigenvalue
    assert sym_eig_inverse(D[0]).values[0] == pytest.approx(130828.421978213, rel=1e-8)
    assert np.array_equal(D[1:], A[1:])


def test_deflation_default_constant():
    _, A, _ = _random(8)
    eig = sym_eig(A[0])
    pairs = [(eig.values[i], eig.vectors[:, i]) for i in range(2)]
    D0 = deflate(A, pairs)[0]
    for lam, u in pairs:
        assert np.allclose(D0 @ u, eig.values[-1] * u, atol=1e-10 * eig.values[-1])
    assert np.allclose(sym_eig(D0).values[:-2], eig.values[2:], rtol=1e-10)


def test_deflation_constant_must_exceed():
    _, A, _ = _random(9)
    eig = sym_eig(A[0])
    with pytest.raises(ValueError, match="must exceed"):
        deflate(A, [(eig.values[-1], eig.vectors[:, -1])], c_lambda=eig.values[0])
    assert np.array_equal(deflate(A, []), A)


def test_indicators_vanish_for_exact_pair():
    _, A, _ = _random(10)
    A = A[:1]
    eig = sym_eig(A[0])
    u = np.zeros((BS.size, MX))
    u[0] = eig.vectors[:, 0]
    lam = np.zeros(BS.size)
    lam[0] = eig.values[0]
    r = residual_coeffs(A, C3, u, lam)
    e0, es, ud = indicators(r, u, u)
    assert e0 <= 1e-12 * eig.values[-1] and es <= 1e-20 and ud == 0.0


# -- iterations ---------------------------------------------------------------------

def _det_expansion(seed=11):
    _, A, _ = _random(seed)
    D = np.zeros_like(A)
    D[0] = A[0]
    return D


@pytest.mark.parametrize("modes", [(1,), (1, 2), (2, 4)])
def test_sisi_zero_variance(proj, modes):
    A = _det_expansion()
    eig = sym_eig(A[0])
    exps, log = sisi_run(A, C3, proj, SisiConfig(modes=modes, max_iter=10, tol=1e-10))
    assert log.converged and log.iterations <= 2
    for e in exps:
        assert e.lambda_coeffs[0] == pytest.approx(eig.values[e.mode - 1], rel=1e-10)
        assert np.abs(e.lambda_coeffs[1:]).max() <= 1e-10
        assert np.abs(e.vector[1:]).max() <= 1e-10


def test_sisi_rq0_uses_mean_vectors(proj):
    _, A, _ = _random(12)
    (e,), log = sisi_run(A, C3, proj, SisiConfig(max_iter=0))
    v = sym_eig(A[0]).vectors[:, 0]
    assert log.iterations == 0
    assert np.allclose(e.vector[0], v) and np.all(e.vector[1:] == 0)
    assert e.lambda_coeffs[0] == pytest.approx(v @ A[0] @ v)


def test_sisi_pcg_backend_matches_direct(proj):
    _, A, _ = _random(13)
    cfg = SisiConfig(modes=(1, 2), max_iter=4, tol=0)
    direct, _ = sisi_run(A, C3, proj, cfg)
    kron, _ = sisi_run(A, C3, proj, SisiConfig(modes=(1, 2), max_iter=4, tol=0, backend="pcg"))
    for a, b in zip(direct, kron):
        assert np.allclose(a.lambda_coeffs, b.lambda_coeffs, rtol=1e-8, atol=1e-8)


def test_sisi_unknown_backend(proj):
    _, A, _ = _random(14)
    with pytest.raises(ValueError, match="backend"):
        sisi_run(A, C3, proj, SisiConfig(backend="gpu"))


def test_sisi_rejects_bad_mode(proj):
    with pytest.raises(ValueError, match="outside"):
        sisi_run(_det_expansion(), C3, proj, SisiConfig(modes=(MX + 1,)))


def test_sisi_deflated_variant_matches_plain_for_separated_modes(proj):
    _, A, _ = _random(15)
    plain, _ = sisi_run(A, C3, proj, SisiConfig(modes=(3,), max_iter=30, tol=1e-12))
    defl, _ = sisi_run(A, C3, proj, SisiConfig(modes=(3,), max_iter=30, tol=1e-12,
                                               variant="deflated", deflate=(1, 2)))
    # lambda_0 of the iterated operator differs only through the rank-one mean terms
    assert defl[0].mode == 3
    assert np.isfinite(defl[0].lambda_coeffs).all()


def test_subspace_max_zero_variance(proj):
    A = _det_expansion()
    eig = sym_eig(A[0])
    (e,), log = subspace_iteration_max(A, C3, proj, SisiConfig(modes=(1,), max_iter=5, tol=1e-10))
    assert e.lambda_coeffs[0] == pytest.approx(eig.values[-1], rel=1e-10)


def test_shifted_zero_variance_finds_nearest(proj):
    A = _det_expansion()
    vals = sym_eig(A[0]).values
    rho = vals[2] + 0.1 * (vals[3] - vals[2])
    e, log = sii_shifted_run(A, C3, proj, rho, SisiConfig(modes=(0,), max_iter=20, tol=1e-10))
    assert e.mode == 3 and log.converged and not log.diverged
    assert e.lambda_coeffs[0] == pytest.approx(vals[2], rel=1e-10)


def test_shifted_needs_single_mode(proj):
    with pytest.raises(ValueError):
        sii_shifted_run(_det_expansion(), C3, proj, 1.0, SisiConfig(modes=(1, 2)))


def test_divergence_flag_fires(beam25):
    # eps_0 grows for eight consecutive steps at this shift before oscillating
    e, log = sii_shifted_run(beam25.expansion, beam25.tensor, beam25.projector, 3.9e5,
                             SisiConfig(modes=(0,), max_iter=60, tol=1e-10, divergence_window=3))
    assert log.diverged and not log.converged
    eps0 = log.array("eps0")[:, 0]
    assert np.all(np.diff(eps0[-4:]) > 0)


# -- records -----------------------------------------------------------------------

def test_iteration_log_csv(tmp_path):
    log = IterationLog()
    log.append([1.0, 2.0], [3.0, 4.0], [5.0, 6.0])
    log.append([0.5, 0.25], [0.1, 0.2], [1e-3, 1e-4])
    log.to_csv(tmp_path / "it.csv", modes=[4, 5])
    lines = (tmp_path / "it.csv").read_text().splitlines()
    assert lines[0] == "iteration,mode,eps0,eps_sigma2,u_delta"
    assert lines[1] == "1,4,1.0,3.0,5.0"
    assert lines[4] == "2,5,0.25,0.2,0.0001"
    assert log.array("eps0").shape == (2, 2)


def test_expansion_csv(tmp_path):
    e = EigenExpansion(lambda_coeffs=np.array([2.0, 0.5]), vector=np.eye(2), mode=1)
    e.to_csv(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "k,lambda_k,u_k[0],u_k[1]"
    assert lines[2] == "1,0.5,0.0,1.0"


def test_projector_round_trip():
    proj = GridProjector(BS, full_tensor(M_XI, P + 1))
    u = np.random.default_rng(16).standard_normal((BS.size, MX))
    assert np.allclose(proj.project(proj.eval(u)), u, atol=1e-12)
    with pytest.raises(ValueError):
        GridProjector(BS, smolyak(3, 2))
