import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st

from randeig.linalg import CholeskyError, sym_eig_inverse
from randeig.models import (BeamParams, GeneralizedProblem, MatrixExpansion, PlateParams,
                            load_expansion, mindlin_assemble, save_expansion, timoshenko_assemble,
                            to_standard)

# Euler-Bernoulli cantilever: lambda_n = (beta_n L)^4 EI / (rho A L^4)
EB_BETA_L = (1.8751040687, 4.6940911330, 7.8547574382)


def _beam_eigs(params=None):
    gp = timoshenko_assemble(params or BeamParams())
    return sym_eig_inverse(to_standard(gp).A[0]).values


def test_beam_dof_count():
    gp = timoshenko_assemble(BeamParams())
    assert gp.size == 40
    assert gp.K.shape == (1, 40, 40)
    assert (0, "w") not in gp.dof_labels and (0, "theta") not in gp.dof_labels


def test_beam_matrices_symmetric_spd():
    gp = timoshenko_assemble(BeamParams())
    assert np.allclose(gp.K[0], gp.K[0].T) and np.allclose(gp.M, gp.M.T)
    assert np.linalg.eigvalsh(gp.K[0]).min() > 0
    assert np.linalg.eigvalsh(gp.M).min() > 0


def _euler_bernoulli(p):
    I = p.thickness ** 3 / 12
    scale = p.E0 * I / (p.rho * p.thickness * p.length ** 4)
    return np.array([b ** 4 for b in EB_BETA_L]) * scale


def test_beam_thin_limit_matches_euler_bernoulli():
    p = BeamParams()
    assert _beam_eigs(p)[0] == pytest.approx(_euler_bernoulli(p)[0], rel=1e-3)
    fine = BeamParams(n_elements=200)
    assert np.allclose(_beam_eigs(fine)[:3], _euler_bernoulli(fine), rtol=1e-3)


def test_beam_mesh_convergence():
    err = [abs(_beam_eigs(BeamParams(n_elements=n))[2] / _euler_bernoulli(BeamParams())[2] - 1)
           for n in (20, 40, 80)]
    assert err[0] > err[1] > err[2]
    assert err[1] / err[2] == pytest.approx(4.0, rel=0.1)  # second-order elements


def test_beam_mean_eigenvalue_frozen():
    # value of the mean problem, also reported as the RQ(0) estimate
    assert _beam_eigs()[0] == pytest.approx(103.0823, rel=1e-6)


def test_beam_smallest_eigenvalue_of_float_matrix():
    # 40-digit eigenvalue (mpmath eigsy) of this float64 standard-form matrix
    assert _beam_eigs()[0] == pytest.approx(103.0822712385258116, rel=1e-11)


def test_beam_norm_of_mean_operator():
    A0 = to_standard(timoshenko_assemble(BeamParams())).A[0]
    assert np.linalg.norm(A0, 2) == pytest.approx(3.8442e14, rel=5e-2)


def test_beam_zero_variance_terms_vanish():
    coeffs = np.zeros((4, 20))
    coeffs[0] = 1e8
    gp = timoshenko_assemble(BeamParams(), coeffs)
    assert np.all(gp.K[1:] == 0.0)
    assert np.allclose(gp.K[0], timoshenko_assemble(BeamParams()).K[0])


def test_beam_field_shape_checked():
    with pytest.raises(ValueError):
        timoshenko_assemble(BeamParams(), np.ones((2, 19)))
    with pytest.raises(ValueError):
        timoshenko_assemble(BeamParams(n_elements=1))
    with pytest.raises(ValueError):
        timoshenko_assemble(BeamParams(length=-1.0))


@given(c=st.floats(0.1, 100.0))
def test_beam_modulus_scaling(c):
    base = _beam_eigs()[:3]
    scaled = _beam_eigs(BeamParams(E0=1e8 * c))[:3]
    # scaling E0 rescales the float matrix with rounding, cond(A_0) ~ 4e12
    assert np.allclose(scaled, c * base, rtol=1e-7)


def test_linearity_in_modulus():
    rng = np.random.default_rng(0)
    E = rng.random((3, 20)) * 1e8
    gp = timoshenko_assemble(BeamParams(), E)
    total = timoshenko_assemble(BeamParams(), E.sum(0)).K[0]
    assert np.allclose(gp.K.sum(0), total, rtol=1e-12, atol=1e-12 * np.abs(total).max())


@pytest.fixture(scope="module")
def plate_mean():
    gp = mindlin_assemble(PlateParams())
    return gp, to_standard(gp)


def test_plate_dof_count(plate_mean):
    gp, _ = plate_mean
    assert gp.size == 243
    assert len(gp.fixed_dofs) == 3 * 40


def test_plate_mean_eigenvalues(plate_mean):
    _, exp = plate_mean
    vals = sym_eig_inverse(exp.A[0]).values
    assert vals[0] == pytest.approx(1.1044e4, rel=1e-2)
    assert abs(vals[1] - vals[2]) <= 1e-6 * vals[1]
    assert vals[1] == pytest.approx(4.2720e4, rel=1e-2)


def test_plate_conditioning_frozen(plate_mean):
    vals = np.linalg.eigvalsh(plate_mean[1].A[0])
    assert vals[-1] == pytest.approx(1.8153e7, rel=1e-4)
    assert vals[-1] / vals[0] == pytest.approx(1643.63, rel=1e-4)


def test_standard_form_matches_generalized_eigs(plate_mean):
    gp, exp = plate_mean
    ref = sla.eigh(gp.K[0], gp.M, eigvals_only=True)
    assert np.allclose(np.linalg.eigvalsh(exp.A[0]), ref, rtol=1e-10)


def test_beam_standard_form_small_end():
    gp = timoshenko_assemble(BeamParams())
    A0 = to_standard(gp).A[0]
    vals = sym_eig_inverse(A0).values[:5]
    # forming L^-1 K L^-T in float64 moves lambda_1 by 1.7e-8 from the 40-digit
    # generalized eigenvalue of the float K and M; higher modes are far less sensitive
    assert vals[0] == pytest.approx(103.0822729484282877, rel=3e-8)
    mu = sla.eigh(gp.M, gp.K[0], eigvals_only=True)[::-1][:5]
    assert np.allclose(vals[1:], 1 / mu[1:], rtol=1e-9)


def test_eigenvector_back_transform(plate_mean):
    gp, exp = plate_mean
    vals, W = np.linalg.eigh(exp.A[0])
    U = exp.to_physical(W[:, :3].T).T
    assert np.allclose(gp.K[0] @ U, gp.M @ U * vals[:3], atol=1e-8 * np.abs(gp.K[0]).max())


def test_identity_mass():
    rng = np.random.default_rng(2)
    K = rng.standard_normal((2, 5, 5))
    K = K + K.transpose(0, 2, 1)
    gp = GeneralizedProblem(K=K, M=np.eye(5), free_dofs=np.arange(5), dof_labels=[],
                            fixed_dofs=np.array([]), element_centers=np.zeros((1, 1)))
    assert np.allclose(to_standard(gp).A, K, atol=1e-14)


def test_non_spd_mass_names_pivot():
    M = np.diag([1.0, -1.0, 1.0])
    gp = GeneralizedProblem(K=np.zeros((1, 3, 3)), M=M, free_dofs=np.arange(3), dof_labels=[],
                            fixed_dofs=np.array([]), element_centers=np.zeros((1, 1)))
    with pytest.raises(CholeskyError, match="row 1"):
        to_standard(gp)


# -- expansion file format -----------------------------------------------------------

def test_expansion_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    A = rng.standard_normal((4, 6, 6))
    A = A + A.transpose(0, 2, 1)
    exp = MatrixExpansion(A=A, m_xi=3, p=1)
    save_expansion(exp, tmp_path / "e.txt")
    back = load_expansion(tmp_path / "e.txt")
    assert np.array_equal(back.A, exp.A)
    assert (back.m_xi, back.p, back.n_terms, back.size) == (3, 1, 4, 6)


def test_beam_expansion_round_trip(tmp_path, beam25):
    save_expansion(beam25.expansion, tmp_path / "beam.txt")
    assert np.array_equal(load_expansion(tmp_path / "beam.txt").A, beam25.expansion.A)


def _write(path, text):
    path.write_text(text)
    return path


@pytest.mark.parametrize("text, msg", [
    ("0 0 1 1\n", "empty"),
    ("two words\n", "malformed"),
    ("2 0 1 1\n1 0\n", "expected 2 rows"),
    ("2 0 1 1\n1 0 0\n0 1\n", "dimension mismatch"),
    ("2 0 1 1\n1 0.5\n0 1\n", "not symmetric"),
])
def test_expansion_file_errors(tmp_path, text, msg):
    with pytest.raises(ValueError, match=msg):
        load_expansion(_write(tmp_path / "bad.txt", text))


def test_expansion_block_layout(tmp_path):
    path = _write(tmp_path / "e.txt", "2 1 1 1\n1 0\n0 2\n0 3\n3 0\n")
    exp = load_expansion(path)
    assert exp.A.shape == (2, 2, 2)
    assert exp.A[1, 0, 1] == 3.0


def test_subnormals_flushed():
    A = np.zeros((2, 2, 2))
    A[0] = np.eye(2)
    A[1, 0, 0] = 1e-320
    assert MatrixExpansion(A=A).A[1, 0, 0] == 0.0
