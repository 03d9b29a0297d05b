import numpy as np
import pytest
import scipy.io
import scipy.linalg

from stripeq import forms
from stripeq.errors import ModeError, SingularOperatorError, SpecViolationError
from stripeq.forms import (
    Discretization,
    ProblemSpec,
    assemble_jacobian,
    assemble_lambda,
    assemble_mass,
    apply_f_interior,
    apply_g_boundary,
    apply_g_concentrated,
    dual_norm,
    factorize,
    induced_norm,
    read_field_csv,
    write_field_csv,
    write_matrix_market,
)
from stripeq.geometry import build_interval_mesh, build_rectangle_mesh
from stripeq.oracle import dense_check, dense_gap


def spec(f=None, g=None, **kw):
    return ProblemSpec(f or forms.zero(), g or forms.zero(), **kw)


def test_lambda_two_elements_by_hand():
    A = assemble_lambda(build_interval_mesh(2), spec()).toarray()
    stiff = 2.0 * np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    mass = (0.5 / 6) * np.array([[2, 1, 0], [1, 4, 1], [0, 1, 2]])
    assert np.allclose(A, stiff + mass, atol=1e-15)
    assert A[1, 1] == pytest.approx(4 + 1 / 3)


@pytest.mark.parametrize("mesh", [build_interval_mesh(9), build_rectangle_mesh(4, 3)])
def test_lambda_on_constants_is_mass(mesh):
    s = spec()
    A = assemble_lambda(mesh, s)
    one = np.ones(mesh.n_nodes)
    assert np.allclose(A @ one, assemble_mass(mesh) @ one, atol=1e-14)
    assert one @ (A @ one) == pytest.approx(1.0, abs=1e-13)


def test_lambda_symmetric_positive_definite():
    A = assemble_lambda(build_rectangle_mesh(5, 4), spec()).toarray()
    assert np.allclose(A, A.T, atol=1e-15)
    assert np.linalg.eigvalsh(A).min() > 0


def test_stiffness_linear_in_coefficient():
    mesh = build_rectangle_mesh(3, 3)
    K1 = forms.assemble_stiffness(mesh, spec())
    K2 = forms.assemble_stiffness(mesh, spec(a=2.0, a0=1.0, a1=2.0))
    assert np.allclose(K2.toarray(), 2 * K1.toarray(), atol=1e-14)


def test_coefficient_out_of_bounds_rejected():
    with pytest.raises(SpecViolationError):
        forms.assemble_stiffness(build_interval_mesh(4), spec(a=3.0, a0=1.0, a1=2.0))


def test_bad_ellipticity_bounds_rejected():
    with pytest.raises(SpecViolationError):
        spec(a0=0.0)


def test_f_interior_constant_one():
    mesh = build_interval_mesh(4)
    out = apply_f_interior(mesh, spec(f=forms.constant(1.0)), np.zeros(5))
    assert np.allclose(out, [0.125, 0.25, 0.25, 0.25, 0.125])


def test_g_concentrated_constant_one():
    mesh = build_interval_mesh(4)
    out = apply_g_concentrated(mesh, spec(g=forms.constant(1.0), epsilon=0.25), np.zeros(5))
    assert np.allclose(out, [0.5, 0.5, 0.0, 0.5, 0.5], atol=1e-15)


def test_g_boundary_constant_one():
    mesh = build_interval_mesh(4)
    out = apply_g_boundary(mesh, spec(g=forms.constant(1.0)), np.zeros(5))
    assert out.tolist() == [1.0, 0.0, 0.0, 0.0, 1.0]


def test_g_boundary_2d_total():
    mesh = build_rectangle_mesh(3, 4)
    out = apply_g_boundary(mesh, spec(g=forms.constant(1.0)), np.zeros(mesh.n_nodes))
    assert out.sum() == pytest.approx(4.0, rel=1e-13)


def test_mode_guards():
    mesh = build_interval_mesh(4)
    u = np.zeros(5)
    with pytest.raises(ModeError):
        apply_g_concentrated(mesh, spec(g=forms.constant(1.0)), u)
    with pytest.raises(ModeError):
        apply_g_boundary(mesh, spec(g=forms.constant(1.0), epsilon=0.1), u)


def test_concentrated_tends_to_boundary_1d():
    mesh = build_interval_mesh(32)
    s = spec(g=forms.scaled_tanh(1.0))
    u = np.sin(3 * mesh.nodes[:, 0]) + 0.2
    lim = apply_g_boundary(mesh, s, u)
    errs = [np.abs(apply_g_concentrated(mesh, s.concentrated(e), u) - lim).sum() for e in (0.01, 0.001)]
    assert errs[1] < errs[0] < 0.2


@pytest.mark.parametrize("mesh", [build_interval_mesh(12), build_rectangle_mesh(5, 4)])
@pytest.mark.parametrize("eps", [None, 0.15])
def test_jacobian_matches_finite_differences(mesh, eps):
    s = spec(f=forms.scaled_tanh(2.0), g=forms.scaled_tanh(0.5), epsilon=eps)
    disc = Discretization(mesh, s)
    rng = np.random.default_rng(1)
    u = rng.standard_normal(mesh.n_nodes)
    v = rng.standard_normal(mesh.n_nodes)
    Jv = disc.jacobian(u) @ v
    errs = [np.linalg.norm(disc.nonlinear(u + t * v) - disc.nonlinear(u) - t * Jv)
            for t in (1e-3, 1e-4, 1e-5)]
    # first-order remainder shrinks quadratically: ratio ~ 1e-2 per decade, well below 0.1
    assert errs[1] / errs[0] < 0.1 + 0.05
    assert errs[2] / errs[1] < 0.1 + 0.05


def test_jacobian_symmetric():
    mesh = build_rectangle_mesh(4, 4)
    J = assemble_jacobian(mesh, spec(f=forms.scaled_tanh(2.0), g=forms.scaled_tanh(1.0)),
                          np.linspace(-1, 1, mesh.n_nodes)).toarray()
    assert np.allclose(J, J.T, atol=1e-15)


@pytest.mark.parametrize("mesh", [build_interval_mesh(10), build_rectangle_mesh(4, 4)])
@pytest.mark.parametrize("eps", [None, 0.25])
def test_sparse_matches_dense_oracle(mesh, eps):
    s = spec(f=forms.scaled_tanh(2.0), g=forms.scaled_tanh(0.3), epsilon=eps,
             a=lambda p: 1.0 + 0.5 * p[:, 0], a0=1.0, a1=1.5)
    u = np.cos(2 * mesh.nodes[:, 0])
    assert dense_check(mesh, s, u)["max"] < 1e-12


def test_dual_norm_matches_cholesky():
    A = assemble_lambda(build_interval_mesh(20), spec())
    r = np.random.default_rng(0).standard_normal(21)
    c = scipy.linalg.cho_factor(A.toarray())
    assert dual_norm(r, A) == pytest.approx(np.sqrt(r @ scipy.linalg.cho_solve(c, r)), rel=1e-12)
    assert dual_norm(np.zeros(21), A) == 0.0


def test_factorize_rejects_singular():
    import scipy.sparse as sp
    with pytest.raises(SingularOperatorError):
        factorize(sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]])))


def test_induced_norm_of_lambda_is_one():
    A = assemble_lambda(build_interval_mesh(16), spec())
    assert induced_norm(A, A) == pytest.approx(1.0, rel=1e-6)


def test_operator_gap_matches_dense():
    mesh = build_interval_mesh(8)
    s = spec(g=forms.linear(1.0))
    disc = Discretization(mesh, s)
    got = disc.operator_gap(np.zeros(9), 0.25, tol=1e-12)
    assert got == pytest.approx(dense_gap(mesh, s, np.zeros(9), 0.25), abs=1e-6)


def test_operator_gap_zero_for_constant_flux():
    mesh = build_interval_mesh(16)
    disc = Discretization(mesh, spec(g=forms.constant(1.0)))
    assert disc.operator_gap(np.zeros(17), 0.1) == 0.0


def test_operator_gap_needs_width():
    disc = Discretization(build_interval_mesh(4), spec())
    with pytest.raises(ModeError):
        disc.operator_gap(np.zeros(5))


def test_with_epsilon_shares_factorization():
    disc = Discretization(build_interval_mesh(8), spec())
    conc = disc.with_epsilon(0.1)
    assert conc.A is disc.A and conc.lu is disc.lu
    assert conc.epsilon == 0.1 and disc.epsilon is None


def test_check_hypothesis():
    assert spec(f=forms.scaled_tanh(2.0)).check_hypothesis() == []
    assert spec(g=forms.linear(1.0)).check_hypothesis()


def test_nonlinearity_from_dict():
    assert forms.nonlinearity_from_dict(2.5).value(np.zeros(2)).tolist() == [2.5, 2.5]
    assert forms.nonlinearity_from_dict({"kind": "tanh", "c": 2}).bound == 4.0
    with pytest.raises(ValueError):
        forms.nonlinearity_from_dict({"kind": "cubic"})


def test_matrix_market_round_trip(tmp_path):
    A = assemble_lambda(build_rectangle_mesh(3, 3), spec())
    write_matrix_market(A, tmp_path / "A.mtx", comment="lambda")
    back = scipy.io.mmread(str(tmp_path / "A.mtx"))
    assert np.array_equal(back.toarray(), A.toarray())


@pytest.mark.parametrize("mesh", [build_interval_mesh(6), build_rectangle_mesh(2, 3)])
def test_field_csv_round_trip(mesh, tmp_path):
    u = np.random.default_rng(2).standard_normal(mesh.n_nodes) / 3
    write_field_csv(mesh, u, tmp_path / "u.csv")
    assert np.array_equal(read_field_csv(tmp_path / "u.csv"), u)
    header = (tmp_path / "u.csv").read_text().splitlines()[0]
    assert header == ("node,x,value" if mesh.dimension == 1 else "node,x,y,value")
