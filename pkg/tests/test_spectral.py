import json
import math

import numpy as np
import pytest

from stripeq import forms
from stripeq.errors import ConvergenceError
from stripeq.forms import Discretization, ProblemSpec
from stripeq.geometry import build_interval_mesh, build_rectangle_mesh
from stripeq.oracle import dense_spectrum, tanh_fixed_point
from stripeq.spectral import is_hyperbolic, linearized_spectrum, symmetry_defect

BISTABLE = ProblemSpec(forms.scaled_tanh(2.0), forms.zero())
NEUMANN = ProblemSpec(forms.zero(), forms.zero())


def test_neumann_spectrum():
    d = Discretization(build_interval_mesh(128), NEUMANN)
    rep = linearized_spectrum(d, d.zeros(), m=3)
    assert rep.eigenvalues[0] == pytest.approx(1.0, abs=1e-10)
    assert rep.eigenvalues[1] == pytest.approx(1 + math.pi ** 2, rel=1e-3)
    assert rep.eigenvalues[2] == pytest.approx(1 + 4 * math.pi ** 2, rel=2e-3)
    assert np.all(rep.residuals <= 1e-8)
    assert rep.hyperbolic


def test_bistable_zero_is_unstable_but_hyperbolic():
    d = Discretization(build_interval_mesh(64), BISTABLE)
    hyp, rep = is_hyperbolic(d, d.zeros())
    assert hyp
    assert rep.eigenvalues[0] == pytest.approx(-1.0, abs=1e-10)


def test_bistable_constant_equilibrium():
    c = tanh_fixed_point(2.0)
    d = Discretization(build_interval_mesh(64), BISTABLE)
    rep = linearized_spectrum(d, d.constant(c))
    assert rep.eigenvalues[0] == pytest.approx(1 - 2 * (1 - math.tanh(c) ** 2), abs=1e-9)


def test_singular_linearization():
    d = Discretization(build_interval_mesh(32), ProblemSpec(forms.linear(1.0), forms.zero()))
    rep = linearized_spectrum(d, d.zeros())
    assert rep.singular and not rep.hyperbolic and rep.margin == 0.0


def test_matches_dense_spectrum():
    mesh = build_interval_mesh(40)
    s = ProblemSpec(forms.scaled_tanh(2.0), forms.scaled_tanh(0.5))
    u = np.sin(4 * mesh.nodes[:, 0])
    rep = linearized_spectrum(Discretization(mesh, s), u, m=5)
    assert rep.eigenvalues == pytest.approx(dense_spectrum(mesh, s, u)[:5], rel=1e-9, abs=1e-9)


def test_2d_neumann_mesh_convergence():
    # second eigenvalue 1 + pi^2; P1 eigenvalue error is O(h^2)
    errs = []
    for n in (8, 16, 32):
        d = Discretization(build_rectangle_mesh(n, n), NEUMANN)
        rep = linearized_spectrum(d, d.zeros(), m=2)
        errs.append(abs(rep.eigenvalues[1] - (1 + math.pi ** 2)))
    assert 3.0 <= errs[0] / errs[1] <= 5.0
    assert 3.0 <= errs[1] / errs[2] <= 5.0


def test_hyperbolicity_persists_along_schedule():
    mesh = build_interval_mesh(128)
    base = Discretization(mesh, ProblemSpec(forms.scaled_tanh(2.0), forms.scaled_tanh(0.1)))
    u = base.constant(tanh_fixed_point(2.0))
    for eps in (None, 0.1, 0.05, 0.025):
        assert is_hyperbolic(base.with_epsilon(eps), u)[0]


def test_stagnation_raises_with_partial_report():
    d = Discretization(build_interval_mesh(64), NEUMANN)
    with pytest.raises(ConvergenceError) as info:
        linearized_spectrum(d, d.zeros(), tol=1e-30, max_iter=3)
    assert info.value.estimate is not None


def test_report_json():
    d = Discretization(build_interval_mesh(16), BISTABLE)
    doc = json.loads(linearized_spectrum(d, d.zeros(), m=2).to_json())
    assert set(doc) == {"eigenvalues", "residuals", "hyperbolic", "margin", "tolerance", "singular"}


def test_symmetry_defect():
    d = Discretization(build_interval_mesh(16), BISTABLE)
    assert symmetry_defect(d.A - d.jacobian(d.zeros())) == 0.0


def test_rejects_bad_m():
    d = Discretization(build_interval_mesh(8), BISTABLE)
    with pytest.raises(ValueError):
        linearized_spectrum(d, d.zeros(), m=0)
