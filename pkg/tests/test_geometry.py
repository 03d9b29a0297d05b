import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stripeq.errors import InvalidMeshError, InvalidStripError
from stripeq.geometry import (
    Mesh,
    boundary_quadrature,
    build_interval_mesh,
    build_rectangle_mesh,
    interior_quadrature,
    mesh_from_dict,
    mesh_to_dict,
    read_mesh_json,
    strip_quadrature,
    write_mesh_json,
)


def test_interval_two_elements():
    m = build_interval_mesh(2)
    assert m.nodes[:, 0].tolist() == [0.0, 0.5, 1.0]
    assert m.h == 0.5


def test_interval_boundary_facets():
    m = build_interval_mesh(4)
    got = {(float(m.nodes[f[0], 0]), float(n[0])) for f, n in zip(m.facets, m.normals)}
    assert got == {(0.0, -1.0), (1.0, 1.0)}


def test_interval_measure_sums_to_one():
    assert build_interval_mesh(10).measures.sum() == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("bad", [0, 1, -3])
def test_interval_rejects_small_n(bad):
    with pytest.raises(InvalidMeshError):
        build_interval_mesh(bad)


def test_rectangle_counts():
    m = build_rectangle_mesh(2, 2)
    assert m.n_nodes == 9
    assert len(m.facets) == 8


def test_rectangle_total_measure():
    assert build_rectangle_mesh(4, 4).measures.sum() == pytest.approx(1.0, abs=1e-14)


def test_rectangle_h_matches_element_geometry():
    m = build_rectangle_mesh(4, 2)
    assert m.h == pytest.approx(np.hypot(0.25, 0.5))


def test_rectangle_normals_point_outward():
    m = build_rectangle_mesh(3, 5)
    mid = 0.5 * (m.nodes[m.facets[:, 0]] + m.nodes[m.facets[:, 1]])
    assert np.all(np.einsum("fd,fd->f", mid - 0.5, m.normals) > 0)


@pytest.mark.parametrize("nx,ny", [(1, 3), (3, 1)])
def test_rectangle_rejects_small(nx, ny):
    with pytest.raises(InvalidMeshError):
        build_rectangle_mesh(nx, ny)


def test_mesh_rejects_degenerate_element():
    with pytest.raises(InvalidMeshError):
        Mesh(np.array([0.0, 0.5, 0.5, 1.0]), [[0, 1], [1, 2], [2, 3]], [[0], [3]], [[-1.0], [1.0]], [0, 2])


def test_mesh_rejects_interior_facet():
    m = build_interval_mesh(3)
    with pytest.raises(InvalidMeshError):
        Mesh(m.nodes, m.elements, [[0], [1]], [[-1.0], [1.0]], [0, 0])


def test_mesh_arrays_are_read_only():
    m = build_interval_mesh(3)
    with pytest.raises(ValueError):
        m.nodes[0, 0] = 3.0


def test_interior_quadrature_exact_for_quadratics_2d():
    m = build_rectangle_mesh(3, 4)
    q = interior_quadrature(m)
    assert q.integrate(lambda p: p[:, 0] ** 2 + p[:, 0] * p[:, 1]) == pytest.approx(1 / 3 + 1 / 4, abs=1e-14)


def test_strip_1d_total_weight():
    assert strip_quadrature(build_interval_mesh(7), 0.1).total_weight == pytest.approx(0.2, abs=1e-15)


def test_strip_1d_concentrated_constant():
    q = strip_quadrature(build_interval_mesh(8), 0.25)
    assert q.total_weight / 0.25 == pytest.approx(2.0, abs=1e-15)


def test_strip_2d_frame_area():
    q = strip_quadrature(build_rectangle_mesh(7, 9), 0.1)
    assert q.total_weight == pytest.approx(1 - 0.8 ** 2, rel=1e-12)
    assert q.exactness == "cut-exact"


def test_strip_2d_integrates_linear_exactly():
    # int over frame of x = 1/2 * area by symmetry
    q = strip_quadrature(build_rectangle_mesh(5, 6), 0.13)
    assert q.integrate(lambda p: p[:, 0]) == pytest.approx(0.5 * (1 - 0.74 ** 2), rel=1e-12)


@pytest.mark.parametrize("eps", [0.0, -0.1, 0.5, 0.7])
def test_strip_rejects_bad_width(eps):
    with pytest.raises(InvalidStripError):
        strip_quadrature(build_interval_mesh(4), eps)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 40), eps=st.floats(1e-3, 0.499))
def test_strip_1d_properties(n, eps):
    m = build_interval_mesh(n)
    q = strip_quadrature(m, eps)
    assert np.all(q.weights >= 0)
    assert np.all(m.distance_to_boundary(q.points) < eps)
    assert q.total_weight == pytest.approx(2 * eps, rel=1e-13)


@settings(max_examples=15, deadline=None)
@given(nx=st.integers(2, 9), ny=st.integers(2, 9), eps=st.floats(1e-3, 0.49))
def test_strip_2d_properties(nx, ny, eps):
    m = build_rectangle_mesh(nx, ny)
    q = strip_quadrature(m, eps)
    assert np.all(q.weights >= 0)
    assert np.all(m.distance_to_boundary(q.points) < eps)
    assert q.total_weight == pytest.approx(1 - (1 - 2 * eps) ** 2, rel=1e-6)


def test_strip_concentration_limit_1d():
    # (1/eps) int_strip phi -> phi(0) + phi(1) with error <= eps * max|phi'|
    m = build_interval_mesh(16)
    rng = np.random.default_rng(3)
    for _ in range(5):
        phi = rng.standard_normal(m.n_nodes)
        slope = np.max(np.abs(np.diff(phi))) * 16
        for eps in (0.2, 0.1, 0.05, 0.01):
            q = strip_quadrature(m, eps)
            vals = np.einsum("qk,qk->q", q.shape, phi[m.elements[q.cells]])
            err = abs(np.dot(q.weights, vals) / eps - (phi[0] + phi[-1]))
            assert err <= eps * slope + 1e-12


def test_boundary_quadrature_1d():
    m = build_interval_mesh(5)
    q = boundary_quadrature(m)
    assert sorted(q.points[:, 0].tolist()) == [0.0, 1.0]
    assert q.weights.tolist() == [1.0, 1.0]


def test_boundary_quadrature_2d_perimeter():
    q = boundary_quadrature(build_rectangle_mesh(3, 7))
    assert q.total_weight == pytest.approx(4.0, rel=1e-12)


def test_boundary_quadrature_2d_side_integral():
    q = boundary_quadrature(build_rectangle_mesh(4, 4))
    bottom = q.points[:, 1] == 0.0
    assert np.dot(q.weights[bottom], q.points[bottom, 0]) == pytest.approx(0.5, abs=1e-15)


def test_boundary_shape_values_are_partition_of_unity():
    q = boundary_quadrature(build_rectangle_mesh(3, 3))
    assert np.allclose(q.shape.sum(axis=1), 1.0)
    assert np.all(q.shape > -1e-14)


@pytest.mark.parametrize("mesh", [build_interval_mesh(5), build_rectangle_mesh(3, 2)])
def test_mesh_json_round_trip(mesh, tmp_path):
    write_mesh_json(mesh, tmp_path / "m.json")
    back = read_mesh_json(tmp_path / "m.json")
    for name in ("nodes", "elements", "facets", "normals", "facet_owner"):
        assert np.array_equal(getattr(back, name), getattr(mesh, name))
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["version"] == 1


def test_mesh_json_rejects_other_version():
    doc = mesh_to_dict(build_interval_mesh(3))
    doc["version"] = 99
    with pytest.raises(InvalidMeshError):
        mesh_from_dict(doc)
