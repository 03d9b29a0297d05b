"""Meshes of the unit interval and unit square, and the quadrature rules on them.

Three families of rules are produced, all sharing the :class:`Quadrature`
layout (points, weights, owning element, P1 basis values at each point):

* interior rules: 3-point Gauss per element,
* strip rules: the same 3-point rule applied to the cut pieces of every
  element that meets the boundary layer ``{x : dist(x, boundary) < eps}``,
* boundary rules: point evaluations (1-D) or 3-point Gauss per edge (2-D).

Because the layer of a box is itself a polygonal frame, cutting elements
against it is exact in both dimensions.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from stripeq.errors import InvalidMeshError, InvalidStripError

MESH_FORMAT = "stripeq-mesh"
MESH_FORMAT_VERSION = 1

# reference rules, on [0, 1] and in barycentric coordinates of a triangle
_GAUSS3_X, _GAUSS3_W = np.polynomial.legendre.leggauss(3)
_GAUSS3_X = 0.5 * (_GAUSS3_X + 1.0)
_GAUSS3_W = 0.5 * _GAUSS3_W
_TRI3_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
_TRI3_W = np.full(3, 1 / 3)


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial P1 mesh of an axis-aligned box.

    Attributes
    ----------
    nodes : (N, d) float array
    elements : (E, d+1) int array, positively oriented
    facets : (F, d) int array of boundary facet nodes
    normals : (F, d) outward unit normals
    facet_owner : (F,) index of the element each facet belongs to
    """

    nodes: np.ndarray
    elements: np.ndarray
    facets: np.ndarray
    normals: np.ndarray
    facet_owner: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        object.__setattr__(self, "nodes", _frozen(nodes, float))
        for name, dtype in (("elements", np.int64), ("facets", np.int64),
                            ("normals", float), ("facet_owner", np.int64)):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype))
        self._validate()

    def _validate(self):
        d = self.dimension
        if d not in (1, 2):
            raise InvalidMeshError(f"unsupported dimension {d}")
        if self.elements.ndim != 2 or self.elements.shape[1] != d + 1:
            raise InvalidMeshError("elements must be (d+1)-tuples of node indices")
        n = len(self.nodes)
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= n):
            raise InvalidMeshError("element refers to a nonexistent node")
        if not np.all(np.isfinite(self.nodes)):
            raise InvalidMeshError("non-finite node coordinates")
        if np.any(self.measures <= 0.0):
            raise InvalidMeshError("degenerate or inverted element")
        if self.facets.shape != (len(self.facet_owner), d) or self.normals.shape != (len(self.facets), d):
            raise InvalidMeshError("facet arrays have inconsistent shapes")
        owners = self.elements[self.facet_owner]
        for f, own in zip(self.facets, owners):
            if not np.all(np.isin(f, own)):
                raise InvalidMeshError(f"facet {f.tolist()} is not a face of its owner")
        counts = _facet_incidence(self.elements)
        for f in self.facets:
            if counts.get(tuple(sorted(f.tolist())), 0) != 1:
                raise InvalidMeshError(f"boundary facet {f.tolist()} is shared by several elements")

    @property
    def dimension(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @cached_property
    def measures(self) -> np.ndarray:
        v = self.nodes[self.elements]
        if self.dimension == 1:
            return v[:, 1, 0] - v[:, 0, 0]
        e1 = v[:, 1] - v[:, 0]
        e2 = v[:, 2] - v[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def h(self) -> float:
        v = self.nodes[self.elements]
        k = v.shape[1]
        diam = np.zeros(len(v))
        for i in range(k):
            for j in range(i + 1, k):
                diam = np.maximum(diam, np.linalg.norm(v[:, i] - v[:, j], axis=1))
        return float(diam.max())

    @cached_property
    def gradients(self) -> np.ndarray:
        """Constant gradients of the P1 basis on each element, shape (E, d+1, d)."""
        v = self.nodes[self.elements]
        if self.dimension == 1:
            inv = 1.0 / self.measures
            return np.stack([-inv, inv], axis=1)[:, :, None]
        # rows of the inverse affine map give grad(lambda_1), grad(lambda_2)
        jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)  # columns are edges
        inv = np.linalg.inv(jac)
        g12 = inv
        g0 = -g12.sum(axis=1, keepdims=True)
        return np.concatenate([g0, g12], axis=1)

    @cached_property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.nodes.min(axis=0), self.nodes.max(axis=0)

    @property
    def inradius(self) -> float:
        lo, hi = self.bounds
        return float(0.5 * np.min(hi - lo))

    @property
    def boundary_measure(self) -> float:
        if self.dimension == 1:
            return float(len(self.facets))
        e = self.nodes[self.facets[:, 1]] - self.nodes[self.facets[:, 0]]
        return float(np.linalg.norm(e, axis=1).sum())

    def distance_to_boundary(self, points) -> np.ndarray:
        lo, hi = self.bounds
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.minimum(p - lo, hi - p).min(axis=1)

    def barycentric(self, cells, points) -> np.ndarray:
        """Barycentric coordinates of ``points`` inside elements ``cells``."""
        cells = np.asarray(cells)
        p = np.asarray(points, dtype=float).reshape(len(cells), self.dimension)
        v = self.nodes[self.elements[cells]]
        if self.dimension == 1:
            l1 = (p[:, 0] - v[:, 0, 0]) / (v[:, 1, 0] - v[:, 0, 0])
            return np.stack([1.0 - l1, l1], axis=1)
        jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
        l12 = np.linalg.solve(jac, (p - v[:, 0])[..., None])[..., 0]
        return np.concatenate([1.0 - l12.sum(axis=1, keepdims=True), l12], axis=1)


def _facet_incidence(elements):
    counts = {}
    k = elements.shape[1]
    for el in elements.tolist():
        for skip in range(k):
            face = tuple(sorted(el[:skip] + el[skip + 1:]))
            counts[face] = counts.get(face, 0) + 1
    return counts


def build_interval_mesh(n: int) -> Mesh:
    """Uniform mesh of (0, 1) with ``n`` elements."""
    if int(n) != n or n < 2:
        raise InvalidMeshError(f"need at least 2 elements, got {n}")
    n = int(n)
    nodes = np.linspace(0.0, 1.0, n + 1)
    elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return Mesh(nodes, elements, facets=[[0], [n]], normals=[[-1.0], [1.0]],
                facet_owner=[0, n - 1])


def build_rectangle_mesh(nx: int, ny: int) -> Mesh:
    """Structured triangulation of (0, 1)^2, each cell cut along its main diagonal."""
    if int(nx) != nx or int(ny) != ny or nx < 2 or ny < 2:
        raise InvalidMeshError(f"need nx, ny >= 2, got {nx}, {ny}")
    nx, ny = int(nx), int(ny)
    x, y = np.meshgrid(np.linspace(0, 1, nx + 1), np.linspace(0, 1, ny + 1))
    nodes = np.column_stack([x.ravel(), y.ravel()])

    def idx(i, j):
        return j * (nx + 1) + i

    elements, facets, normals, owner = [], [], [], []
    for j in range(ny):
        for i in range(nx):
            v00, v10, v11, v01 = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            lower = len(elements)
            elements.append([v00, v10, v11])
            elements.append([v00, v11, v01])
            if j == 0:
                facets.append([v00, v10]); normals.append([0.0, -1.0]); owner.append(lower)
            if i == nx - 1:
                facets.append([v10, v11]); normals.append([1.0, 0.0]); owner.append(lower)
            if j == ny - 1:
                facets.append([v11, v01]); normals.append([0.0, 1.0]); owner.append(lower + 1)
            if i == 0:
                facets.append([v01, v00]); normals.append([-1.0, 0.0]); owner.append(lower + 1)
    return Mesh(nodes, np.array(elements), np.array(facets), np.array(normals), np.array(owner))


@dataclass(frozen=True, eq=False)
class Quadrature:
    """Points, weights, owning element and P1 basis values at each point."""

    points: np.ndarray
    weights: np.ndarray
    cells: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen(self.points, float))
        object.__setattr__(self, "weights", _frozen(self.weights, float))
        object.__setattr__(self, "cells", _frozen(self.cells, np.int64))
        object.__setattr__(self, "shape", _frozen(self.shape, float))

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def integrate(self, fn) -> float:
        """Integrate a callable of the (q, d) point array."""
        return float(np.dot(self.weights, np.asarray(fn(self.points), dtype=float)))


@dataclass(frozen=True, eq=False)
class StripQuadrature(Quadrature):
    epsilon: float = 0.0
    exactness: str = "cut-exact"


def _empty_rule(d):
    return dict(points=np.zeros((0, d)), weights=np.zeros(0), cells=np.zeros(0, dtype=int),
                shape=np.zeros((0, d + 1)))


def interior_quadrature(mesh: Mesh) -> Quadrature:
    E = len(mesh.elements)
    cells = np.repeat(np.arange(E), 3)
    if mesh.dimension == 1:
        shape = np.tile(np.column_stack([1 - _GAUSS3_X, _GAUSS3_X]), (E, 1))
        weights = np.outer(mesh.measures, _GAUSS3_W).ravel()
    else:
        shape = np.tile(_TRI3_BARY, (E, 1))
        weights = np.outer(mesh.measures, _TRI3_W).ravel()
    verts = mesh.nodes[mesh.elements[cells]]
    points = np.einsum("qk,qkd->qd", shape, verts)
    return Quadrature(points, weights, cells, shape)


def _interval_pieces(mesh, a, b):
    v = mesh.nodes[mesh.elements][:, :, 0]
    x0, x1 = v[:, 0], v[:, 1]
    cells, lo, hi = [], [], []
    left = x0 < a
    cells.append(np.nonzero(left)[0]); lo.append(x0[left]); hi.append(np.minimum(x1, a)[left])
    right = x1 > b
    cells.append(np.nonzero(right)[0]); lo.append(np.maximum(x0, b)[right]); hi.append(x1[right])
    cells, lo, hi = (np.concatenate(c) for c in (cells, lo, hi))
    keep = hi > lo
    return cells[keep], lo[keep], hi[keep]


def _clip(poly, normal, offset):
    """Sutherland-Hodgman clip of a convex polygon to ``normal . p <= offset``."""
    out = []
    m = len(poly)
    for i in range(m):
        p, q = poly[i], poly[(i + 1) % m]
        sp, sq = normal @ p - offset, normal @ q - offset
        if sp <= 0:
            out.append(p)
        if sp * sq < 0:
            t = sp / (sp - sq)
            out.append(p + t * (q - p))
    return out


def _polygon_area(poly):
    if len(poly) < 3:
        return 0.0
    p = np.asarray(poly)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _frame_pieces(tri, a, b):
    ex, ey = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    pieces = [
        _clip(tri, ex, a[0]),
        _clip(tri, -ex, -b[0]),
    ]
    middle = _clip(_clip(tri, -ex, -a[0]), ex, b[0])
    if len(middle) >= 3:
        pieces.append(_clip(middle, ey, a[1]))
        pieces.append(_clip(middle, -ey, -b[1]))
    return [p for p in pieces if _polygon_area(p) > 1e-15 * _polygon_area(tri)]


def strip_quadrature(mesh: Mesh, epsilon: float) -> StripQuadrature:
    """Quadrature on the boundary layer of width ``epsilon``.

    Elements are cut at the inner edge of the layer and the 3-point rule is
    applied on each piece, so piecewise polynomials of degree <= 5 (1-D) or
    <= 2 (2-D) are integrated exactly.
    """
    epsilon = float(epsilon)
    if not (0.0 < epsilon < mesh.inradius):
        raise InvalidStripError(f"epsilon={epsilon} outside (0, {mesh.inradius})")
    lo, hi = mesh.bounds
    a, b = lo + epsilon, hi - epsilon
    d = mesh.dimension
    if d == 1:
        cells, x0, x1 = _interval_pieces(mesh, a[0], b[0])
        pts = x0[:, None] + (x1 - x0)[:, None] * _GAUSS3_X[None, :]
        weights = ((x1 - x0)[:, None] * _GAUSS3_W[None, :]).ravel()
        cells = np.repeat(cells, 3)
        points = pts.reshape(-1, 1)
    else:
        v = mesh.nodes[mesh.elements]
        near = mesh.distance_to_boundary(v.reshape(-1, 2)).reshape(-1, 3).min(axis=1) < epsilon
        pts, wts, cls = [], [], []
        for e in np.nonzero(near)[0]:
            tri = [v[e, 0], v[e, 1], v[e, 2]]
            for poly in _frame_pieces(tri, a, b):
                for k in range(1, len(poly) - 1):
                    sub = np.array([poly[0], poly[k], poly[k + 1]])
                    area = abs(_polygon_area(sub))
                    if area == 0.0:
                        continue
                    pts.append(_TRI3_BARY @ sub)
                    wts.append(area * _TRI3_W)
                    cls.append(np.full(3, e))
        if not pts:
            return StripQuadrature(**_empty_rule(d), epsilon=epsilon)
        points, weights, cells = np.concatenate(pts), np.concatenate(wts), np.concatenate(cls)
    shape = mesh.barycentric(cells, points)
    return StripQuadrature(points, weights, cells, shape, epsilon=epsilon)


def boundary_quadrature(mesh: Mesh) -> Quadrature:
    """Rule on the boundary: endpoint evaluations in 1-D, 3-point Gauss per edge in 2-D."""
    if mesh.dimension == 1:
        points = mesh.nodes[mesh.facets[:, 0]]
        weights = np.ones(len(points))
        cells = mesh.facet_owner
    else:
        p0 = mesh.nodes[mesh.facets[:, 0]]
        p1 = mesh.nodes[mesh.facets[:, 1]]
        length = np.linalg.norm(p1 - p0, axis=1)
        points = (p0[:, None, :] + (p1 - p0)[:, None, :] * _GAUSS3_X[None, :, None]).reshape(-1, 2)
        weights = np.outer(length, _GAUSS3_W).ravel()
        cells = np.repeat(mesh.facet_owner, 3)
    shape = mesh.barycentric(cells, points)
    return Quadrature(points, weights, cells, shape)


def mesh_to_dict(mesh: Mesh) -> dict:
    return {
        "format": MESH_FORMAT,
        "version": MESH_FORMAT_VERSION,
        "dimension": mesh.dimension,
        "nodes": mesh.nodes.tolist(),
        "elements": mesh.elements.tolist(),
        "boundary_facets": [
            {"nodes": f.tolist(), "normal": n.tolist(), "element": int(e)}
            for f, n, e in zip(mesh.facets, mesh.normals, mesh.facet_owner)
        ],
    }


def mesh_from_dict(doc: dict) -> Mesh:
    if doc.get("format") != MESH_FORMAT:
        raise InvalidMeshError(f"not a {MESH_FORMAT} document")
    if doc.get("version") != MESH_FORMAT_VERSION:
        raise InvalidMeshError(f"unsupported mesh format version {doc.get('version')}")
    d = int(doc["dimension"])
    bf = doc["boundary_facets"]
    return Mesh(
        np.array(doc["nodes"], dtype=float).reshape(-1, d),
        np.array(doc["elements"], dtype=np.int64).reshape(-1, d + 1),
        np.array([f["nodes"] for f in bf], dtype=np.int64).reshape(-1, d),
        np.array([f["normal"] for f in bf], dtype=float).reshape(-1, d),
        np.array([f["element"] for f in bf], dtype=np.int64),
    )


def write_mesh_json(mesh: Mesh, path) -> None:
    Path(path).write_text(json.dumps(mesh_to_dict(mesh)))


def read_mesh_json(path) -> Mesh:
    return mesh_from_dict(json.loads(Path(path).read_text()))
