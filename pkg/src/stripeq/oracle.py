"""Brute-force references for checking the sparse solver path.

Nothing here calls into :mod:`stripeq.forms` quadrature or assembly: element
loops, reference rules, cut-cell splitting and trace integrals are written out
again, densely, for small meshes (<= 64 nodes per direction). The only
coupling is :func:`dense_check`, which compares the two paths.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from stripeq.errors import DomainError

MAX_DENSE_NODES = 65 * 65

# 3-point Gauss on [-1, 1]
_R = math.sqrt(0.6)
_G3 = ((-_R, 5.0 / 9.0), (0.0, 8.0 / 9.0), (_R, 5.0 / 9.0))
# degree-2 triangle rule in barycentric coordinates
_T3 = ((2 / 3, 1 / 6, 1 / 6), (1 / 6, 2 / 3, 1 / 6), (1 / 6, 1 / 6, 2 / 3))


@dataclass
class DenseSystem:
    A: np.ndarray
    M: np.ndarray
    J: np.ndarray
    F: np.ndarray

    def cholesky(self):
        return scipy.linalg.cho_factor(self.A)


def _coef(spec, x):
    p = np.atleast_2d(np.asarray(x, dtype=float))
    return float(spec.coefficient(p)[0])


def _interval_dense(mesh, spec, u):
    x = mesh.nodes[:, 0]
    n = len(x)
    A = np.zeros((n, n)); M = np.zeros((n, n)); J = np.zeros((n, n)); F = np.zeros(n)
    for i0, i1 in mesh.elements.tolist():
        xl, xr = x[i0], x[i1]
        L = xr - xl
        for xi, w in _G3:
            b = ((1 - xi) / 2, (1 + xi) / 2)
            xq = xl + L * (1 + xi) / 2
            wq = w * L / 2
            uq = b[0] * u[i0] + b[1] * u[i1]
            aq = _coef(spec, [xq])
            grad = (-1 / L, 1 / L)
            fq = float(spec.f.value(np.array([uq]))[0])
            dfq = float(spec.f.d1(np.array([uq]))[0])
            for a_, ia in enumerate((i0, i1)):
                F[ia] += wq * fq * b[a_]
                for b_, ib in enumerate((i0, i1)):
                    M[ia, ib] += wq * b[a_] * b[b_]
                    A[ia, ib] += wq * (aq * grad[a_] * grad[b_] + b[a_] * b[b_])
                    J[ia, ib] += wq * dfq * b[a_] * b[b_]
        if spec.epsilon is not None:
            eps = spec.epsilon
            pieces = []
            if xl < eps:
                pieces.append((xl, min(xr, eps)))
            if xr > 1 - eps:
                pieces.append((max(xl, 1 - eps), xr))
            for pl, pr in pieces:
                if pr <= pl:
                    continue
                for xi, w in _G3:
                    xq = pl + (pr - pl) * (1 + xi) / 2
                    wq = w * (pr - pl) / 2 / eps
                    b = ((xr - xq) / L, (xq - xl) / L)
                    uq = b[0] * u[i0] + b[1] * u[i1]
                    gq = float(spec.g.value(np.array([uq]))[0])
                    dgq = float(spec.g.d1(np.array([uq]))[0])
                    for a_, ia in enumerate((i0, i1)):
                        F[ia] += wq * gq * b[a_]
                        for b_, ib in enumerate((i0, i1)):
                            J[ia, ib] += wq * dgq * b[a_] * b[b_]
    if spec.epsilon is None:
        for node in (int(np.argmin(x)), int(np.argmax(x))):
            F[node] += float(spec.g.value(np.array([u[node]]))[0])
            J[node, node] += float(spec.g.d1(np.array([u[node]]))[0])
    return DenseSystem(A, M, J, F)


def _tri_grads(v):
    (x0, y0), (x1, y1), (x2, y2) = v
    det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    g = np.array([[y1 - y2, x2 - x1], [y2 - y0, x0 - x2], [y0 - y1, x1 - x0]]) / det
    return g, det / 2


def _tri_bary(v, p):
    (x0, y0), (x1, y1), (x2, y2) = v
    det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    l1 = ((p[0] - x0) * (y2 - y0) - (x2 - x0) * (p[1] - y0)) / det
    l2 = ((x1 - x0) * (p[1] - y0) - (p[0] - x0) * (y1 - y0)) / det
    return (1 - l1 - l2, l1, l2)


def _rect_dense(mesh, spec, u):
    n = mesh.n_nodes
    A = np.zeros((n, n)); M = np.zeros((n, n)); J = np.zeros((n, n)); F = np.zeros(n)
    lo, hi = mesh.nodes.min(axis=0), mesh.nodes.max(axis=0)

    def dist(p):
        return min(p[0] - lo[0], hi[0] - p[0], p[1] - lo[1], hi[1] - p[1])

    eps = spec.epsilon
    for el in mesh.elements.tolist():
        v = mesh.nodes[el]
        grads, area = _tri_grads(v)
        in_strip = False
        if eps is not None:
            dv = [dist(p) for p in v]
            inside = [d <= eps + 1e-14 for d in dv]
            outside = [d >= eps - 1e-14 for d in dv]
            if not (all(inside) or all(outside)):
                raise NotImplementedError("oracle only handles strips aligned with mesh lines")
            in_strip = dist(v.mean(axis=0)) < eps
        for bq in _T3:
            p = bq[0] * v[0] + bq[1] * v[1] + bq[2] * v[2]
            wq = area / 3
            uq = sum(bq[k] * u[el[k]] for k in range(3))
            aq = _coef(spec, p)
            fq = float(spec.f.value(np.array([uq]))[0])
            dfq = float(spec.f.d1(np.array([uq]))[0])
            gq = dgq = 0.0
            if in_strip:
                gq = float(spec.g.value(np.array([uq]))[0]) / eps
                dgq = float(spec.g.d1(np.array([uq]))[0]) / eps
            for a_ in range(3):
                F[el[a_]] += wq * (fq + gq) * bq[a_]
                for b_ in range(3):
                    mm = wq * bq[a_] * bq[b_]
                    M[el[a_], el[b_]] += mm
                    A[el[a_], el[b_]] += wq * aq * grads[a_] @ grads[b_] + mm
                    J[el[a_], el[b_]] += (dfq + dgq) * mm
    if eps is None:
        for (i, j), own in zip(mesh.facets.tolist(), mesh.facet_owner.tolist()):
            v = mesh.nodes[mesh.elements[own]]
            pi, pj = mesh.nodes[i], mesh.nodes[j]
            L = math.hypot(*(pj - pi))
            for xi, w in _G3:
                p = pi + (pj - pi) * (1 + xi) / 2
                b = _tri_bary(v, p)
                loc = mesh.elements[own].tolist()
                uq = sum(b[k] * u[loc[k]] for k in range(3))
                gq = float(spec.g.value(np.array([uq]))[0])
                dgq = float(spec.g.d1(np.array([uq]))[0])
                for a_ in range(3):
                    F[loc[a_]] += w * L / 2 * gq * b[a_]
                    for b_ in range(3):
                        J[loc[a_], loc[b_]] += w * L / 2 * dgq * b[a_] * b[b_]
    return DenseSystem(A, M, J, F)


def dense_system(mesh, spec, u=None) -> DenseSystem:
    """Dense Lambda, mass, Jacobian and nonlinear term assembled element by element."""
    if mesh.n_nodes > MAX_DENSE_NODES:
        raise DomainError(f"dense oracle capped at {MAX_DENSE_NODES} nodes")
    u = np.zeros(mesh.n_nodes) if u is None else np.asarray(u, dtype=float)
    if mesh.dimension == 1:
        return _interval_dense(mesh, spec, u)
    return _rect_dense(mesh, spec, u)


def _rel(dense, sparse):
    sparse = sparse.toarray() if hasattr(sparse, "toarray") else np.asarray(sparse)
    scale = max(np.max(np.abs(dense)), 1e-300)
    return float(np.max(np.abs(dense - sparse)) / scale) if np.any(dense) else float(np.max(np.abs(sparse)))


def dense_check(mesh, spec, u=None) -> dict:
    """Max relative entry discrepancy between the dense and sparse paths."""
    from stripeq import forms

    u = np.zeros(mesh.n_nodes) if u is None else np.asarray(u, dtype=float)
    ref = dense_system(mesh, spec, u)
    disc = forms.Discretization(mesh, spec)
    report = {
        "n_nodes": mesh.n_nodes,
        "epsilon": spec.epsilon,
        "lambda": _rel(ref.A, disc.A),
        "mass": _rel(ref.M, disc.M),
        "jacobian": _rel(ref.J, disc.jacobian(u)),
        "nonlinear": _rel(ref.F, disc.nonlinear(u)),
    }
    report["max"] = max(report["lambda"], report["mass"], report["jacobian"], report["nonlinear"])
    return report


def dense_check_json(mesh, spec, u=None) -> str:
    return json.dumps(dense_check(mesh, spec, u), indent=2)


def dense_dual_norm(r, A) -> float:
    c = scipy.linalg.cho_factor(np.asarray(A))
    return math.sqrt(float(r @ scipy.linalg.cho_solve(c, r)))


def dense_induced_norm(B, A) -> float:
    """sqrt of the top eigenvalue of B^T A^{-1} B w = lam A w."""
    A = np.asarray(A)
    B = np.asarray(B)
    c = scipy.linalg.cho_factor(A)
    T = B.T @ scipy.linalg.cho_solve(c, B)
    T = 0.5 * (T + T.T)
    lam = scipy.linalg.eigh(T, A, eigvals_only=True)
    return math.sqrt(max(float(lam[-1]), 0.0))


def dense_gap(mesh, spec, ustar, epsilon) -> float:
    """Operator gap built from the dense concentrated and limit Jacobians."""
    ustar = np.asarray(ustar, dtype=float)
    conc = dense_system(mesh, spec.concentrated(epsilon), ustar)
    lim = dense_system(mesh, spec.limit(), ustar)
    return dense_induced_norm(conc.J - lim.J, conc.A)


def dense_spectrum(mesh, spec, ustar) -> np.ndarray:
    """All eigenvalues of (A - J) v = lam M v, sorted by magnitude."""
    s = dense_system(mesh, spec, ustar)
    lam = scipy.linalg.eigh(s.A - s.J, s.M, eigvals_only=True)
    return lam[np.argsort(np.abs(lam))]


def bisect_root(fn, lo: float, hi: float, tol: float = 1e-12) -> float:
    flo, fhi = fn(lo), fn(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if flo * fhi > 0:
        raise DomainError(f"no sign change on [{lo}, {hi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if fm == 0:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def tanh_fixed_point(c: float = 2.0, tol: float = 1e-13) -> float:
    """Positive root of x = c tanh(x), c > 1."""
    return bisect_root(lambda x: x - c * math.tanh(x), 0.5, c + 1.0, tol)


class Evaluator:
    """Closed-form function on [0, 1] with its derivative and smoothness breakpoints."""

    def __init__(self, value, derivative, breakpoints=()):
        self._value = value
        self._derivative = derivative
        self.breakpoints = tuple(breakpoints)

    def __call__(self, x):
        return self._value(np.asarray(x, dtype=float))

    def derivative(self, x):
        return self._derivative(np.asarray(x, dtype=float))


def analytic_1d_limit_solution(g_const: float) -> Evaluator:
    """Solution of -u'' + u = 0 on (0, 1), u'(0) = -g, u'(1) = g."""
    s = math.sinh(0.5)
    return Evaluator(lambda x: g_const * np.cosh(x - 0.5) / s,
                     lambda x: g_const * np.sinh(x - 0.5) / s)


def analytic_1d_concentrated_solution(g_const: float, epsilon: float) -> Evaluator:
    """Solution of -u'' + u = (g/eps) chi_{[0,eps) U (1-eps,1]} with u'(0) = u'(1) = 0.

    On [0, eps]: u = q + B cosh(x); on [eps, 1-eps]: u = D cosh(x - 1/2);
    mirrored about x = 1/2. C^1 matching at x = eps gives
    D = q sinh(eps)/sinh(1/2) and B = -q sinh(1/2 - eps)/sinh(1/2).
    """
    if not 0 < epsilon < 0.5:
        raise DomainError("epsilon must lie in (0, 1/2)")
    q = g_const / epsilon
    s = math.sinh(0.5)
    D = q * math.sinh(epsilon) / s
    B = -q * math.sinh(0.5 - epsilon) / s

    def value(x):
        y = np.minimum(x, 1.0 - x)
        return np.where(y < epsilon, q + B * np.cosh(y), D * np.cosh(x - 0.5))

    def derivative(x):
        y = np.minimum(x, 1.0 - x)
        sign = np.where(x <= 0.5, 1.0, -1.0)
        return np.where(y < epsilon, sign * B * np.sinh(y), D * np.sinh(x - 0.5))

    return Evaluator(value, derivative, breakpoints=(epsilon, 1.0 - epsilon))


def analytic_1d_concentrated_rhs(g_const: float, epsilon: float):
    def rhs(x):
        y = np.minimum(x, 1.0 - x)
        return np.where(y < epsilon, g_const / epsilon, 0.0)
    return rhs


_GL20 = np.polynomial.legendre.leggauss(20)


def _segments(breaks):
    pts = sorted({0.0, 1.0, *[b for b in breaks if 0 < b < 1]})
    return list(zip(pts[:-1], pts[1:]))


def h1_distance_exact(u: Evaluator, v: Evaluator, pieces: int = 64) -> float:
    """||u - v||_{H^1(0,1)} by 20-point Gauss on sub-intervals split at breakpoints."""
    xg, wg = _GL20
    total = 0.0
    for a, b in _segments(u.breakpoints + v.breakpoints):
        edges = np.linspace(a, b, pieces + 1)
        for l, r in zip(edges[:-1], edges[1:]):
            x = l + (r - l) * (xg + 1) / 2
            w = wg * (r - l) / 2
            total += float(np.sum(w * ((u(x) - v(x)) ** 2 + (u.derivative(x) - v.derivative(x)) ** 2)))
    return math.sqrt(total)


def h1_error_p1(nodes, values, exact: Evaluator) -> float:
    """||u_h - u||_{H^1} for a P1 field on a sorted 1-D node list."""
    x = np.asarray(nodes, dtype=float).ravel()
    values = np.asarray(values, dtype=float)
    xg, wg = _GL20
    total = 0.0
    breaks = [b for b in exact.breakpoints]
    for i in range(len(x) - 1):
        xl, xr = x[i], x[i + 1]
        slope = (values[i + 1] - values[i]) / (xr - xl)
        cuts = [xl] + [b for b in breaks if xl < b < xr] + [xr]
        for l, r in zip(cuts[:-1], cuts[1:]):
            xq = l + (r - l) * (xg + 1) / 2
            w = wg * (r - l) / 2
            uh = values[i] + slope * (xq - xl)
            total += float(np.sum(w * ((uh - exact(xq)) ** 2 + (slope - exact.derivative(xq)) ** 2)))
    return math.sqrt(total)
