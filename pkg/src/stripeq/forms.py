"""Weak forms of the equilibrium problems and their derivatives.

With P1 hat functions phi_i, the discrete problems read

    Lambda u = F(u),   Lambda_ij = int a grad phi_i . grad phi_j + int phi_i phi_j

where F(u)_i = int f(u) phi_i + (1/eps) int_{strip} g(u) phi_i  (concentrated)
or    F(u)_i = int f(u) phi_i + int_{boundary} g(u) phi_i        (limit).

Fields and dual vectors are plain ``(n_nodes,)`` float arrays; operator
matrices are ``scipy.sparse`` CSR matrices.
"""
from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from stripeq.errors import (
    ConvergenceError,
    EvaluationError,
    ModeError,
    SingularOperatorError,
    SpecViolationError,
)
from stripeq.geometry import (
    Mesh,
    Quadrature,
    boundary_quadrature,
    interior_quadrature,
    strip_quadrature,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Nonlinearity:
    """A scalar C^2 function with its first two derivatives.

    ``bound`` is the constant K with |j| + |j'| + |j''| <= K on the real line
    (``inf`` when no such bound exists).
    """

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    d1: Callable[[np.ndarray], np.ndarray]
    d2: Callable[[np.ndarray], np.ndarray]
    bound: float
    params: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {"kind": self.name, **self.params}


def constant(c: float) -> Nonlinearity:
    c = float(c)
    zero = lambda u: np.zeros_like(np.asarray(u, dtype=float))  # noqa: E731
    return Nonlinearity("constant", lambda u: np.full_like(np.asarray(u, dtype=float), c),
                        zero, zero, bound=abs(c), params={"c": c})


def zero() -> Nonlinearity:
    return constant(0.0)


def scaled_tanh(c: float) -> Nonlinearity:
    """u -> c tanh(u).

    sup(|tanh| + |sech^2| + |2 tanh sech^2|) is below 2, so K = 2|c| is safe.
    """
    c = float(c)

    def d1(u):
        t = np.tanh(u)
        return c * (1.0 - t * t)

    def d2(u):
        t = np.tanh(u)
        return -2.0 * c * t * (1.0 - t * t)

    return Nonlinearity("tanh", lambda u: c * np.tanh(u), d1, d2, bound=2.0 * abs(c), params={"c": c})


def linear(c: float) -> Nonlinearity:
    """u -> c u. Has no global bound; kept for degenerate-spectrum checks."""
    c = float(c)
    return Nonlinearity("linear", lambda u: c * np.asarray(u, dtype=float),
                        lambda u: np.full_like(np.asarray(u, dtype=float), c),
                        lambda u: np.zeros_like(np.asarray(u, dtype=float)),
                        bound=math.inf if c else 0.0, params={"c": c})


_CATALOG = {"constant": constant, "tanh": scaled_tanh, "linear": linear}


def nonlinearity_from_dict(doc) -> Nonlinearity:
    if isinstance(doc, (int, float)):
        return constant(doc)
    kind = doc["kind"]
    if kind == "zero":
        return zero()
    try:
        return _CATALOG[kind](doc.get("c", 1.0))
    except KeyError:
        raise ValueError(f"unknown nonlinearity kind {kind!r}") from None


@dataclass(frozen=True)
class ProblemSpec:
    """Coefficient, nonlinearities and mode of an equilibrium problem.

    ``epsilon=None`` selects the limit problem with boundary flux g(u);
    a positive ``epsilon`` selects the problem with the reaction g
    concentrated on the strip of that width.
    """

    f: Nonlinearity
    g: Nonlinearity
    a: Callable[[np.ndarray], np.ndarray] | float = 1.0
    a0: float = 1.0
    a1: float = 1.0
    epsilon: float | None = None

    def __post_init__(self):
        if not (0.0 < self.a0 <= self.a1):
            raise SpecViolationError(f"need 0 < a0 <= a1, got {self.a0}, {self.a1}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def is_limit(self) -> bool:
        return self.epsilon is None

    @property
    def K(self) -> float:
        return max(self.f.bound, self.g.bound)

    def limit(self) -> "ProblemSpec":
        return replace(self, epsilon=None)

    def concentrated(self, epsilon: float) -> "ProblemSpec":
        return replace(self, epsilon=float(epsilon))

    def coefficient(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if callable(self.a):
            vals = np.asarray(self.a(points), dtype=float).reshape(len(points))
        else:
            vals = np.full(len(points), float(self.a))
        return vals

    def check_hypothesis(self, samples=None) -> list[str]:
        """Sample |j|, |j'|, |j''| against K; returns human-readable violations."""
        s = np.linspace(-20.0, 20.0, 801) if samples is None else np.asarray(samples, dtype=float)
        problems = []
        for label, nl in (("f", self.f), ("g", self.g)):
            if not math.isfinite(nl.bound):
                problems.append(f"{label} ({nl.name}) has no global bound")
                continue
            for order, fn in enumerate((nl.value, nl.d1, nl.d2)):
                worst = float(np.max(np.abs(fn(s))))
                if worst > nl.bound * (1 + 1e-12):
                    problems.append(f"|{label}{chr(39) * order}| reaches {worst:.4g} > K={nl.bound:.4g}")
        for p in problems:
            log.warning("bound check: %s", p)
        return problems


# ---------------------------------------------------------------------------
# quadrature kernels


def evaluate(mesh: Mesh, quad: Quadrature, u) -> np.ndarray:
    """Values of the P1 field ``u`` at the quadrature points."""
    return np.einsum("qk,qk->q", quad.shape, np.asarray(u, dtype=float)[mesh.elements[quad.cells]])


def _load(mesh, quad, values):
    conn = mesh.elements[quad.cells]
    contrib = (quad.weights * values)[:, None] * quad.shape
    return np.bincount(conn.ravel(), weights=contrib.ravel(), minlength=mesh.n_nodes)


def _weighted_mass(mesh, quad, coef):
    n = mesh.n_nodes
    if len(quad.weights) == 0:
        return sp.csr_matrix((n, n))
    conn = mesh.elements[quad.cells]
    k = conn.shape[1]
    vals = (quad.weights * coef)[:, None, None] * quad.shape[:, :, None] * quad.shape[:, None, :]
    rows = np.broadcast_to(conn[:, :, None], (len(conn), k, k))
    cols = np.broadcast_to(conn[:, None, :], (len(conn), k, k))
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()


def _checked(values, what):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise EvaluationError(f"{what} produced non-finite values")
    return values


# ---------------------------------------------------------------------------
# assembly


def assemble_mass(mesh: Mesh, quad: Quadrature | None = None) -> sp.csr_matrix:
    quad = interior_quadrature(mesh) if quad is None else quad
    return _weighted_mass(mesh, quad, np.ones(len(quad.weights)))


def assemble_stiffness(mesh: Mesh, spec: ProblemSpec, quad: Quadrature | None = None) -> sp.csr_matrix:
    quad = interior_quadrature(mesh) if quad is None else quad
    a = spec.coefficient(quad.points)
    tol = 1e-12 * spec.a1
    bad = (a < spec.a0 - tol) | (a > spec.a1 + tol) | ~np.isfinite(a)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise SpecViolationError(
            f"a={a[i]:.6g} at {quad.points[i].tolist()} violates [{spec.a0}, {spec.a1}]")
    a_int = np.bincount(quad.cells, weights=quad.weights * a, minlength=len(mesh.elements))
    G = mesh.gradients
    local = a_int[:, None, None] * np.einsum("eid,ejd->eij", G, G)
    conn = mesh.elements
    k = conn.shape[1]
    rows = np.broadcast_to(conn[:, :, None], (len(conn), k, k))
    cols = np.broadcast_to(conn[:, None, :], (len(conn), k, k))
    n = mesh.n_nodes
    return sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()


def assemble_lambda(mesh: Mesh, spec: ProblemSpec, quad: Quadrature | None = None) -> sp.csr_matrix:
    """Matrix of <Lambda u, v> = int a grad u . grad v + int u v."""
    quad = interior_quadrature(mesh) if quad is None else quad
    return (assemble_stiffness(mesh, spec, quad) + assemble_mass(mesh, quad)).tocsr()


def apply_f_interior(mesh: Mesh, spec: ProblemSpec, u, quad: Quadrature | None = None) -> np.ndarray:
    quad = interior_quadrature(mesh) if quad is None else quad
    fu = _checked(spec.f.value(evaluate(mesh, quad, u)), "f")
    return _load(mesh, quad, fu)


def apply_g_concentrated(mesh: Mesh, spec: ProblemSpec, u, strip: Quadrature | None = None) -> np.ndarray:
    if spec.is_limit:
        raise ModeError("concentrated reaction requested for a limit problem")
    strip = strip_quadrature(mesh, spec.epsilon) if strip is None else strip
    gu = _checked(spec.g.value(evaluate(mesh, strip, u)), "g")
    return _load(mesh, strip, gu) / spec.epsilon


def apply_g_boundary(mesh: Mesh, spec: ProblemSpec, u, bquad: Quadrature | None = None) -> np.ndarray:
    if not spec.is_limit:
        raise ModeError("boundary flux requested for a concentrated problem")
    bquad = boundary_quadrature(mesh) if bquad is None else bquad
    gu = _checked(spec.g.value(evaluate(mesh, bquad, u)), "g")
    return _load(mesh, bquad, gu)


def strip_derivative_matrix(mesh, spec, u, strip):
    """(1/eps) int_strip g'(u) phi_j phi_i."""
    dg = _checked(spec.g.d1(evaluate(mesh, strip, u)), "g'")
    return _weighted_mass(mesh, strip, dg) / strip.epsilon


def boundary_derivative_matrix(mesh, spec, u, bquad):
    dg = _checked(spec.g.d1(evaluate(mesh, bquad, u)), "g'")
    return _weighted_mass(mesh, bquad, dg)


def assemble_jacobian(mesh: Mesh, spec: ProblemSpec, u, quad=None, strip=None, bquad=None) -> sp.csr_matrix:
    """Matrix of the Frechet derivative of the nonlinear term at ``u``."""
    quad = interior_quadrature(mesh) if quad is None else quad
    df = _checked(spec.f.d1(evaluate(mesh, quad, u)), "f'")
    J = _weighted_mass(mesh, quad, df)
    if spec.is_limit:
        bquad = boundary_quadrature(mesh) if bquad is None else bquad
        J = J + boundary_derivative_matrix(mesh, spec, u, bquad)
    else:
        strip = strip_quadrature(mesh, spec.epsilon) if strip is None else strip
        J = J + strip_derivative_matrix(mesh, spec, u, strip)
    return J.tocsr()


# ---------------------------------------------------------------------------
# norms


def factorize(A):
    """Sparse LU of ``A``; raises :class:`SingularOperatorError` when it fails."""
    try:
        lu = spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:
        raise SingularOperatorError(str(exc)) from exc
    diag = np.abs(lu.U.diagonal())
    if diag.size and diag.min() <= 1e-14 * diag.max():
        raise SingularOperatorError("matrix is numerically singular")
    return lu


def dual_norm(r, A, lu=None) -> float:
    """sqrt(r^T A^{-1} r): the discrete (H^1)' norm induced by Lambda."""
    r = np.asarray(r, dtype=float)
    if not np.any(r):
        return 0.0
    lu = factorize(A) if lu is None else lu
    return math.sqrt(max(float(r @ lu.solve(r)), 0.0))


def h1_norm(u, A) -> float:
    u = np.asarray(u, dtype=float)
    return math.sqrt(max(float(u @ (A @ u)), 0.0))


def induced_norm(B, A, solve=None, tol=1e-6, max_iter=5000, seed=0) -> float:
    """Norm of ``B`` as a map from (R^n, A-norm) to its dual (A^{-1}-norm).

    Power iteration on A^{-1} B^T A^{-1} B, which is self-adjoint in the A inner
    product; the returned value is the square root of its top eigenvalue.
    ``solve`` applies A^{-1}; by default A is factorized here.
    """
    B = sp.csr_matrix(B)
    if B.nnz == 0 or not np.any(B.data):
        return 0.0
    solve = factorize(A).solve if solve is None else solve
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(A.shape[0])
    w /= h1_norm(w, A)
    prev = None
    lam = 0.0
    for _ in range(max_iter):
        y = solve(B @ w)
        lam = float((B @ w) @ y)  # w is A-normalised
        if prev is not None and abs(lam - prev) <= tol * abs(lam):
            return math.sqrt(max(lam, 0.0))
        prev = lam
        w = solve(B.T @ y)
        nrm = h1_norm(w, A)
        if nrm == 0.0:
            return 0.0
        w /= nrm
    raise ConvergenceError(f"power iteration did not settle in {max_iter} steps",
                           estimate=math.sqrt(max(lam, 0.0)))


def operator_gap(mesh: Mesh, spec: ProblemSpec, ustar, epsilon: float, A=None, lu=None,
                 tol=1e-6, max_iter=5000) -> float:
    """Norm of (1/eps) chi_strip g'(u*) - g'(u*)|_boundary from H^1 to the discrete dual."""
    A = assemble_lambda(mesh, spec) if A is None else A
    G = (strip_derivative_matrix(mesh, spec, ustar, strip_quadrature(mesh, epsilon))
         - boundary_derivative_matrix(mesh, spec, ustar, boundary_quadrature(mesh)))
    return induced_norm(G, A, None if lu is None else lu.solve, tol=tol, max_iter=max_iter)


# ---------------------------------------------------------------------------


class Discretization:
    """A mesh and problem with cached quadrature, Lambda, mass and factorization.

    The factorization cache is owned by the instance. :meth:`with_epsilon`
    derives a sibling for another strip width that shares the
    epsilon-independent parts.
    """

    def __init__(self, mesh: Mesh, spec: ProblemSpec, _shared=None):
        self.mesh = mesh
        self.spec = spec
        if _shared is None:
            quad = interior_quadrature(mesh)
            A = assemble_lambda(mesh, spec, quad)
            _shared = {
                "quad": quad,
                "bquad": boundary_quadrature(mesh),
                "A": A,
                "M": assemble_mass(mesh, quad),
                "lu": factorize(A),
                "strips": {},
                "lock": threading.Lock(),
            }
        self._shared = _shared

    def with_epsilon(self, epsilon: float | None) -> "Discretization":
        spec = self.spec.limit() if epsilon is None else self.spec.concentrated(epsilon)
        return Discretization(self.mesh, spec, self._shared)

    @property
    def epsilon(self):
        return self.spec.epsilon

    @property
    def quad(self) -> Quadrature:
        return self._shared["quad"]

    @property
    def bquad(self) -> Quadrature:
        return self._shared["bquad"]

    @property
    def A(self) -> sp.csr_matrix:
        return self._shared["A"]

    @property
    def M(self) -> sp.csr_matrix:
        return self._shared["M"]

    @property
    def lu(self):
        return self._shared["lu"]

    def strip(self, epsilon: float | None = None):
        eps = self.spec.epsilon if epsilon is None else float(epsilon)
        if eps is None:
            raise ModeError("limit problem has no strip")
        strips = self._shared["strips"]
        with self._shared["lock"]:
            if eps not in strips:
                strips[eps] = strip_quadrature(self.mesh, eps)
            return strips[eps]

    def zeros(self) -> np.ndarray:
        return np.zeros(self.mesh.n_nodes)

    def constant(self, c: float) -> np.ndarray:
        return np.full(self.mesh.n_nodes, float(c))

    def nonlinear(self, u) -> np.ndarray:
        """The dual vector F(u) for the current mode."""
        out = apply_f_interior(self.mesh, self.spec, u, self.quad)
        if self.spec.is_limit:
            return out + apply_g_boundary(self.mesh, self.spec, u, self.bquad)
        return out + apply_g_concentrated(self.mesh, self.spec, u, self.strip())

    def residual(self, u) -> np.ndarray:
        return self.A @ u - self.nonlinear(u)

    def residual_norm(self, u) -> float:
        return self.dual_norm(self.residual(u))

    def jacobian(self, u) -> sp.csr_matrix:
        strip = None if self.spec.is_limit else self.strip()
        return assemble_jacobian(self.mesh, self.spec, u, self.quad, strip, self.bquad)

    def solve_lambda(self, r) -> np.ndarray:
        # SuperLU handles are not safe for concurrent solves
        with self._shared["lock"]:
            return self.lu.solve(np.asarray(r, dtype=float))

    def dual_norm(self, r) -> float:
        r = np.asarray(r, dtype=float)
        if not np.any(r):
            return 0.0
        return math.sqrt(max(float(r @ self.solve_lambda(r)), 0.0))

    def h1_norm(self, u) -> float:
        return h1_norm(u, self.A)

    def h1_distance(self, u, v) -> float:
        return h1_norm(np.asarray(u) - np.asarray(v), self.A)

    def derivative_norm(self, ustar, tol=1e-6) -> float:
        """||DF(u*)|| from H^1 to the discrete dual."""
        return induced_norm(self.jacobian(ustar), self.A, self.solve_lambda, tol=tol)

    def operator_gap(self, ustar, epsilon: float | None = None, tol=1e-6) -> float:
        eps = self.spec.epsilon if epsilon is None else float(epsilon)
        if eps is None:
            raise ModeError("operator gap needs a strip width")
        G = (strip_derivative_matrix(self.mesh, self.spec, ustar, self.strip(eps))
             - boundary_derivative_matrix(self.mesh, self.spec, ustar, self.bquad))
        return induced_norm(G, self.A, self.solve_lambda, tol=tol)


# ---------------------------------------------------------------------------
# export


def write_matrix_market(A, path, comment="") -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment, precision=17)


def write_field_csv(mesh: Mesh, values, path, header_value="value") -> None:
    """One row per node: index, coordinate(s), value."""
    values = np.asarray(values, dtype=float)
    coords = ["x", "y"][: mesh.dimension]
    with open(path, "w") as fh:
        fh.write(",".join(["node", *coords, header_value]) + "\n")
        for i, (p, v) in enumerate(zip(mesh.nodes, values)):
            fh.write(",".join([str(i), *(repr(float(c)) for c in p), repr(float(v))]) + "\n")


def read_field_csv(path) -> np.ndarray:
    data = np.genfromtxt(path, delimiter=",", names=True)
    return np.asarray(data[data.dtype.names[-1]], dtype=float)
