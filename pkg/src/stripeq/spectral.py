"""Low-lying spectrum of the linearization and hyperbolicity verdicts.

The linearization Lambda - DF(u*) is assembled from real multiplication
operators, so it is symmetric and its spectrum is real; the imaginary-axis
condition then reduces to "0 is not an eigenvalue". Eigenvalues are those of
the generalized problem (Lambda - DF(u*)) v = lam M v with M the L^2 mass
matrix, computed by block inverse iteration at shift 0 with Rayleigh-Ritz
projection.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg  # noqa: F401  (sp.linalg.norm)

from stripeq.errors import ConvergenceError, SingularOperatorError
from stripeq.forms import Discretization, factorize


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    residuals: np.ndarray
    hyperbolic: bool
    margin: float
    tolerance: float
    eigenvectors: np.ndarray | None = field(default=None, repr=False)
    singular: bool = False

    def to_dict(self) -> dict:
        return {
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "residuals": [float(x) for x in self.residuals],
            "hyperbolic": bool(self.hyperbolic),
            "margin": float(self.margin),
            "tolerance": float(self.tolerance),
            "singular": bool(self.singular),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def symmetry_defect(L) -> float:
    L = sp.csr_matrix(L)
    scale = abs(L).max()
    return float(abs(L - L.T).max() / scale) if scale else 0.0


def linearized_spectrum(disc: Discretization, ustar, m: int = 6, tol: float = 1e-10,
                        max_iter: int = 500, guard: int = 4, seed: int = 0,
                        hyperbolicity_tol: float | None = None) -> SpectrumReport:
    """The ``m`` eigenvalues of smallest magnitude of (Lambda - DF(u*)) v = lam M v.

    ``residuals`` are ||L v - lam M v|| / (||v|| (||L|| + |lam| ||M||)), matrix
    norms taken in the infinity norm. A linearization that is singular at
    shift 0 yields margin 0 and ``hyperbolic=False``; stagnation raises
    :class:`ConvergenceError` with the partial report attached as ``estimate``.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    L = (disc.A - disc.jacobian(ustar)).tocsr()
    if symmetry_defect(L) > 1e-12:
        raise ValueError("linearization is not symmetric")
    M = disc.M
    n = L.shape[0]
    m = min(m, n)
    try:
        lu = factorize(L)
    except SingularOperatorError:
        return SpectrumReport(np.zeros(1), np.zeros(1), False, 0.0, 0.0, singular=True)

    normL = sp.linalg.norm(L, np.inf)
    normM = sp.linalg.norm(M, np.inf)
    p = min(m + guard, n)
    rng = np.random.default_rng(seed)
    V = rng.standard_normal((n, p))
    theta = res = S = None
    for _ in range(max_iter):
        W = lu.solve(M @ V)
        W, _r = np.linalg.qr(W)
        LW, MW = L @ W, M @ W
        Lr = W.T @ LW
        Mr = W.T @ MW
        theta, S = scipy.linalg.eigh(0.5 * (Lr + Lr.T), 0.5 * (Mr + Mr.T))
        order = np.argsort(np.abs(theta))
        theta, S = theta[order], S[:, order]
        V = W @ S
        R = LW @ S - (MW @ S) * theta
        denom = np.linalg.norm(V, axis=0) * (normL + np.abs(theta) * normM)
        res = np.linalg.norm(R, axis=0) / denom
        if np.all(res[:m] <= tol):
            break
    else:
        partial = _report(theta[:m], res[:m], V[:, :m], hyperbolicity_tol)
        raise ConvergenceError(f"eigensolver stagnated after {max_iter} sweeps", estimate=partial)
    return _report(theta[:m], res[:m], V[:, :m], hyperbolicity_tol)


def _report(eigs, res, vecs, hyperbolicity_tol):
    margin = float(np.min(np.abs(eigs)))
    tol = 1e-6 * float(np.max(np.abs(eigs))) if hyperbolicity_tol is None else hyperbolicity_tol
    return SpectrumReport(np.asarray(eigs), np.asarray(res), margin > tol, margin, tol, vecs)


def is_hyperbolic(disc: Discretization, ustar, tol: float | None = None, m: int = 6):
    """(verdict, report): true iff the smallest computed |lam| exceeds ``tol``.

    The default ``tol`` is 1e-6 times the largest computed |lam|.
    """
    report = linearized_spectrum(disc, ustar, m=m, hyperbolicity_tol=tol)
    return report.hyperbolic, report
