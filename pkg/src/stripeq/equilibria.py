"""Equilibrium solvers: Picard, frozen-Jacobian chord iteration, Newton,
multi-start enumeration and continuation in the strip width.

All solvers work on a :class:`~stripeq.forms.Discretization` and measure
residuals in the discrete dual norm ``sqrt(r^T Lambda^{-1} r)`` and steps in
the H^1 norm ``sqrt(u^T Lambda u)``.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from stripeq.errors import (
    DivergenceError,
    DomainError,
    HyperbolicityError,
    SingularOperatorError,
)
from stripeq.forms import Discretization, factorize

log = logging.getLogger(__name__)

PICARD = "Picard"
CHORD_NEWTON = "ChordNewton"
NEWTON = "Newton"


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-10
    max_iter: int = 100
    delta: float = 0.5

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")
        if not self.delta > 0:
            raise ValueError("delta must be positive")


@dataclass
class EquilibriumRecord:
    u: np.ndarray
    epsilon: float | None
    residual: float
    iterations: int
    method: str
    contraction_estimates: list[float] = field(default_factory=list)
    converged: bool = True
    message: str = ""

    @property
    def is_limit(self) -> bool:
        return self.epsilon is None

    def to_dict(self, field_ref: str | None = None) -> dict:
        return {
            "epsilon": "limit" if self.epsilon is None else self.epsilon,
            "residual": self.residual,
            "iterations": self.iterations,
            "method": self.method,
            "converged": self.converged,
            "contraction_estimates": list(self.contraction_estimates),
            "message": self.message,
            "field": field_ref,
        }


def _ratios(steps):
    return [b / a for a, b in zip(steps[:-1], steps[1:]) if a > 0]


def picard_solve(disc: Discretization, u0, opts: SolveOptions = SolveOptions()) -> EquilibriumRecord:
    """Iterate u <- Lambda^{-1} F(u).

    Convergence is not guaranteed; a non-converged run returns the iterate
    with the smallest residual and ``converged=False``.
    """
    u = np.array(u0, dtype=float)
    res = disc.residual_norm(u)
    best_u, best_res = u, res
    steps = []
    it = 0
    while res > opts.tol and it < opts.max_iter:
        u_new = disc.solve_lambda(disc.nonlinear(u))
        steps.append(disc.h1_distance(u_new, u))
        u = u_new
        it += 1
        res = disc.residual_norm(u)
        if not math.isfinite(res):
            break
        if res < best_res:
            best_u, best_res = u, res
    ok = best_res <= opts.tol
    return EquilibriumRecord(best_u, disc.epsilon, best_res, it, PICARD, _ratios(steps), ok,
                             "" if ok else f"no convergence after {it} Picard steps")


def chord_newton_solve(disc: Discretization, u_anchor, u0, opts: SolveOptions = SolveOptions(),
                       jacobian=None) -> EquilibriumRecord:
    """Iterate u <- (Lambda - DF(anchor))^{-1} (F(u) - DF(anchor) u).

    The linearization is frozen at ``u_anchor`` (pass ``jacobian`` to freeze it
    at a matrix assembled elsewhere). Raises :class:`HyperbolicityError` when
    that linearization is singular and :class:`DivergenceError` when an
    iterate leaves the ball of radius ``2 delta`` around the anchor.
    """
    anchor = np.asarray(u_anchor, dtype=float)
    u = np.array(u0, dtype=float)
    if disc.h1_distance(u, anchor) > opts.delta:
        raise DomainError("start lies outside the delta-ball around the anchor")
    J = disc.jacobian(anchor) if jacobian is None else jacobian
    try:
        lu = factorize(disc.A - J)
    except SingularOperatorError as exc:
        raise HyperbolicityError(f"frozen linearization is singular: {exc}") from exc
    res = disc.residual_norm(u)
    steps = []
    it = 0
    while res > opts.tol and it < opts.max_iter:
        u_new = lu.solve(disc.nonlinear(u) - J @ u)
        steps.append(disc.h1_distance(u_new, u))
        u = u_new
        it += 1
        if disc.h1_distance(u, anchor) > 2 * opts.delta:
            raise DivergenceError(f"iterate left the 2*delta ball after {it} steps", iterate=u)
        res = disc.residual_norm(u)
    ok = res <= opts.tol
    return EquilibriumRecord(u, disc.epsilon, res, it, CHORD_NEWTON, _ratios(steps), ok,
                             "" if ok else f"no convergence after {it} chord steps")


def newton_solve(disc: Discretization, u0, opts: SolveOptions = SolveOptions()) -> EquilibriumRecord:
    """Newton's method on R(u) = Lambda u - F(u) with backtracking on ||R||."""
    u = np.array(u0, dtype=float)
    r = disc.residual(u)
    res = disc.dual_norm(r)
    steps = []
    it = 0
    while res > opts.tol and it < opts.max_iter:
        lu = factorize(disc.A - disc.jacobian(u))
        du = -lu.solve(r)
        t = 1.0
        while True:
            trial = u + t * du
            r_trial = disc.residual(trial)
            res_trial = disc.dual_norm(r_trial)
            if res_trial < (1 - 1e-4 * t) * res or t < 1e-4:
                break
            t *= 0.5
        steps.append(disc.h1_distance(trial, u))
        u, r, res = trial, r_trial, res_trial
        it += 1
    ok = res <= opts.tol
    return EquilibriumRecord(u, disc.epsilon, res, it, NEWTON, _ratios(steps), ok,
                             "" if ok else f"no convergence after {it} Newton steps")


def constant_starts(disc: Discretization, values, n_random: int = 0, amplitude: float = 0.1,
                    seed: int = 0) -> list[np.ndarray]:
    """Constant fields at ``values``, each followed by ``n_random`` perturbed copies."""
    rng = np.random.default_rng(seed)
    starts = []
    for v in values:
        base = disc.constant(v)
        starts.append(base)
        for _ in range(n_random):
            starts.append(base + amplitude * rng.standard_normal(base.shape))
    return starts


def _newton_or_none(disc, u0, opts):
    try:
        return newton_solve(disc, u0, opts)
    except SingularOperatorError as exc:
        log.info("start discarded, singular Jacobian: %s", exc)
        return None


def find_all_equilibria(disc: Discretization, starts, opts: SolveOptions = SolveOptions(),
                        cluster_radius: float | None = None, threads: int = 1) -> list[EquilibriumRecord]:
    """Newton from every start, then merge solutions closer than ``cluster_radius`` in H^1.

    Representatives are returned sorted by their mean value.
    """
    starts = list(starts)
    if not starts:
        raise DomainError("need at least one start")
    radius = 10 * opts.tol if cluster_radius is None else cluster_radius
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(lambda s: _newton_or_none(disc, s, opts), starts))
    else:
        records = [_newton_or_none(disc, s, opts) for s in starts]
    reps: list[EquilibriumRecord] = []
    for k, rec in enumerate(records):
        if rec is None or not rec.converged:
            log.info("start %d did not converge", k)
            continue
        if any(disc.h1_distance(rec.u, other.u) < radius for other in reps):
            continue
        reps.append(rec)
    reps.sort(key=lambda r: float(np.mean(r.u)))
    return reps


@dataclass
class Branch:
    """Equilibria following one limit equilibrium through the strip widths."""

    limit: EquilibriumRecord
    epsilons: list[float]
    records: list[EquilibriumRecord]
    distances: list[float]
    truncated: bool = False
    diagnostic: str = ""


def continue_in_epsilon(disc: Discretization, branch_start: EquilibriumRecord, eps_schedule,
                        opts: SolveOptions = SolveOptions(), anchor: str = "previous",
                        max_refinements: int = 4, check_hyperbolic: bool = True) -> Branch:
    """Follow a hyperbolic limit equilibrium into the concentrated problems.

    The path starts at the limit (epsilon = 0) and visits the schedule from the
    smallest width outwards. With ``anchor="previous"`` each chord solve is
    anchored at the last branch point; ``anchor="limit"`` anchors every solve
    at the limit equilibrium with DF_eps(u*_0). A failed step is retried after
    inserting the midpoint width, up to ``max_refinements`` times; beyond that
    the branch is truncated. Returned lists follow the schedule order.
    """
    from stripeq.spectral import is_hyperbolic

    if anchor not in ("previous", "limit"):
        raise ValueError("anchor must be 'previous' or 'limit'")
    if not branch_start.converged or not branch_start.is_limit:
        raise DomainError("branch must start from a converged limit equilibrium")
    schedule = [float(e) for e in eps_schedule]
    if any(b >= a for a, b in zip(schedule[:-1], schedule[1:])):
        raise DomainError("epsilon schedule must be strictly decreasing")
    limit_disc = disc.with_epsilon(None)
    if check_hyperbolic:
        hyp, report = is_hyperbolic(limit_disc, branch_start.u)
        if not hyp:
            raise HyperbolicityError(f"limit equilibrium not hyperbolic (margin {report.margin:.3g})")

    u_limit = branch_start.u
    prev_eps, prev_u = 0.0, u_limit
    solved: dict[float, EquilibriumRecord] = {}
    truncated, diagnostic = False, ""
    for eps in sorted(schedule):
        pending = [eps]
        refinements = 0
        while pending:
            e = pending[-1]
            d_e = disc.with_epsilon(e)
            try:
                if anchor == "previous":
                    rec = chord_newton_solve(d_e, prev_u, prev_u, opts)
                else:
                    rec = chord_newton_solve(d_e, u_limit, u_limit, opts,
                                             jacobian=d_e.jacobian(u_limit))
                if not rec.converged:
                    raise DivergenceError(rec.message)
            except (DivergenceError, DomainError) as exc:
                if refinements >= max_refinements:
                    truncated, diagnostic = True, f"eps={e:g}: {exc}"
                    break
                refinements += 1
                pending.append(0.5 * (prev_eps + e))
                continue
            pending.pop()
            prev_eps, prev_u = e, rec.u
        if truncated:
            break
        solved[eps] = rec

    epsilons = [e for e in schedule if e in solved]
    records = [solved[e] for e in epsilons]
    distances = [limit_disc.h1_distance(r.u, u_limit) for r in records]
    if truncated:
        log.warning("branch truncated: %s", diagnostic)
    return Branch(branch_start, epsilons, records, distances, truncated, diagnostic)
