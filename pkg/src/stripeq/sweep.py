"""Experiment harness: epsilon sweeps, equilibria counting, set semidistances.

A config is a single JSON document, e.g.::

    {
      "mesh": {"dimension": 1, "n": 1024},
      "problem": "analytic",
      "eps_schedule": [0.2, 0.1, 0.05, 0.025],
      "solver": {"tol": 1e-10, "max_iter": 100, "delta": 0.5},
      "starts": {"values": [-3, -1, 0, 1, 3], "n_random": 0, "amplitude": 0.1}
    }

``problem`` is a catalog name (see :data:`CATALOG`) or an object with keys
``f``, ``g`` (nonlinearity objects such as ``{"kind": "tanh", "c": 2}``) and an
optional coefficient ``a``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from stripeq import forms
from stripeq.equilibria import (
    SolveOptions,
    constant_starts,
    continue_in_epsilon,
    find_all_equilibria,
    newton_solve,
)
from stripeq.errors import DomainError
from stripeq.forms import Discretization, ProblemSpec, nonlinearity_from_dict
from stripeq.geometry import build_interval_mesh, build_rectangle_mesh
from stripeq.spectral import linearized_spectrum

log = logging.getLogger(__name__)

CATALOG = {
    "zero": {"f": {"kind": "zero"}, "g": {"kind": "zero"}},
    "analytic": {"f": {"kind": "zero"}, "g": {"kind": "constant", "c": 1.0}},
    "flux_tanh": {"f": {"kind": "zero"}, "g": {"kind": "tanh", "c": 1.0}},
    "bistable": {"f": {"kind": "tanh", "c": 2.0}, "g": {"kind": "zero"}},
    "bistable_flux": {"f": {"kind": "tanh", "c": 2.0}, "g": {"kind": "tanh", "c": 0.1}},
}

CSV_COLUMNS = ["eps", "dist_h1", "op_gap", "margin", "iters"]


def _coefficient(doc):
    """Coefficient ``a``: a number, or {"kind": "affine", "c0": .., "c1": [..]}."""
    if doc is None:
        return 1.0, 1.0, 1.0
    if isinstance(doc, (int, float)):
        return float(doc), float(doc), float(doc)
    if doc.get("kind") != "affine":
        raise ValueError(f"unknown coefficient kind {doc.get('kind')!r}")
    c0 = float(doc["c0"])
    c1 = np.asarray(doc["c1"], dtype=float)
    corners = [c0 + sum(c * v for c, v in zip(c1, bits)) for bits in np.ndindex(*(2,) * len(c1))]
    return (lambda p: c0 + p[:, : len(c1)] @ c1), min(corners), max(corners)


def problem_from_config(doc) -> ProblemSpec:
    if isinstance(doc, str):
        try:
            doc = CATALOG[doc]
        except KeyError:
            raise ValueError(f"unknown catalog entry {doc!r}") from None
    a, a0, a1 = _coefficient(doc.get("a"))
    return ProblemSpec(nonlinearity_from_dict(doc["f"]), nonlinearity_from_dict(doc["g"]), a, a0, a1)


def mesh_from_config(doc):
    dim = int(doc.get("dimension", 1))
    if dim == 1:
        return build_interval_mesh(int(doc["n"]))
    if dim == 2:
        return build_rectangle_mesh(int(doc["nx"]), int(doc.get("ny", doc["nx"])))
    raise ValueError(f"unsupported dimension {dim}")


@dataclass
class SweepConfig:
    mesh: dict
    problem: object
    eps_schedule: list[float]
    solver: SolveOptions = field(default_factory=SolveOptions)
    starts: dict = field(default_factory=lambda: {"values": [-3.0, -1.0, 0.0, 1.0, 3.0]})
    limit_start: float = 0.0
    anchor: str = "previous"
    spectrum_m: int = 6
    out: str | None = None
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        eps = [float(e) for e in self.eps_schedule]
        if not eps:
            raise DomainError("empty epsilon schedule")
        if any(e <= 0 for e in eps) or any(b >= a for a, b in zip(eps[:-1], eps[1:])):
            raise DomainError("epsilon schedule must be positive and strictly decreasing")
        if eps[0] >= 0.5:
            raise DomainError("strip widths must stay below half the unit domain")
        self.eps_schedule = eps

    @classmethod
    def from_dict(cls, doc: dict) -> "SweepConfig":
        doc = dict(doc)
        solver = SolveOptions(**doc.pop("solver", {}))
        known = {k: doc[k] for k in ("mesh", "problem", "eps_schedule", "starts", "limit_start",
                                     "anchor", "spectrum_m", "out", "seed", "threads") if k in doc}
        return cls(solver=solver, **known)

    @classmethod
    def from_json(cls, path) -> "SweepConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def build(self) -> Discretization:
        return Discretization(mesh_from_config(self.mesh), problem_from_config(self.problem))

    def start_fields(self, disc):
        s = self.starts
        return constant_starts(disc, s.get("values", [0.0]), int(s.get("n_random", 0)),
                               float(s.get("amplitude", 0.1)), seed=self.seed)


@dataclass
class SweepReport:
    kind: str
    rows: list[dict]
    semidistances: list[float] = field(default_factory=list)
    rates: dict = field(default_factory=dict)
    ok: bool = True
    failures: list[str] = field(default_factory=list)
    truncated: bool = False
    fields: dict = field(default_factory=dict, repr=False)
    records: dict = field(default_factory=dict, repr=False)

    def column(self, name):
        return [row[name] for row in self.rows]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "rows": self.rows,
            "semidistances": self.semidistances,
            "rates": self.rates,
            "ok": self.ok,
            "failures": self.failures,
            "truncated": self.truncated,
            "records": self.records,
        }


def semidistance(set_a, set_b, gram) -> float:
    """max_{a in A} min_{b in B} ||a - b||, the norm induced by ``gram``."""
    set_a, set_b = list(set_a), list(set_b)
    if not set_a or not set_b:
        raise DomainError("semidistance needs two nonempty sets")
    return max(min(forms.h1_norm(np.asarray(a) - np.asarray(b), gram) for b in set_b) for a in set_a)


def estimate_rate(pairs) -> float:
    """Least-squares slope of log(value) against log(eps)."""
    pairs = list(pairs)
    if len(pairs) < 3:
        raise DomainError("need at least three (eps, value) pairs")
    eps, val = np.array(pairs, dtype=float).T
    if np.any(val <= 0) or np.any(eps <= 0):
        raise DomainError("rate estimation needs positive values")
    return float(np.polyfit(np.log(eps), np.log(val), 1)[0])


def _safe_rate(eps, values):
    pairs = [(e, v) for e, v in zip(eps, values) if v > 0 and math.isfinite(v)]
    return estimate_rate(pairs) if len(pairs) >= 3 else None


def _solve_limit(config, disc):
    limit = disc.with_epsilon(None)
    rec = newton_solve(limit, limit.constant(config.limit_start), config.solver)
    if not rec.converged:
        raise DomainError(f"limit problem did not converge: {rec.message}")
    return limit, rec


def run_lower_semicontinuity_sweep(config: SweepConfig) -> SweepReport:
    """Follow one limit equilibrium through the schedule and tabulate the approach."""
    disc = config.build()
    limit, rec0 = _solve_limit(config, disc)
    branch = continue_in_epsilon(limit, rec0, config.eps_schedule, config.solver, anchor=config.anchor)
    rows = []
    fields = {"limit": rec0.u}
    records = {"limit": rec0.to_dict("fields/limit.csv")}
    for eps, rec, dist in zip(branch.epsilons, branch.records, branch.distances):
        d_eps = disc.with_epsilon(eps)
        spec = linearized_spectrum(d_eps, rec.u, m=config.spectrum_m)
        label = f"eps_{eps:g}"
        fields[label] = rec.u
        records[label] = {**rec.to_dict(f"fields/{label}.csv"), "spectrum": spec.to_dict()}
        rows.append({
            "eps": eps,
            "dist_h1": dist,
            "op_gap": limit.operator_gap(rec0.u, eps),
            "margin": spec.margin,
            "iters": rec.iterations,
            "residual": rec.residual,
            "hyperbolic": spec.hyperbolic,
        })
    eps = [r["eps"] for r in rows]
    rates = {"dist_h1": _safe_rate(eps, [r["dist_h1"] for r in rows]),
             "op_gap": _safe_rate(eps, [r["op_gap"] for r in rows])}
    failures = []
    if branch.truncated:
        failures.append(f"branch truncated: {branch.diagnostic}")
    dists = [r["dist_h1"] for r in rows]
    if dists and not (all(math.isfinite(d) for d in dists) and dists[-1] <= dists[0] + config.solver.tol * 10):
        failures.append("distance to the limit equilibrium did not decrease over the schedule")
    return SweepReport("sweep", rows, [], rates, not failures, failures, branch.truncated, fields, records)


def match_equilibria(eq_eps, eq_limit, gram, delta):
    """Optimal one-to-one assignment by H^1 distance; returns (pairs, distances, perfect)."""
    cost = np.array([[forms.h1_norm(a - b, gram) for b in eq_limit] for a in eq_eps])
    if cost.size == 0:
        return [], [], False
    rows, cols = linear_sum_assignment(cost)
    dists = cost[rows, cols]
    nearest_ok = all(int(np.argmin(cost[r])) == c for r, c in zip(rows, cols))
    perfect = (len(eq_eps) == len(eq_limit) and bool(np.all(dists <= delta)) and nearest_ok)
    return list(zip(rows.tolist(), cols.tolist())), dists.tolist(), perfect


def run_counting_experiment(config: SweepConfig) -> SweepReport:
    """Enumerate equilibria at the limit and at every scheduled width and match them."""
    disc = config.build()
    limit = disc.with_epsilon(None)
    starts = config.start_fields(disc)
    E0 = find_all_equilibria(limit, starts, config.solver, threads=config.threads)
    failures = []
    fields, records = {}, {}
    limit_margins = []
    for k, rec in enumerate(E0):
        spec = linearized_spectrum(limit, rec.u, m=config.spectrum_m)
        limit_margins.append(spec.margin)
        if not spec.hyperbolic:
            failures.append(f"limit equilibrium {k} is not hyperbolic")
        fields[f"limit_{k}"] = rec.u
        records[f"limit_{k}"] = {**rec.to_dict(f"fields/limit_{k}.csv"), "spectrum": spec.to_dict()}
    if not E0:
        raise DomainError("no limit equilibria found")
    k0 = len(E0)
    gaps = {eps: max(limit.operator_gap(r.u, eps) for r in E0) for eps in config.eps_schedule}

    def per_eps(eps):
        d_eps = disc.with_epsilon(eps)
        E = find_all_equilibria(d_eps, starts, config.solver)
        specs = [linearized_spectrum(d_eps, r.u, m=config.spectrum_m) for r in E]
        return eps, E, specs

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(per_eps, config.eps_schedule))
    else:
        results = [per_eps(e) for e in config.eps_schedule]

    rows, semis = [], []
    for eps, E, specs in results:
        pairs, dists, perfect = match_equilibria([r.u for r in E], [r.u for r in E0], limit.A,
                                                 config.solver.delta)
        up = semidistance([r.u for r in E], [r.u for r in E0], limit.A) if E else math.inf
        low = semidistance([r.u for r in E0], [r.u for r in E], limit.A) if E else math.inf
        semis.append(up)
        hyp = all(s.hyperbolic for s in specs)
        if len(E) != k0:
            failures.append(f"eps={eps:g}: found {len(E)} equilibria, expected {k0}")
        elif not perfect:
            failures.append(f"eps={eps:g}: no perfect matching within delta={config.solver.delta}")
        if not hyp:
            failures.append(f"eps={eps:g}: non-hyperbolic equilibrium")
        for j, (rec, spec) in enumerate(zip(E, specs)):
            label = f"eps_{eps:g}_{j}"
            fields[label] = rec.u
            records[label] = {**rec.to_dict(f"fields/{label}.csv"), "spectrum": spec.to_dict()}
        rows.append({
            "eps": eps,
            "dist_h1": max(dists) if dists else math.inf,
            "op_gap": gaps[eps],
            "margin": min((s.margin for s in specs), default=0.0),
            "iters": max((r.iterations for r in E), default=0),
            "count": len(E),
            "matched": perfect,
            "hyperbolic": hyp,
            "semidistance": up,
            "lower_semidistance": low,
            "pair_distances": [dists[i] for i in np.argsort([c for _, c in pairs])] if pairs else [],
        })
    rates = {"semidistance": _safe_rate(config.eps_schedule, semis)}
    return SweepReport("count", rows, semis, rates, not failures, failures, False, fields, records)


def write_report(report: SweepReport, out_dir, mesh) -> Path:
    """report.json, report.csv (one row per eps) and fields/<label>.csv."""
    out = Path(out_dir)
    (out / "fields").mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, default=_jsonable))
    extra = [k for k in (report.rows[0] if report.rows else {}) if k not in CSV_COLUMNS]
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS + extra)
        for row in report.rows:
            w.writerow([_csv_cell(row[c]) for c in CSV_COLUMNS + extra])
    for label, values in report.fields.items():
        forms.write_field_csv(mesh, values, out / "fields" / f"{label}.csv")
    return out


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ";".join(repr(float(x)) for x in v)
    return v


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")
