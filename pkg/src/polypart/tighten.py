"""Sequential bound contraction for variables in product terms.

Each round solves, for every continuous variable appearing in a product
term, one MILP minimizing and one maximizing that variable over the
relaxation of the model, augmented with an objective cutoff at the best
known feasible solution.  The relaxation uses plain McCormick envelopes in
``cp`` mode, or piecewise envelopes with at most three partitions centered
on the incumbent in ``tcp`` mode.  Bounds update only between rounds, so
serial and parallel executions produce identical trajectories; the loop
runs while both the lower- and upper-bound vectors still move more than the
configured tolerance in L2 norm.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .milp import MilpProblem, solve_milp
from .model import Incumbent, Model, ModelError, with_bounds
from .relaxation import (MIN_PARTITION_GAP, PartitionMap, build_relaxation)
from .simplex import LinearProgram

CP = "cp"
TCP = "tcp"


class TightenError(RuntimeError):
    pass


@dataclass(frozen=True)
class TightenConfig:
    tol: float = 0.01              # L2 bound-movement convergence threshold
    mode: str = CP
    per_solve_time_limit: float | None = None
    parallel_width: int = 1
    delta: float = 4.0             # partition sizing for tcp mode

    def __post_init__(self):
        if not self.tol > 0:
            raise ModelError("tol must be positive")
        if self.mode not in (CP, TCP):
            raise ModelError(f"unknown tightening mode {self.mode!r}")
        if self.parallel_width < 1:
            raise ModelError("parallel_width must be at least 1")


@dataclass
class TightenReport:
    mode: str
    rounds: int
    variables: list                  # tightened variable indices, ascending
    lower: dict                      # final lower bounds per variable
    upper: dict                      # final upper bounds per variable
    original_lower: dict
    original_upper: dict
    trajectory: list                 # per round: {var: (lo, hi)}
    elapsed: list                    # seconds per round
    trace: list                      # per-solve records for reporting
    bc_percent: float
    bc_is_infinite: bool
    binaries_added: int = 0
    selector_counts: dict = field(default_factory=dict)

    def tightened_model(self, model: Model) -> Model:
        return with_bounds(model, self.lower, self.upper)


def make_tcp_pmap(incumbent_value: float, bounds: tuple,
                  delta: float) -> PartitionMap:
    """Three-or-fewer partitions over ``bounds`` centered on the incumbent.

    The inner partition has half-width (upper-lower)/delta, clipped to the
    domain; clipping against one bound leaves two partitions, an inner
    interval covering the whole domain leaves one.
    """
    lo, hi = float(bounds[0]), float(bounds[1])
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ModelError("tightening requires finite bounds")
    if hi - lo < MIN_PARTITION_GAP:
        return PartitionMap((lo, hi))
    half = (hi - lo) / delta
    x = min(max(float(incumbent_value), lo), hi)
    inner_lo = max(lo, x - half)
    inner_hi = min(hi, x + half)
    points = [lo]
    for p in (inner_lo, inner_hi, hi):
        if p - points[-1] >= MIN_PARTITION_GAP:
            points.append(p)
    if points[-1] != hi:
        points[-1] = hi
    pm = PartitionMap(tuple(points))
    return pm.with_active(pm.locate(x))


def _round_pmaps(model: Model, scope: list, incumbent: Incumbent,
                 cfg: TightenConfig) -> dict:
    pmaps = {}
    for i in scope:
        v = model.variables[i]
        if cfg.mode == TCP:
            pmaps[i] = make_tcp_pmap(incumbent.point[i], (v.lower, v.upper), cfg.delta)
        else:
            pmaps[i] = PartitionMap.single(v.lower, v.upper)
    return pmaps


def tighten_bounds(model: Model, incumbent: Incumbent, cfg: TightenConfig,
                   deadline: float | None = None) -> TightenReport:
    """Contract the bounds of every continuous variable in a product term.

    ``deadline`` is an optional :func:`time.monotonic` timestamp checked at
    round boundaries; on expiry the current (still valid) bounds are kept.
    """
    if not model.is_normalized():
        raise ModelError("tighten_bounds needs a normalized model")
    incumbent.validated(model)
    scope = model.term_variables()
    report = TightenReport(
        mode=cfg.mode, rounds=0, variables=list(scope),
        lower={i: model.variables[i].lower for i in scope},
        upper={i: model.variables[i].upper for i in scope},
        original_lower={i: model.variables[i].lower for i in scope},
        original_upper={i: model.variables[i].upper for i in scope},
        trajectory=[], elapsed=[], trace=[],
        bc_percent=0.0, bc_is_infinite=False,
    )
    if not scope:
        return report

    def vec(d: dict) -> np.ndarray:
        return np.array([d[i] for i in scope], dtype=float)

    prev_lo = np.zeros(len(scope))
    prev_hi = np.zeros(len(scope))
    while (np.linalg.norm(vec(report.lower) - prev_lo) > cfg.tol and
           np.linalg.norm(vec(report.upper) - prev_hi) > cfg.tol):
        if deadline is not None and time.monotonic() >= deadline:
            break
        prev_lo = vec(report.lower)
        prev_hi = vec(report.upper)
        t0 = time.monotonic()
        _run_round(model, incumbent, cfg, scope, report)
        report.elapsed.append(time.monotonic() - t0)
        report.rounds += 1
        report.trajectory.append(
            {i: (report.lower[i], report.upper[i]) for i in scope})
        for i in scope:
            # the incumbent stays feasible for every cutoff subproblem
            if not report.lower[i] - 1e-6 <= incumbent.point[i] <= report.upper[i] + 1e-6:
                raise TightenError(
                    f"incumbent left the tightened interval of "
                    f"{model.variables[i].name!r}; inconsistent certificate")

    from .driver import bc_percent  # deferred: driver imports this module
    bc, flagged = bc_percent(vec(report.original_lower), vec(report.original_upper),
                             vec(report.lower), vec(report.upper))
    report.bc_percent = bc
    report.bc_is_infinite = flagged
    return report


def _run_round(model: Model, incumbent: Incumbent, cfg: TightenConfig,
               scope: list, report: TightenReport) -> None:
    current = with_bounds(model, report.lower, report.upper)
    cutoff = Model(
        variables=list(current.variables),
        constraints=list(current.constraints),
        objective=dict(current.objective),
        terms=list(current.terms),
        reference_optimum=current.reference_optimum,
    )
    cutoff.add_constraint("_cutoff", dict(current.objective), "<=",
                          float(incumbent.objective_value))
    pmaps = _round_pmaps(cutoff, scope, incumbent, cfg)
    rmilp = build_relaxation(cutoff, pmaps, "dtmc")
    report.binaries_added = rmilp.binaries_added
    report.selector_counts = {
        model.variables[c].name: len(cols)
        for c, cols in rmilp.selector_map.items()}
    base = rmilp.problem.lp
    lifted = rmilp.lift_point(incumbent.point)

    jobs = [(i, sense) for i in scope for sense in ("min", "max")]

    def run(job):
        i, sense = job
        t0 = time.monotonic()
        c = np.zeros(base.n_cols)
        c[i] = 1.0 if sense == "min" else -1.0
        lp = LinearProgram(c=c, A=base.A, relations=base.relations, b=base.b,
                           lower=base.lower, upper=base.upper, names=base.names)
        prob = MilpProblem(lp, rmilp.problem.integrality, rmilp.problem.cut_callback)
        sol = solve_milp(prob, time_limit=cfg.per_solve_time_limit,
                         initial=(lifted, float(c @ lifted)))
        return i, sense, sol, time.monotonic() - t0

    if cfg.parallel_width > 1:
        with ThreadPoolExecutor(max_workers=cfg.parallel_width) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    staged = {}
    for i, sense, sol, seconds in results:
        if sol.status == "infeasible":
            raise TightenError(
                f"subproblem {sense} {model.variables[i].name!r} is infeasible "
                f"although the incumbent satisfies the cutoff; "
                f"inconsistent certificate")
        # a timed-out solve still yields a valid one-sided bound
        value = sol.best_bound if sol.status == "time_limit" else sol.objective
        lo, hi = staged.get(i, (None, None))
        if sense == "min":
            staged[i] = (value, hi)
        else:
            staged[i] = (lo, -value)
        report.trace.append({
            "round": report.rounds + 1,
            "variable": model.variables[i].name,
            "sense": sense,
            "value": value if np.isfinite(value) else None,
            "seconds": seconds,
        })

    # barrier: apply all updates together, never widening; numerical noise
    # must never push the incumbent outside its own cutoff region
    for i in scope:
        new_lo, new_hi = staged[i]
        old_lo, old_hi = report.lower[i], report.upper[i]
        lo = old_lo if new_lo is None or not np.isfinite(new_lo) else max(old_lo, new_lo)
        hi = old_hi if new_hi is None or not np.isfinite(new_hi) else min(old_hi, new_hi)
        inc = float(incumbent.point[i])
        lo, hi = min(lo, inc), max(hi, inc)
        report.lower[i] = lo
        report.upper[i] = hi
