"""End-to-end solve orchestration.

A solve acquires a feasible incumbent, optionally contracts variable bounds,
then iterates: refine the partition maps around the last relaxation solution,
rebuild and solve the relaxation MILP, and record the lower bound.  The loop
stops when (a) the normalized bound improvement stays below the improvement
tolerance twice in a row, (b) the solution stays in the same partitions and
every active partition is at most the minimum partition length (also when a
refinement pass changes nothing, which freezes the relaxation), or (c) the
wall-time budget runs out.  A run is labeled a proven global optimum only
against a supplied reference objective, never by self-certification.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .dynpart import RefineConfig, locate_active, refine
from .milp import solve_milp
from .model import (BINARY, CONTINUOUS, Incumbent, Model, ModelError,
                    inline_expr, normalize, with_bounds)
from .relaxation import PartitionMap, build_relaxation
from .tighten import CP, TCP, TightenConfig, TightenReport, tighten_bounds

MODES = ("mc", "utmc", "dtmc", "cp-dtmc", "tcp-dtmc")

STATUS_GLOBAL = "global_optimum"
STATUS_TIME = "time_limit"
STATUS_CONVERGED = "converged_partition"

GOPT_GAP_PERCENT = 1e-4  # proven-optimal label: bound within 0.0001 percent


class NoIncumbentError(RuntimeError):
    """No feasible point was found within the search budget."""


class ModelInfeasibleError(RuntimeError):
    """The relaxation MILP is infeasible, hence so is the model."""


# ----------------------------------------------------------------------
# reported metrics
# ----------------------------------------------------------------------

def gap_percent(opt_value: float, lower_bound: float) -> tuple:
    """Relative bound gap in percent: (opt - lb) / lb * 100.

    Returns ``(value, is_absolute)``; with a zero lower bound the relative
    form is undefined and the absolute difference is returned, flagged.
    """
    if abs(lower_bound) < 1e-12:
        return abs(float(opt_value) - float(lower_bound)), True
    return (float(opt_value) - float(lower_bound)) / float(lower_bound) * 100.0, False


def bc_percent(x_lo_orig, x_hi_orig, x_lo, x_hi) -> tuple:
    """Relative L2 reduction of the bound-width vector, in percent.

    Returns ``(value, is_infinite)``; a zero tightened width flags infinity.
    """
    w_orig = np.asarray(x_hi_orig, dtype=float) - np.asarray(x_lo_orig, dtype=float)
    w_new = np.asarray(x_hi, dtype=float) - np.asarray(x_lo, dtype=float)
    norm_orig = float(np.linalg.norm(w_orig))
    norm_new = float(np.linalg.norm(w_new))
    if norm_new == 0.0:
        return float("inf"), True
    return (norm_orig - norm_new) / norm_new * 100.0, False


# ----------------------------------------------------------------------
# incumbent search
# ----------------------------------------------------------------------

def _poly_in_coordinate(expr: dict, i: int, point: np.ndarray) -> np.ndarray:
    """Coefficients (ascending) of ``expr`` as a polynomial in variable i."""
    coefs = np.zeros(1)
    for key, coef in expr.items():
        p = sum(1 for j in key if j == i)
        rest = coef
        for j in key:
            if j != i:
                rest *= point[j]
        if p >= coefs.size:
            coefs = np.concatenate([coefs, np.zeros(p + 1 - coefs.size)])
        coefs[p] += rest
    return coefs


def _poly_eval(coefs: np.ndarray, x: float) -> float:
    return float(np.polynomial.polynomial.polyval(x, coefs))


def _row_intervals(coefs: np.ndarray, relation: str, rhs: float,
                   lo: float, hi: float) -> list:
    """Sub-intervals of [lo, hi] where ``poly(x) relation rhs`` holds."""
    g = coefs.copy()
    g[0] -= rhs
    deg = int(np.max(np.nonzero(g)[0])) if np.any(g) else 0
    if deg == 0:
        val = g[0]
        ok = (val <= 1e-9) if relation == "<=" else \
             (val >= -1e-9) if relation == ">=" else (abs(val) <= 1e-9)
        return [(lo, hi)] if ok else []
    roots = np.polynomial.polynomial.polyroots(g[: deg + 1])
    real = sorted(float(r.real) for r in roots
                  if abs(r.imag) < 1e-9 and lo - 1e-12 <= r.real <= hi + 1e-12)
    if relation == "=":
        return [(min(max(r, lo), hi),) * 2 for r in real]
    pts = [lo] + [r for r in real if lo < r < hi] + [hi]
    out = []
    for a, b in zip(pts[:-1], pts[1:]):
        mid = 0.5 * (a + b)
        val = _poly_eval(g, mid)
        if (relation == "<=" and val <= 1e-9) or (relation == ">=" and val >= -1e-9):
            if out and abs(out[-1][1] - a) < 1e-12:
                out[-1] = (out[-1][0], b)
            else:
                out.append((a, b))
    return out


def _intersect(current: list, new: list) -> list:
    out = []
    for a1, b1 in current:
        for a2, b2 in new:
            lo, hi = max(a1, a2), min(b1, b2)
            if lo <= hi + 1e-12:
                out.append((lo, min(hi, max(lo, hi))))
    return [(a, max(a, b)) for a, b in out if a <= b + 1e-12]


def _coordinate_step(rows, obj_expr, i, point, lo, hi):
    feas = [(lo, hi)]
    for expr, rel, rhs in rows:
        coefs = _poly_in_coordinate(expr, i, point)
        if coefs.size <= 1 and len(coefs) == 1:
            continue  # row does not involve this coordinate
        feas = _intersect(feas, _row_intervals(coefs, rel, rhs, lo, hi))
        if not feas:
            break
    if not feas:
        # infeasible slice: descend on total violation over a coarse grid
        grid = np.linspace(lo, hi, 33)
        best_x, best_v = point[i], np.inf
        for x in grid:
            point[i] = x
            v = 0.0
            for expr, rel, rhs in rows:
                val = 0.0
                for key, coef in expr.items():
                    prod = coef
                    for j in key:
                        prod *= point[j]
                    val += prod
                if rel == "<=":
                    v += max(0.0, val - rhs)
                elif rel == ">=":
                    v += max(0.0, rhs - val)
                else:
                    v += abs(val - rhs)
            if v < best_v - 1e-15:
                best_v, best_x = v, x
        point[i] = best_x
        return False
    obj_coefs = _poly_in_coordinate(obj_expr, i, point)
    candidates = []
    for a, b in feas:
        candidates.extend([a, b])
        if obj_coefs.size > 2:
            dcoefs = np.polynomial.polynomial.polyder(obj_coefs)
            for r in np.polynomial.polynomial.polyroots(dcoefs):
                if abs(r.imag) < 1e-9 and a < r.real < b:
                    candidates.append(float(r.real))
        if a <= point[i] <= b:
            candidates.append(point[i])
    if obj_coefs.size <= 1:
        # objective-neutral coordinate: take the center of the widest slice
        a, b = max(feas, key=lambda ab: ab[1] - ab[0])
        point[i] = 0.5 * (a + b)
        return True
    best_x = min(candidates, key=lambda x: (_poly_eval(obj_coefs, x), x))
    point[i] = float(best_x)
    return True


def _substitute_fixed(expr: dict, fixed: dict) -> dict:
    """Partially evaluate an expression over a set of fixed variables."""
    out: dict = {}
    for key, coef in expr.items():
        rest = []
        for j in key:
            if j in fixed:
                coef *= fixed[j]
            else:
                rest.append(j)
        k = tuple(rest)
        out[k] = out.get(k, 0.0) + coef
    return out


def _nlp_functions(expr: dict, pos: dict):
    """Value and gradient callables over the free continuous coordinates."""
    terms = [(coef, tuple(pos[j] for j in key)) for key, coef in expr.items()]
    n = len(pos)

    def value(x: np.ndarray) -> float:
        total = 0.0
        for coef, key in terms:
            prod = coef
            for j in key:
                prod *= x[j]
            total += prod
        return total

    def grad(x: np.ndarray) -> np.ndarray:
        g = np.zeros(n)
        for coef, key in terms:
            for spot in range(len(key)):
                prod = coef
                for t, j in enumerate(key):
                    if t != spot:
                        prod *= x[j]
                g[key[spot]] += prod
        return g

    return value, grad


def _nlp_polish(rows, obj_expr, fixed: dict, pos: dict, lo, hi, x0):
    """One smooth local-solver descent with the binaries held fixed."""
    from scipy.optimize import minimize

    fobj, gobj = _nlp_functions(_substitute_fixed(obj_expr, fixed), pos)
    constraints = []
    for expr, rel, rhs in rows:
        f, g = _nlp_functions(_substitute_fixed(expr, fixed), pos)
        if rel == "<=":
            constraints.append({"type": "ineq",
                                "fun": (lambda f=f, r=rhs: lambda x: r - f(x))(),
                                "jac": (lambda g=g: lambda x: -g(x))()})
        elif rel == ">=":
            constraints.append({"type": "ineq",
                                "fun": (lambda f=f, r=rhs: lambda x: f(x) - r)(),
                                "jac": (lambda g=g: lambda x: g(x))()})
        else:
            constraints.append({"type": "eq",
                                "fun": (lambda f=f, r=rhs: lambda x: f(x) - r)(),
                                "jac": (lambda g=g: lambda x: g(x))()})
    try:
        res = minimize(fobj, x0, jac=gobj, method="SLSQP",
                       bounds=list(zip(lo, hi)), constraints=constraints,
                       options={"maxiter": 150, "ftol": 1e-12})
    except (ValueError, OverflowError):
        return None
    if res.x is None or not np.all(np.isfinite(res.x)):
        return None
    return np.clip(res.x, lo, hi)


def find_incumbent(model: Model, seed: int = 0, budget: int = 200,
                   sweeps: int = 10, feas_tol: float = 1e-6) -> Incumbent:
    """Multistart feasible-point search.

    Binary assignments are enumerated when few, sampled otherwise; for each
    start, the continuous variables take turns moving to the objective-best
    value of their exact one-dimensional feasible slice (with the objective
    and constraints restricted to that coordinate), then the point is
    polished by a smooth local solver with the binaries held fixed.  The
    best feasible objective wins.
    """
    if not model.is_normalized():
        model = normalize(model)
    rng = np.random.default_rng(seed)
    orig = model.original_indices()
    cont = [i for i in orig if model.variables[i].kind == CONTINUOUS]
    bins = [i for i in orig if model.variables[i].kind == BINARY]
    rows = [(inline_expr(model, c.expr), c.relation, c.rhs) for c in model.constraints]
    obj_expr = inline_expr(model, model.objective)
    lo = np.array([model.variables[i].lower for i in cont])
    hi = np.array([model.variables[i].upper for i in cont])
    pos = {i: k for k, i in enumerate(cont)}

    if bins and 2 ** len(bins) <= max(budget, 16):
        assignments = [np.array(bits, dtype=float)
                       for bits in itertools.product((0.0, 1.0), repeat=len(bins))]
    elif bins:
        assignments = [np.round(rng.random(len(bins)))
                       for _ in range(max(1, budget // 8))]
    else:
        assignments = [np.zeros(0)]

    best_point = None
    best_obj = np.inf

    def consider(values: np.ndarray, assign: np.ndarray):
        nonlocal best_point, best_obj
        filled = {i: float(v) for i, v in zip(cont, values)}
        filled.update({b: float(v) for b, v in zip(bins, assign)})
        full = model.complete_point(filled)
        if model.check_feasible(full, feas_tol):
            obj = model.eval_expr(model.objective, full)
            if obj < best_obj - 1e-12:
                best_obj = obj
                best_point = full

    for trial in range(budget):
        assign = assignments[trial % len(assignments)]
        point = np.zeros(model.n_vars)
        for b, val in zip(bins, assign):
            point[b] = val
        if trial == 0 and cont:
            start = 0.5 * (lo + hi)
        else:
            start = rng.uniform(lo, hi) if cont else np.zeros(0)
        for i, val in zip(cont, start):
            point[i] = val
        order = sorted(cont, key=lambda i: (-abs(obj_expr.get((i,), 0.0)), i))
        for _ in range(sweeps):
            before = point[cont].copy() if cont else np.zeros(0)
            for i in order:
                ci = pos[i]
                _coordinate_step(rows, obj_expr, i, point, lo[ci], hi[ci])
            if cont and np.max(np.abs(point[cont] - before)) < 1e-10:
                break
        if cont:
            consider(point[cont], assign)
            fixed = {b: float(v) for b, v in zip(bins, assign)}
            polished = _nlp_polish(rows, obj_expr, fixed, pos, lo, hi, point[cont])
            if polished is not None:
                consider(polished, assign)
        else:
            consider(np.zeros(0), assign)
    if best_point is None:
        raise NoIncumbentError(
            f"no feasible point found in {budget} starts; supply one explicitly")
    return Incumbent(point=best_point, objective_value=float(best_obj))


# ----------------------------------------------------------------------
# configuration and reporting
# ----------------------------------------------------------------------

@dataclass
class SolverConfig:
    mode: str = "cp-dtmc"
    delta: float = 4.0
    utmc_n: int = 10
    tol_imp: float = 0.001          # percent improvement threshold
    time_limit: float = 3600.0
    eps: float = 0.001              # minimum partition length
    seed: int = 0
    incumbent_budget: int = 200
    bt_tol: float = 0.01            # bound-tightening movement tolerance
    bt_time_limit: float | None = None
    jobs: int = 1                   # parallel width for tightening solves
    partition_single: bool = False  # partition one variable per term
    max_iterations: int | None = None
    feas_tol: float = 1e-6

    def __post_init__(self):
        self.mode = self.mode.lower()
        if self.mode not in MODES:
            raise ModelError(f"unknown mode {self.mode!r}; choose from {MODES}")

    def tighten_config(self) -> TightenConfig:
        return TightenConfig(
            tol=self.bt_tol,
            mode=TCP if self.mode == "tcp-dtmc" else CP,
            per_solve_time_limit=self.bt_time_limit,
            parallel_width=self.jobs,
            delta=self.delta,
        )


@dataclass
class SolveReport:
    instance: str
    mode: str
    status: str
    stop_reason: str
    lower_bound: float
    upper_bound: float
    gap_percent: float | None
    gap_basis: str
    gap_is_absolute: bool
    bc_percent: float
    bc_is_infinite: bool
    binaries_added: int
    iterations: int
    lower_bound_trajectory: list
    binaries_trajectory: list
    reference_optimum: float | None
    seed: int
    delta: float | None
    utmc_n: int | None
    solution: dict
    tighten_rounds: int
    tightened_bounds: dict
    times: dict

    TIME_FIELDS = ("times",)

    def as_dict(self, include_times: bool = True) -> dict:
        d = asdict(self)
        if not include_times:
            for key in self.TIME_FIELDS:
                d.pop(key, None)
        return d

    def to_json(self, include_times: bool = True) -> str:
        return json.dumps(self.as_dict(include_times), sort_keys=True, indent=2)


# ----------------------------------------------------------------------
# the solve loop
# ----------------------------------------------------------------------

def _partitioned_variables(model: Model, single_per_term: bool) -> list:
    term_vars = model.term_variables()
    if not single_per_term:
        return term_vars
    aux = model.aux_indices()
    counts: dict = {}
    flat_keys = []
    for t in model.terms:
        key = inline_expr(model, {t.key: 1.0})
        (flat,) = key.keys()
        members = sorted({i for i in flat
                          if i not in aux and model.variables[i].kind == CONTINUOUS})
        flat_keys.append(members)
        for i in members:
            counts[i] = counts.get(i, 0) + 1
    chosen: set = set()
    for members in flat_keys:
        if not members:
            continue
        best = max(members, key=lambda i: (counts[i], -i))
        chosen.add(best)
    return sorted(chosen)


def solve(model: Model, cfg: SolverConfig, incumbent: Incumbent | None = None,
          instance_name: str = "") -> SolveReport:
    """Run the configured two-stage scheme on a model."""
    t_start = time.monotonic()
    deadline = t_start + cfg.time_limit
    if not model.is_normalized():
        model = normalize(model)

    t0 = time.monotonic()
    if incumbent is None:
        incumbent = find_incumbent(model, seed=cfg.seed, budget=cfg.incumbent_budget,
                                   feas_tol=cfg.feas_tol)
    else:
        incumbent = incumbent.validated(model, cfg.feas_tol)
    t_incumbent = time.monotonic() - t0

    # stage 1: bound contraction
    t0 = time.monotonic()
    tighten_report: TightenReport | None = None
    current = model
    if cfg.mode in ("cp-dtmc", "tcp-dtmc"):
        tighten_report = tighten_bounds(model, incumbent, cfg.tighten_config(),
                                        deadline=deadline)
        current = tighten_report.tightened_model(model)
    t_tighten = time.monotonic() - t0

    partitioned = _partitioned_variables(current, cfg.partition_single)
    all_term_vars = current.term_variables()

    def full_pmaps(refinable: dict) -> dict:
        out = {}
        for i in all_term_vars:
            if i in refinable:
                out[i] = refinable[i]
            else:
                v = current.variables[i]
                out[i] = PartitionMap.single(v.lower, v.upper)
        return out

    # stage 2
    t0 = time.monotonic()
    trajectory: list = []
    binaries_traj: list = []
    status = STATUS_CONVERGED
    stop_reason = "partition"
    iterations = 0
    lb = -np.inf
    binaries_added = 0
    x_star = {i: float(incumbent.point[i]) for i in partitioned}
    solution_point: np.ndarray | None = None

    if cfg.mode in ("mc", "utmc"):
        if cfg.mode == "mc":
            refinable = {i: PartitionMap.single(current.variables[i].lower,
                                                current.variables[i].upper)
                         for i in partitioned}
            mode_label = "mc"
        else:
            refinable = {i: PartitionMap.uniform(current.variables[i].lower,
                                                 current.variables[i].upper,
                                                 cfg.utmc_n)
                         for i in partitioned}
            mode_label = "utmc"
        rmilp = build_relaxation(current, full_pmaps(refinable), mode_label)
        budget = max(0.0, deadline - time.monotonic())
        sol = solve_milp(rmilp.problem, time_limit=budget)
        if sol.status == "infeasible":
            raise ModelInfeasibleError("the relaxation is infeasible, so is the model")
        bound = (sol.objective if sol.status == "optimal" else sol.best_bound)
        lb = bound + rmilp.obj_offset
        trajectory.append(lb)
        binaries_added = rmilp.binaries_added
        binaries_traj.append(binaries_added)
        iterations = 1
        solution_point = sol.x
        stop_reason = "single_relaxation" if sol.status == "optimal" else "time"
        if sol.status != "optimal":
            status = STATUS_TIME
    else:
        refinable = {i: PartitionMap.single(current.variables[i].lower,
                                            current.variables[i].upper)
                     for i in partitioned}
        rcfg = RefineConfig(delta=cfg.delta, eps=cfg.eps)
        below_count = 0
        prev_actives: dict | None = None
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                status, stop_reason = STATUS_TIME, "time"
                break
            refinable, refined_any = refine(refinable, x_star, rcfg)
            rmilp = build_relaxation(current, full_pmaps(refinable), "dtmc")
            sol = solve_milp(rmilp.problem, time_limit=remaining)
            if sol.status == "infeasible":
                raise ModelInfeasibleError(
                    "the relaxation is infeasible, so is the model")
            lb_prev = lb
            bound = (sol.objective if sol.status == "optimal" else sol.best_bound)
            lb = max(lb, bound + rmilp.obj_offset)
            trajectory.append(lb)
            binaries_added = rmilp.binaries_added
            binaries_traj.append(binaries_added)
            iterations += 1
            if sol.x is not None:
                solution_point = sol.x
                for i in partitioned:
                    v = current.variables[i]
                    x_star[i] = float(min(max(sol.x[i], v.lower), v.upper))
            if sol.status == "time_limit":
                status, stop_reason = STATUS_TIME, "time"
                break
            if not refinable:
                # nothing to partition: the relaxation is already exact
                status, stop_reason = STATUS_CONVERGED, "partition"
                break
            refinable = locate_active(refinable, x_star)
            actives = {i: refinable[i].active_partition() for i in refinable}
            # proven against a supplied reference: stop as soon as certified
            if current.reference_optimum is not None and np.isfinite(lb):
                g, absolute = gap_percent(current.reference_optimum, lb)
                if not absolute and abs(g) <= GOPT_GAP_PERCENT:
                    status, stop_reason = STATUS_GLOBAL, "proved_reference_gap"
                    break
            # (a) two consecutive sub-threshold normalized improvements
            if iterations > 1 and np.isfinite(lb_prev):
                imp = abs(lb - lb_prev) / (abs(lb_prev) + 1.0) * 100.0
                below_count = below_count + 1 if imp < cfg.tol_imp else 0
                if below_count >= 2:
                    status, stop_reason = STATUS_CONVERGED, "improvement"
                    break
            # (b) same partitions and all active sizes at the minimum length
            if prev_actives is not None and prev_actives == actives:
                sizes_ok = all(ahi - alo <= rcfg.eps_for(i) + 1e-15
                               for i, (alo, ahi) in actives.items())
                if sizes_ok or not refined_any:
                    status, stop_reason = STATUS_CONVERGED, "partition"
                    break
            prev_actives = actives
            if cfg.max_iterations is not None and iterations >= cfg.max_iterations:
                status, stop_reason = STATUS_CONVERGED, "iteration_cap"
                break
    t_loop = time.monotonic() - t0

    # final labeling and metrics
    reference = current.reference_optimum
    if reference is not None and np.isfinite(lb):
        g, absolute = gap_percent(reference, lb)
        gap, gap_basis, gap_abs = g, "reference", absolute
        if status != STATUS_TIME and not absolute and abs(g) <= GOPT_GAP_PERCENT:
            status = STATUS_GLOBAL
    else:
        g, absolute = gap_percent(incumbent.objective_value, lb) \
            if np.isfinite(lb) else (None, False)
        gap, gap_basis, gap_abs = g, "incumbent", absolute

    if tighten_report is not None:
        bc, bc_inf = tighten_report.bc_percent, tighten_report.bc_is_infinite
        tightened = {current.variables[i].name: [tighten_report.lower[i],
                                                 tighten_report.upper[i]]
                     for i in tighten_report.variables}
        t_rounds = tighten_report.rounds
    else:
        bc, bc_inf, tightened, t_rounds = 0.0, False, {}, 0

    solution = {}
    if solution_point is not None:
        for i in current.original_indices():
            solution[current.variables[i].name] = float(solution_point[i])

    return SolveReport(
        instance=instance_name,
        mode=cfg.mode,
        status=status,
        stop_reason=stop_reason,
        lower_bound=float(lb),
        upper_bound=float(incumbent.objective_value),
        gap_percent=gap,
        gap_basis=gap_basis,
        gap_is_absolute=gap_abs,
        bc_percent=bc,
        bc_is_infinite=bc_inf,
        binaries_added=int(binaries_added),
        iterations=int(iterations),
        lower_bound_trajectory=[float(v) for v in trajectory],
        binaries_trajectory=[int(v) for v in binaries_traj],
        reference_optimum=reference,
        seed=cfg.seed,
        delta=cfg.delta if cfg.mode not in ("mc", "utmc") else None,
        utmc_n=cfg.utmc_n if cfg.mode == "utmc" else None,
        solution=solution,
        tighten_rounds=t_rounds,
        tightened_bounds=tightened,
        times={
            "incumbent_s": t_incumbent,
            "tighten_s": t_tighten,
            "loop_s": t_loop,
            "total_s": time.monotonic() - t_start,
        },
    )
