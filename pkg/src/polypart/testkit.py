"""Independent oracles and instance generators for the test suite.

The oracles deliberately share no code with the relaxation pipeline: the
MINLP oracle enumerates binary assignments against a dense continuous grid
with local grid refinement, and the MILP oracle enumerates binary
assignments over LP solves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import itertools

import numpy as np

from .milp import MilpProblem
from .model import (BINARY, CONTINUOUS, Model, ModelError, inline_expr,
                    normalize)
from .simplex import LinearProgram, solve_lp

ORACLE_FEAS_TOL = 2e-6  # twice the driver default, avoids boundary flapping


@dataclass
class OracleResult:
    optimum: float
    argmin: np.ndarray | None
    method: str
    found: bool
    resolution: float = np.nan
    grid_per_dim: int = 0

    def __bool__(self) -> bool:
        return self.found


def _feasible_mask(model: Model, pts: np.ndarray, tol: float) -> np.ndarray:
    ok = np.ones(pts.shape[0], dtype=bool)
    for c in model.constraints:
        vals = model.eval_expr_batch(c.expr, pts)
        if c.relation == "<=":
            ok &= vals <= c.rhs + tol
        elif c.relation == ">=":
            ok &= vals >= c.rhs - tol
        else:
            ok &= np.abs(vals - c.rhs) <= tol
    return ok


def _objective_lipschitz(model: Model, lo: np.ndarray, hi: np.ndarray,
                         cont: list) -> np.ndarray:
    """Per-coordinate bound on the raw objective's partial derivatives."""
    expr = inline_expr(model, model.objective)
    box = np.maximum(np.abs(lo), np.abs(hi))
    scale = {i: max(box[k], 1e-12) for k, i in enumerate(cont)}
    lip = np.zeros(len(cont))
    pos = {i: k for k, i in enumerate(cont)}
    for key, coef in expr.items():
        for spot, i in enumerate(key):
            if i not in pos:
                continue
            prod = abs(coef)
            for t, j in enumerate(key):
                if t != spot:
                    prod *= scale.get(j, 1.0)
            lip[pos[i]] += prod
    return lip


def oracle_minlp(model: Model, grid_per_dim: int = 64,
                 refine_rounds: int = 2,
                 feas_tol: float = ORACLE_FEAS_TOL) -> OracleResult:
    """Dense-grid global minimization over all binary assignments.

    Continuous variables are sampled on a per-dimension grid.  The grid is
    then shrunk ``refine_rounds`` times onto the bounding box of all
    near-optimal feasible grid points, where "near" uses a rigorous
    one-cell Lipschitz margin of the objective, so flat valleys cannot be
    cut off.  Capped at 4 continuous and 10 binary variables.
    """
    if not model.is_normalized():
        model = normalize(model)
    orig = model.original_indices()
    cont = [i for i in orig if model.variables[i].kind == CONTINUOUS]
    bins = [i for i in orig if model.variables[i].kind == BINARY]
    if len(cont) > 4:
        raise ModelError(f"oracle caps at 4 continuous variables, got {len(cont)}")
    if len(bins) > 10:
        raise ModelError(f"oracle caps at 10 binary variables, got {len(bins)}")

    lo = np.array([model.variables[i].lower for i in cont])
    hi = np.array([model.variables[i].upper for i in cont])
    lip = _objective_lipschitz(model, lo, hi, cont)
    best_val = np.inf
    best_pt: np.ndarray | None = None
    resolution = float(np.max(hi - lo, initial=0.0)) / max(grid_per_dim - 1, 1)

    def sweep(assign, lo_box, hi_box):
        """Best feasible point plus the box of near-best feasible points."""
        axes = [np.linspace(lo_box[k], hi_box[k], grid_per_dim)
                for k in range(len(cont))]
        if axes:
            mesh = np.meshgrid(*axes, indexing="ij")
            grid = np.column_stack([mm.ravel() for mm in mesh])
        else:
            grid = np.zeros((1, 0))
        pts = np.zeros((grid.shape[0], model.n_vars))
        for k, i in enumerate(cont):
            pts[:, i] = grid[:, k]
        for k, i in enumerate(bins):
            pts[:, i] = assign[k]
        pts = model.complete_points(pts[:, orig])
        mask = _feasible_mask(model, pts, feas_tol)
        if not np.any(mask):
            return None, np.inf, None, None
        vals = model.eval_expr_batch(model.objective, pts)
        vals[~mask] = np.inf
        j = int(np.argmin(vals))
        cell = (hi_box - lo_box) / max(grid_per_dim - 1, 1)
        margin = 3.0 * float(lip @ cell) + 1e-12
        near = vals <= vals[j] + margin
        near_lo = grid[near].min(axis=0) - cell if grid.size else None
        near_hi = grid[near].max(axis=0) + cell if grid.size else None
        return pts[j], float(vals[j]), near_lo, near_hi

    rows = [(inline_expr(model, c.expr), c.relation, c.rhs)
            for c in model.constraints]
    obj_expr = inline_expr(model, model.objective)
    pos = {i: k for k, i in enumerate(cont)}

    for assign in itertools.product((0.0, 1.0), repeat=len(bins)):
        lo_box, hi_box = lo.copy(), hi.copy()
        pt, val, near_lo, near_hi = sweep(assign, lo_box, hi_box)
        for _ in range(refine_rounds):
            if pt is None or not cont:
                break
            lo_box = np.maximum(lo, near_lo)
            hi_box = np.minimum(hi, near_hi)
            pt2, val2, near_lo2, near_hi2 = sweep(assign, lo_box, hi_box)
            if pt2 is None:
                break
            if val2 < val:
                pt, val = pt2, val2
            near_lo, near_hi = near_lo2, near_hi2
            resolution = float(np.max(hi_box - lo_box, initial=0.0)) / \
                max(grid_per_dim - 1, 1)
        if pt is not None and cont:
            # sharpen the grid argmin with a smooth local descent; accepted
            # only when the polished point verifies as strictly feasible, so
            # the result keeps upper-bounding the true minimum
            from .driver import _nlp_polish

            fixed = {b: float(v) for b, v in zip(bins, assign)}
            polished = _nlp_polish(rows, obj_expr, fixed, pos, lo, hi, pt[cont])
            if polished is not None:
                filled = dict(fixed)
                filled.update({i: float(v) for i, v in zip(cont, polished)})
                cand = model.complete_point(filled)
                if model.check_feasible(cand, 1e-9):
                    cand_val = float(model.eval_expr(model.objective, cand))
                    if cand_val < val:
                        pt, val = cand, cand_val
        if val < best_val:
            best_val, best_pt = val, pt

    return OracleResult(
        optimum=best_val,
        argmin=best_pt,
        method="binary_enumeration" if bins and not cont else "dense_grid",
        found=best_pt is not None,
        resolution=resolution,
        grid_per_dim=grid_per_dim,
    )


def enumerate_milp(prob: MilpProblem, backend: str | None = None) -> OracleResult:
    """Exact MILP oracle: enumerate binary assignments, solve the rest as LPs."""
    lp = prob.lp
    bins = list(prob.integrality)
    if len(bins) > 14:
        raise ModelError(f"enumeration caps at 14 binaries, got {len(bins)}")
    best = np.inf
    best_x = None
    for assign in itertools.product((0.0, 1.0), repeat=len(bins)):
        lo = lp.lower.copy()
        hi = lp.upper.copy()
        for j, v in zip(bins, assign):
            lo[j] = hi[j] = v
        sub = LinearProgram(c=lp.c, A=lp.A, relations=lp.relations, b=lp.b,
                            lower=lo, upper=hi, names=lp.names)
        sol = solve_lp(sub, backend=backend)
        if sol.status == "optimal" and sol.objective < best:
            best = sol.objective
            best_x = sol.x
    return OracleResult(optimum=best, argmin=best_x,
                        method="binary_enumeration", found=best_x is not None)


# ----------------------------------------------------------------------
# instance generation
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class InstanceShape:
    n_continuous: int = 2
    n_binary: int = 0
    n_terms: int = 1
    n_constraints: int = 2
    max_degree: int = 2
    monomial_share: float = 0.3    # chance a term repeats one variable
    width_range: tuple = (2.0, 6.0)
    lower_range: tuple = (0.25, 1.5)
    slack_range: tuple = (1.0, 4.0)
    scale_slack: bool = True       # widen slack with the row's magnitude
    objective_offset: float = 0.0
    allow_binary_in_terms: bool = False


def gen_random_instance(seed: int, shape: InstanceShape = InstanceShape()) -> Model:
    """Random multilinear model, feasible by construction at an anchor point.

    Constraint right-hand sides are offset from the anchor's row values, so
    the anchor is strictly feasible with margin and the feasible region has
    usable volume for sampling-based tests.
    """
    rng = np.random.default_rng(seed)
    m = Model()
    cont = []
    for k in range(shape.n_continuous):
        lo = float(rng.uniform(*shape.lower_range))
        hi = lo + float(rng.uniform(*shape.width_range))
        cont.append(m.add_variable(f"x{k}", lo, hi))
    bins = [m.add_variable(f"y{k}", 0, 1, BINARY) for k in range(shape.n_binary)]

    keys = []
    for _ in range(shape.n_terms):
        if rng.random() < shape.monomial_share or len(cont) == 1:
            v = int(rng.choice(cont))
            key = (v, v)
        else:
            degree = int(rng.integers(2, shape.max_degree + 1))
            pool = cont + (bins if shape.allow_binary_in_terms else [])
            key = tuple(sorted(rng.choice(pool, size=degree, replace=True).tolist()))
            if len(set(key)) == 1 and m.variables[key[0]].kind == BINARY:
                key = (key[0], int(rng.choice(cont)))
        keys.append(tuple(int(i) for i in key))

    anchor = {i: float(rng.uniform(m.variables[i].lower, m.variables[i].upper))
              for i in cont}
    for i in bins:
        anchor[i] = float(rng.integers(0, 2))

    def random_expr() -> dict:
        expr: dict = {}
        for i in cont + bins:
            if rng.random() < 0.6:
                expr[(i,)] = float(np.round(rng.uniform(-2, 2), 3))
        for key in keys:
            if rng.random() < 0.8:
                expr[key] = expr.get(key, 0.0) + float(np.round(rng.uniform(-2, 2), 3))
        if not expr:
            expr[(cont[0],)] = 1.0
        return expr

    def eval_at(expr: dict) -> float:
        total = 0.0
        for key, coef in expr.items():
            prod = coef
            for i in key:
                prod *= anchor[i]
            total += prod
        return total

    for c in range(shape.n_constraints):
        expr = random_expr()
        val = eval_at(expr)
        slack = float(rng.uniform(*shape.slack_range))
        if shape.scale_slack:
            slack *= 0.5 * (1.0 + abs(val))
        if rng.random() < 0.5:
            m.add_constraint(f"c{c}", expr, "<=", val + slack)
        else:
            m.add_constraint(f"c{c}", expr, ">=", val - slack)

    obj = random_expr()
    if shape.objective_offset:
        obj[()] = obj.get((), 0.0) + shape.objective_offset
    m.set_objective(obj)
    m.validate()
    return m


def gen_random_milp(seed: int, n_binary: int = 5, n_continuous: int = 4,
                    n_rows: int = 4):
    """Random bounded MILP (LP data plus integrality set), possibly infeasible."""
    rng = np.random.default_rng(seed)
    from .simplex import LpBuilder

    b = LpBuilder()
    for j in range(n_binary):
        b.add_col(0.0, 1.0, float(np.round(rng.normal(), 3)), f"y{j}")
    for j in range(n_continuous):
        lo = float(rng.uniform(-4, 0))
        b.add_col(lo, lo + float(rng.uniform(1, 6)),
                  float(np.round(rng.normal(), 3)), f"x{j}")
    n = n_binary + n_continuous
    for i in range(n_rows):
        coeffs = {j: float(np.round(rng.normal(), 3))
                  for j in range(n) if rng.random() < 0.7}
        if not coeffs:
            coeffs = {int(rng.integers(0, n)): 1.0}
        rel = str(rng.choice(["<=", ">="]))
        b.add_row(coeffs, rel, float(np.round(rng.normal() * 2, 3)))
    return MilpProblem(b.build(), list(range(n_binary)), None)
