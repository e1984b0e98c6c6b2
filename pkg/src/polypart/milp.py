"""Branch-and-bound MILP solver with a lazy cut callback.

Nodes are processed best-bound first; all integral columns here are binary,
so branching fixes a column to 0 or 1.  A registered ``cut_callback`` is
invoked at every integral candidate and may return violated linear cuts;
cuts are globally valid, get appended to the root relaxation, and the
candidate is re-solved until the callback returns none.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .simplex import (INFEASIBLE, OPTIMAL, UNBOUNDED, LinearProgram, LpBasis,
                      solve_lp, solve_lp_with_basis)

INT_TOL = 1e-6
REL_GAP = 1e-9
NODE_POOL_CAP = 10**6  # beyond this the search dives depth-first

TIME_LIMIT = "time_limit"


class MilpError(RuntimeError):
    pass


@dataclass(frozen=True)
class Cut:
    coeffs: tuple  # ((col, coef), ...)
    relation: str
    rhs: float

    @staticmethod
    def make(coeffs: dict, relation: str, rhs: float) -> "Cut":
        return Cut(tuple(sorted((int(j), float(v)) for j, v in coeffs.items())),
                   relation, float(rhs))


@dataclass
class MilpProblem:
    lp: LinearProgram
    integrality: np.ndarray  # column indices constrained to {0, 1}
    cut_callback: object | None = None

    def __post_init__(self):
        self.integrality = np.asarray(sorted(set(int(j) for j in self.integrality)),
                                      dtype=int)
        for j in self.integrality:
            if self.lp.lower[j] < -INT_TOL or self.lp.upper[j] > 1 + INT_TOL:
                raise MilpError(f"integral column {j} must have bounds within [0, 1]")


@dataclass
class MilpSolution:
    status: str
    x: np.ndarray | None = None
    objective: float = np.inf
    best_bound: float = -np.inf
    nodes_explored: int = 0
    cuts_added: int = 0


def branch_select(point: np.ndarray, integral_cols, int_tol: float = INT_TOL) -> int:
    """Column whose fractional part is closest to 0.5; ties to lowest index."""
    best = -1
    best_score = -1.0
    for j in integral_cols:
        frac = point[j] - np.floor(point[j])
        dist = abs(frac - 0.5)
        if dist >= 0.5 - int_tol:
            continue  # already integral
        score = 0.5 - dist
        if score > best_score + 1e-15:
            best_score = score
            best = int(j)
    if best < 0:
        raise MilpError("branch_select called on an integral point")
    return best


@dataclass(order=True)
class _Node:
    key: tuple
    bound: float = field(compare=False)
    fixings: dict = field(compare=False)
    depth: int = field(compare=False, default=0)
    basis: LpBasis | None = field(compare=False, default=None)


class _CutPool:
    """Globally valid rows appended below the base relaxation."""

    def __init__(self, lp: LinearProgram):
        self.lp = lp
        self.cuts: list = []
        self._version = -1
        self._A = lp.A
        self._b = lp.b
        self._rel = lp.relations

    def add(self, cut: Cut) -> None:
        self.cuts.append(cut)

    def assembled(self):
        if self._version != len(self.cuts):
            lp = self.lp
            data, ri, ci = [], [], []
            for i, cut in enumerate(self.cuts):
                for j, v in cut.coeffs:
                    ri.append(i)
                    ci.append(j)
                    data.append(v)
            extra = sp.csr_matrix((data, (ri, ci)), shape=(len(self.cuts), lp.n_cols))
            self._A = sp.vstack([lp.A, extra], format="csr")
            self._b = np.concatenate([lp.b, [c.rhs for c in self.cuts]])
            self._rel = np.concatenate(
                [lp.relations, np.array([c.relation for c in self.cuts], dtype="<U2")])
            self._version = len(self.cuts)
        return self._A, self._b, self._rel

    def node_lp(self, fixings: dict) -> LinearProgram:
        lp = self.lp
        A, b, rel = self.assembled()
        lower = lp.lower.copy()
        upper = lp.upper.copy()
        for j, v in fixings.items():
            lower[j] = upper[j] = float(v)
        return LinearProgram(c=lp.c, A=A, relations=rel, b=b,
                             lower=lower, upper=upper, names=lp.names)


def _start_feasible(prob: MilpProblem, point: np.ndarray) -> bool:
    lp = prob.lp
    tol = 1e-7 * (1.0 + float(np.max(np.abs(lp.b), initial=0.0)))
    if np.any(point < lp.lower - 1e-7) or np.any(point > lp.upper + 1e-7):
        return False
    for j in prob.integrality:
        if abs(point[j] - round(point[j])) > INT_TOL:
            return False
    resid = lp.A @ point - lp.b
    for i, rel in enumerate(lp.relations):
        if rel == "<=" and resid[i] > tol:
            return False
        if rel == ">=" and resid[i] < -tol:
            return False
        if rel == "=" and abs(resid[i]) > tol:
            return False
    if prob.cut_callback is not None and prob.cut_callback(point):
        return False
    return True


def solve_milp(prob: MilpProblem, time_limit: float | None = None,
               backend: str | None = None,
               initial: tuple | None = None) -> MilpSolution:
    """Globally solve the MILP, honoring the cut callback at integral points.

    ``initial`` is an optional ``(point, objective)`` feasible start used to
    prune; an infeasible or stale start is silently ignored.
    """
    pool = _CutPool(prob.lp)
    integral = prob.integrality
    deadline = None if time_limit is None else time.monotonic() + time_limit
    inc_obj = np.inf
    inc_x = None
    if initial is not None:
        start_x = np.asarray(initial[0], dtype=float)
        if _start_feasible(prob, start_x):
            inc_obj = float(initial[1])
            inc_x = start_x.copy()
    cuts_added = 0
    nodes = 0
    seq = 0
    dive_mode = False

    heap: list = [_Node(key=(-np.inf, 0), bound=-np.inf, fixings={}, depth=0)]

    def out_of_time() -> bool:
        return deadline is not None and time.monotonic() > deadline

    def prune_eps() -> float:
        return REL_GAP * (1.0 + abs(inc_obj)) if np.isfinite(inc_obj) else 0.0

    def time_limit_result() -> MilpSolution:
        bounds = [nd.bound for nd in heap]
        best_bound = min(bounds) if bounds else inc_obj
        best_bound = min(best_bound, inc_obj)
        return MilpSolution(status=TIME_LIMIT, x=inc_x, objective=inc_obj,
                            best_bound=best_bound, nodes_explored=nodes,
                            cuts_added=cuts_added)

    while heap:
        if out_of_time():
            return time_limit_result()
        if not dive_mode and len(heap) > NODE_POOL_CAP:
            dive_mode = True
            heap = [_Node(key=(-nd.depth, nd.key[1]), bound=nd.bound,
                          fixings=nd.fixings, depth=nd.depth, basis=nd.basis)
                    for nd in heap]
            heapq.heapify(heap)
        node = heapq.heappop(heap)
        if np.isfinite(inc_obj) and node.bound >= inc_obj - prune_eps():
            continue
        nodes += 1

        # resolve this node until its optimum is integral and cut-clean
        basis = node.basis
        while True:
            if out_of_time():
                heapq.heappush(heap, node)
                return time_limit_result()
            lp = pool.node_lp(node.fixings)
            sol = solve_lp_with_basis(lp, basis, backend=backend) \
                if basis is not None else solve_lp(lp, backend=backend)
            if sol.status == INFEASIBLE:
                break
            if sol.status == UNBOUNDED:
                raise MilpError("LP relaxation is unbounded; the MILP is ill-posed")
            obj = sol.objective
            if np.isfinite(inc_obj) and obj >= inc_obj - prune_eps():
                break  # dominated
            frac = [j for j in integral
                    if abs(sol.x[j] - round(sol.x[j])) > INT_TOL]
            if frac:
                j = branch_select(sol.x, frac)
                for val in (0.0, 1.0):
                    seq += 1
                    child = dict(node.fixings)
                    child[j] = val
                    key = (obj, seq) if not dive_mode else (-(node.depth + 1), seq)
                    heapq.heappush(heap, _Node(key=key, bound=obj, fixings=child,
                                               depth=node.depth + 1, basis=sol.basis))
                break
            if prob.cut_callback is not None:
                cuts = prob.cut_callback(sol.x)
                if cuts:
                    for cut in cuts:
                        pool.add(cut if isinstance(cut, Cut) else Cut.make(*cut))
                    cuts_added += len(cuts)
                    basis = None  # row count changed; restart from a cold basis
                    continue
            if obj < inc_obj:
                inc_obj = obj
                inc_x = sol.x.copy()
            break

        if np.isfinite(inc_obj) and not dive_mode:
            while heap and heap[0].bound >= inc_obj - prune_eps():
                heapq.heappop(heap)

    if inc_x is None:
        return MilpSolution(status=INFEASIBLE, nodes_explored=nodes,
                            cuts_added=cuts_added)
    return MilpSolution(status=OPTIMAL, x=inc_x, objective=inc_obj,
                        best_bound=inc_obj, nodes_explored=nodes,
                        cuts_added=cuts_added)
