"""LP core: bounded-variable linear programs with two interchangeable solvers.

``solve_lp`` answers ``min c.u  s.t.  A u {<=,=,>=} b,  l <= u <= r``.  The
default backend delegates to HiGHS through :func:`scipy.optimize.linprog`;
the ``reference`` backend is a self-contained bounded-variable primal simplex
(Dantzig pricing, Bland's rule after a degenerate-pivot stall) that also
supports warm starts from a saved basis.  Both backends return identical
statuses and objective values and are cross-tested against each other.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

DEFAULT_BACKEND = "highs"

FEAS_TOL = 1e-7
DUAL_TOL = 1e-9
PIVOT_TOL = 1e-9
STALL_THRESHOLD = 50  # degenerate pivots before Bland's rule engages


class LpError(RuntimeError):
    """Numerical breakdown; never a silent wrong answer."""


@dataclass(frozen=True)
class LinearProgram:
    c: np.ndarray
    A: sp.csr_matrix
    relations: np.ndarray  # '<=', '=', '>=' per row
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    names: tuple | None = None

    def __post_init__(self):
        m, n = self.A.shape
        if self.c.shape != (n,) or self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("column data shapes disagree with the matrix")
        if self.b.shape != (m,) or self.relations.shape != (m,):
            raise ValueError("row data shapes disagree with the matrix")
        bad = [r for r in np.unique(self.relations) if r not in ("<=", "=", ">=")]
        if bad:
            raise ValueError(f"unknown relations {bad}")
        if np.any(self.lower > self.upper):
            j = int(np.argmax(self.lower > self.upper))
            raise ValueError(f"column {j}: lower bound exceeds upper bound")

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def n_cols(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True)
class LpBasis:
    basic: np.ndarray      # column indices of the basic variables
    at_upper: np.ndarray   # nonbasic-at-upper flags over all columns


@dataclass
class LpSolution:
    status: str
    x: np.ndarray | None = None
    objective: float = np.nan
    duals: np.ndarray | None = None           # row duals, d(obj)/d(rhs) convention
    reduced_costs: np.ndarray | None = None   # structural reduced costs
    basis: LpBasis | None = None
    iterations: int = 0


class LpBuilder:
    """Incremental construction of a :class:`LinearProgram`."""

    def __init__(self):
        self._lower: list = []
        self._upper: list = []
        self._obj: list = []
        self._names: list = []
        self._rows: list = []
        self._rels: list = []
        self._rhs: list = []

    @property
    def n_cols(self) -> int:
        return len(self._lower)

    @property
    def n_rows(self) -> int:
        return len(self._rows)

    def add_col(self, lower=-np.inf, upper=np.inf, objective=0.0, name=None) -> int:
        if lower > upper:
            raise ValueError(f"column {name or len(self._lower)}: crossed bounds")
        self._lower.append(float(lower))
        self._upper.append(float(upper))
        self._obj.append(float(objective))
        self._names.append(name or f"c{len(self._names)}")
        return len(self._lower) - 1

    def set_objective_coef(self, col: int, coef: float) -> None:
        self._obj[col] = float(coef)

    def reset_objective(self) -> None:
        self._obj = [0.0] * len(self._obj)

    def add_row(self, coeffs: dict, relation: str, rhs: float) -> int:
        if relation not in ("<=", "=", ">="):
            raise ValueError(f"unknown relation {relation!r}")
        for j in coeffs:
            if not 0 <= j < len(self._lower):
                raise ValueError(f"row references unknown column {j}")
        self._rows.append({int(j): float(v) for j, v in coeffs.items() if v != 0.0})
        self._rels.append(relation)
        self._rhs.append(float(rhs))
        return len(self._rows) - 1

    def build(self) -> LinearProgram:
        n = len(self._lower)
        data, ri, ci = [], [], []
        for i, row in enumerate(self._rows):
            for j, v in row.items():
                ri.append(i)
                ci.append(j)
                data.append(v)
        A = sp.csr_matrix((data, (ri, ci)), shape=(len(self._rows), n))
        return LinearProgram(
            c=np.array(self._obj, dtype=float),
            A=A,
            relations=np.array(self._rels, dtype="<U2"),
            b=np.array(self._rhs, dtype=float),
            lower=np.array(self._lower, dtype=float),
            upper=np.array(self._upper, dtype=float),
            names=tuple(self._names),
        )


# ----------------------------------------------------------------------
# public entry points
# ----------------------------------------------------------------------

def _solve_reference_scaled(lp: LinearProgram) -> LpSolution:
    """Reference simplex on an equilibrated copy, mapped back."""
    A2, rs, cs = _equilibration_scales(lp.A)
    with np.errstate(invalid="ignore"):
        lp2 = LinearProgram(c=lp.c * cs, A=A2, relations=lp.relations,
                            b=lp.b * rs, lower=lp.lower / cs,
                            upper=lp.upper / cs)
    sol = _ReferenceSimplex(lp2).solve()
    if sol.status != OPTIMAL:
        return sol
    x = sol.x * cs
    return LpSolution(status=OPTIMAL, x=x, objective=float(lp.c @ x),
                      duals=sol.duals * rs, reduced_costs=sol.reduced_costs / cs,
                      basis=sol.basis, iterations=sol.iterations)


def solve_lp(lp: LinearProgram, backend: str | None = None) -> LpSolution:
    """Solve an LP; deterministic for identical input."""
    backend = backend or DEFAULT_BACKEND
    if backend == "highs":
        try:
            sol = _solve_highs(lp)
        except LpError:
            # numerical breakdown: fall back to the reference simplex (on an
            # equilibrated copy) before giving up, so one brittle subproblem
            # cannot kill a run
            log.warning("HiGHS failed numerically; retrying with the "
                        "reference simplex")
            sol = _solve_reference_scaled(lp)
    elif backend == "reference":
        sol = _ReferenceSimplex(lp).solve()
    else:
        raise ValueError(f"unknown LP backend {backend!r}")
    if sol.status == OPTIMAL:
        _check_solution(lp, sol)
    return sol


def solve_lp_with_basis(lp: LinearProgram, warm_basis: LpBasis | None,
                        backend: str | None = None) -> LpSolution:
    """Like :func:`solve_lp`; a compatible basis only speeds the solve up.

    An incompatible or stale basis falls back to a cold start.  The HiGHS
    backend has no external basis interface, so it always solves cold.
    """
    backend = backend or DEFAULT_BACKEND
    if backend != "reference" or warm_basis is None:
        return solve_lp(lp, backend)
    sol = _ReferenceSimplex(lp).solve(warm_basis=warm_basis)
    if sol.status == OPTIMAL:
        _check_solution(lp, sol)
    return sol


def _check_solution(lp: LinearProgram, sol: LpSolution) -> None:
    x = sol.x
    scale = 1.0 + float(np.max(np.abs(x), initial=0.0))
    if np.any(x < lp.lower - FEAS_TOL * scale) or np.any(x > lp.upper + FEAS_TOL * scale):
        raise LpError("solver returned a point outside its bounds")
    resid = lp.A @ x - lp.b
    rscale = FEAS_TOL * (1.0 + float(np.max(np.abs(lp.b), initial=0.0)) + scale)
    for rel, r in ((">=", -resid), ("<=", resid)):
        mask = lp.relations == rel
        if np.any(r[mask] > rscale):
            raise LpError("solver returned a primal-infeasible point")
    mask = lp.relations == "="
    if np.any(np.abs(resid[mask]) > rscale):
        raise LpError("solver returned a primal-infeasible point")
    obj = float(lp.c @ x)
    if abs(obj - sol.objective) > 1e-9 * (1.0 + abs(obj)):
        raise LpError("objective value disagrees with the returned point")


# ----------------------------------------------------------------------
# HiGHS backend
# ----------------------------------------------------------------------

def _equilibration_scales(A: sp.csr_matrix, passes: int = 3) -> tuple:
    """Geometric-mean row/column scales taming wide coefficient ranges."""
    m, n = A.shape
    row_scale = np.ones(m)
    col_scale = np.ones(n)
    M = A.copy()

    def gm_scales(mat):
        absm = abs(mat)
        out = np.ones(mat.shape[0])
        for i in range(mat.shape[0]):
            chunk = absm.data[absm.indptr[i]:absm.indptr[i + 1]]
            chunk = chunk[chunk > 0]
            if chunk.size:
                out[i] = 1.0 / np.sqrt(float(chunk.max()) * float(chunk.min()))
        return out

    for _ in range(passes):
        rs = gm_scales(M.tocsr())
        M = sp.diags(rs) @ M
        row_scale *= rs
        cs = gm_scales(M.T.tocsr())
        M = (M.tocsc() @ sp.diags(cs)).tocsr()
        col_scale *= cs
    return M.tocsr(), row_scale, col_scale


def _run_highs(c, A, relations, b, lower, upper, method, options):
    le = relations == "<="
    ge = relations == ">="
    eq = relations == "="
    A_ub = b_ub = A_eq = b_eq = None
    if np.any(le) or np.any(ge):
        A_ub = sp.vstack([A[le], -A[ge]], format="csr")
        b_ub = np.concatenate([b[le], -b[ge]])
    if np.any(eq):
        A_eq = A[eq]
        b_eq = b[eq]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=np.column_stack([lower, upper]),
                  method=method, options=options)
    duals = None
    reduced = None
    if res.status == 0:
        duals = np.zeros(relations.shape[0])
        if A_ub is not None:
            marg = np.asarray(res.ineqlin.marginals)
            n_le = int(np.count_nonzero(le))
            duals[le] = marg[:n_le]
            duals[ge] = -marg[n_le:]
        if A_eq is not None:
            duals[eq] = np.asarray(res.eqlin.marginals)
        reduced = np.asarray(res.lower.marginals) + np.asarray(res.upper.marginals)
    return res, duals, reduced


def _solve_highs(lp: LinearProgram) -> LpSolution:
    # fixed retry ladder (raw, then equilibrated), so identical inputs
    # stay deterministic; scaling rescues badly ranged coefficient matrices
    res, duals, reduced = _run_highs(lp.c, lp.A, lp.relations, lp.b,
                                     lp.lower, lp.upper, "highs", None)
    if res.status not in (0, 2, 3):
        A2, rs, cs = _equilibration_scales(lp.A)
        with np.errstate(invalid="ignore"):
            lo2 = lp.lower / cs
            hi2 = lp.upper / cs
        for method, options in (("highs", None), ("highs-ds", {"presolve": False})):
            res, duals, reduced = _run_highs(lp.c * cs, A2, lp.relations,
                                             lp.b * rs, lo2, hi2,
                                             method, options)
            if res.status in (0, 2, 3):
                break
        if res.status == 0:
            x = np.asarray(res.x) * cs
            return LpSolution(
                status=OPTIMAL,
                x=x,
                objective=float(lp.c @ x),
                duals=duals * rs,
                reduced_costs=reduced / cs,
                iterations=int(res.nit),
            )
    if res.status == 2:
        return LpSolution(status=INFEASIBLE, iterations=int(res.nit))
    if res.status == 3:
        return LpSolution(status=UNBOUNDED, iterations=int(res.nit))
    if res.status != 0:
        raise LpError(f"HiGHS failed: {res.message}")
    return LpSolution(
        status=OPTIMAL,
        x=np.asarray(res.x, dtype=float),
        objective=float(res.fun),
        duals=duals,
        reduced_costs=reduced,
        iterations=int(res.nit),
    )


# ----------------------------------------------------------------------
# reference backend: bounded-variable primal simplex
# ----------------------------------------------------------------------

_AT_LO, _AT_UP, _FREE, _BASIC = 0, 1, 2, 3


class _ReferenceSimplex:
    """Two-phase bounded-variable primal simplex over a dense tableau.

    Column layout: structural | one slack per row | one artificial per row.
    Slacks carry the relation (``<=`` gives s in [0, inf), ``>=`` gives
    s in (-inf, 0], ``=`` pins s to 0); artificials exist for phase 1 only.
    """

    REFACTOR_EVERY = 128
    MAX_ITER_BASE = 20000

    def __init__(self, lp: LinearProgram):
        self.lp = lp
        m, n = lp.n_rows, lp.n_cols
        self.m, self.n = m, n
        self.N = n + 2 * m
        T = np.zeros((m, self.N))
        T[:, :n] = lp.A.toarray()
        T[:, n:n + m] = np.eye(m)
        self.T = T
        lo = np.full(self.N, -np.inf)
        hi = np.full(self.N, np.inf)
        lo[:n] = lp.lower
        hi[:n] = lp.upper
        for i, rel in enumerate(lp.relations):
            if rel == "<=":
                lo[n + i], hi[n + i] = 0.0, np.inf
            elif rel == ">=":
                lo[n + i], hi[n + i] = -np.inf, 0.0
            else:
                lo[n + i], hi[n + i] = 0.0, 0.0
        lo[n + m:] = 0.0
        hi[n + m:] = np.inf
        self.lo, self.hi = lo, hi
        self.b = lp.b.astype(float)
        self.iterations = 0

    # -- state helpers ---------------------------------------------------
    def _nonbasic_value(self, j: int) -> float:
        s = self.state[j]
        if s == _AT_LO:
            return self.lo[j]
        if s == _AT_UP:
            return self.hi[j]
        return 0.0

    def _values_vector(self) -> np.ndarray:
        v = np.zeros(self.N)
        for j in range(self.N):
            if self.state[j] != _BASIC:
                v[j] = self._nonbasic_value(j)
        v[self.basis] = self.xB
        return v

    def _recompute_xB(self) -> None:
        v = np.zeros(self.N)
        for j in range(self.N):
            if self.state[j] != _BASIC:
                v[j] = self._nonbasic_value(j)
        rhs = self.b - self.T @ v  # basic columns carry v == 0 here
        self.xB = self.B_inv @ rhs

    def _refactor(self) -> None:
        B = self.T[:, self.basis]
        try:
            self.B_inv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise LpError("singular basis during refactorization") from exc
        self._recompute_xB()

    # -- cold / warm initialization ---------------------------------------
    def _cold_start(self) -> None:
        n, m = self.n, self.m
        self.state = np.empty(self.N, dtype=np.int8)
        for j in range(n + m):
            if np.isfinite(self.lo[j]):
                self.state[j] = _AT_LO
            elif np.isfinite(self.hi[j]):
                self.state[j] = _AT_UP
            else:
                self.state[j] = _FREE
        self.state[n + m:] = _AT_LO
        v = np.array([self._nonbasic_value(j) for j in range(n + m)])
        resid = self.b - self.T[:, :n + m] @ v
        sign = np.where(resid >= 0.0, 1.0, -1.0)
        self.T[:, n + m:] = np.diag(sign)
        self.basis = np.arange(n + m, self.N)
        self.state[self.basis] = _BASIC
        self.B_inv = np.diag(sign)  # diag(+-1) is its own inverse
        self.xB = np.abs(resid)

    def _try_warm_start(self, warm: LpBasis) -> bool:
        n, m = self.n, self.m
        basic = np.asarray(warm.basic, dtype=int)
        if basic.shape != (m,) or np.any(basic < 0) or np.any(basic >= self.N):
            return False
        if len(set(basic.tolist())) != m:
            return False
        at_up = np.asarray(warm.at_upper, dtype=bool)
        if at_up.shape != (self.N,):
            return False
        state = np.empty(self.N, dtype=np.int8)
        for j in range(self.N):
            if at_up[j] and np.isfinite(self.hi[j]):
                state[j] = _AT_UP
            elif np.isfinite(self.lo[j]):
                state[j] = _AT_LO
            elif np.isfinite(self.hi[j]):
                state[j] = _AT_UP
            else:
                state[j] = _FREE
        state[basic] = _BASIC
        # artificials must stay pinned at zero in a warm start
        for j in range(n + m, self.N):
            if state[j] != _BASIC:
                state[j] = _AT_LO
        self.state = state
        self.basis = basic
        # artificial signs are not persisted; identity columns are fine, and
        # locking them at zero rejects any warm basis that would reactivate one
        self.T[:, n + m:] = np.eye(m)
        self.hi[n + m:] = 0.0
        try:
            self._refactor()
        except LpError:
            return False
        slack = FEAS_TOL * (1.0 + float(np.max(np.abs(self.b), initial=0.0)))
        if np.any(self.xB < self.lo[self.basis] - slack):
            return False
        if np.any(self.xB > self.hi[self.basis] + slack):
            return False
        self.xB = np.clip(self.xB, self.lo[self.basis], self.hi[self.basis])
        return True

    # -- pricing and ratio test -------------------------------------------
    def _pivot_loop(self, costs: np.ndarray, allow: np.ndarray, max_iter: int) -> str:
        stall = 0
        eta = 0
        while True:
            if self.iterations > max_iter:
                raise LpError("simplex iteration limit exceeded")
            self.iterations += 1
            cB = costs[self.basis]
            y = cB @ self.B_inv
            d = costs - y @ self.T
            at_lo = self.state == _AT_LO
            at_up = self.state == _AT_UP
            free = self.state == _FREE
            score = np.zeros(self.N)
            score[at_lo] = -d[at_lo]
            score[at_up] = d[at_up]
            score[free] = np.abs(d[free])
            score[~allow] = 0.0
            eligible = score > DUAL_TOL
            if not np.any(eligible):
                return OPTIMAL
            if stall >= STALL_THRESHOLD:
                q = int(np.flatnonzero(eligible)[0])  # Bland: least index
            else:
                q = int(np.argmax(score))  # Dantzig; argmax ties go to least index
            sigma = 1.0 if (self.state[q] == _AT_LO or
                            (self.state[q] == _FREE and d[q] < 0)) else -1.0
            w = self.B_inv @ self.T[:, q]
            # ratio test: keep every basic variable inside its bounds
            t_best = self.hi[q] - self.lo[q]  # bound flip distance (may be inf)
            leave_pos = -1
            sw = sigma * w
            lo_B = self.lo[self.basis]
            hi_B = self.hi[self.basis]
            dec = sw > PIVOT_TOL
            inc = sw < -PIVOT_TOL
            with np.errstate(divide="ignore", invalid="ignore"):
                t_dec = np.where(dec, (self.xB - lo_B) / np.where(dec, sw, 1.0), np.inf)
                t_inc = np.where(inc, (hi_B - self.xB) / np.where(inc, -sw, 1.0), np.inf)
            t_rows = np.minimum(t_dec, t_inc)
            t_rows = np.maximum(t_rows, 0.0)
            if t_rows.size:
                # deterministic tie-break: smallest blocking column index
                t_min = float(np.min(t_rows))
                if t_min < t_best:
                    cand = np.flatnonzero(t_rows <= t_min + 1e-12 * (1.0 + t_min))
                    leave_pos = int(cand[np.argmin(self.basis[cand])])
                    t_best = t_min
            if not np.isfinite(t_best):
                return UNBOUNDED
            t_best = max(t_best, 0.0)
            stall = stall + 1 if t_best <= 1e-11 else 0
            if leave_pos < 0:
                # entering variable flips between its own bounds
                self.xB -= sw * t_best
                self.state[q] = _AT_UP if sigma > 0 else _AT_LO
            else:
                enter_val = self._nonbasic_value(q) + sigma * t_best
                self.xB -= sw * t_best
                lv = self.basis[leave_pos]
                hit_lower = dec[leave_pos]
                self.state[lv] = _AT_LO if hit_lower else _AT_UP
                self.basis[leave_pos] = q
                self.state[q] = _BASIC
                self.xB[leave_pos] = enter_val
                # eta update of the explicit inverse
                piv = w[leave_pos]
                if abs(piv) < PIVOT_TOL:
                    raise LpError("vanishing pivot element")
                row = self.B_inv[leave_pos, :] / piv
                self.B_inv -= np.outer(w, row)
                self.B_inv[leave_pos, :] = row
                eta += 1
                if eta % self.REFACTOR_EVERY == 0:
                    self._refactor()

    # -- driver ------------------------------------------------------------
    def solve(self, warm_basis: LpBasis | None = None) -> LpSolution:
        n, m = self.n, self.m
        if m == 0:
            return self._solve_unconstrained()
        max_iter = self.MAX_ITER_BASE + 200 * (n + m)
        costs2 = np.zeros(self.N)
        costs2[:n] = self.lp.c
        allow2 = np.ones(self.N, dtype=bool)
        allow2[n + m:] = False

        warm_ok = warm_basis is not None and self._try_warm_start(warm_basis)
        if warm_basis is not None and not warm_ok:
            log.debug("warm basis incompatible or infeasible; cold start")
        if not warm_ok:
            self._cold_start()
            costs1 = np.zeros(self.N)
            costs1[n + m:] = 1.0
            status = self._pivot_loop(costs1, np.ones(self.N, dtype=bool), max_iter)
            if status != OPTIMAL:
                raise LpError("phase 1 terminated abnormally")
            infeas = float(costs1[self.basis] @ self.xB)
            if infeas > FEAS_TOL * (1.0 + float(np.max(np.abs(self.b), initial=0.0))):
                return LpSolution(status=INFEASIBLE, iterations=self.iterations)
            self.hi[n + m:] = 0.0  # artificials are locked for phase 2
            self.xB = np.clip(self.xB, self.lo[self.basis], self.hi[self.basis])

        status = self._pivot_loop(costs2, allow2, max_iter)
        if status == UNBOUNDED:
            return LpSolution(status=UNBOUNDED, iterations=self.iterations)
        self._refactor()
        v = self._values_vector()
        x = v[:n].copy()
        y = costs2[self.basis] @ self.B_inv
        reduced = self.lp.c - y @ self.T[:, :n]
        basis = LpBasis(basic=self.basis.copy(),
                        at_upper=(self.state == _AT_UP).copy())
        return LpSolution(
            status=OPTIMAL,
            x=x,
            objective=float(self.lp.c @ x),
            duals=y.copy(),
            reduced_costs=reduced,
            basis=basis,
            iterations=self.iterations,
        )

    def _solve_unconstrained(self) -> LpSolution:
        c = self.lp.c
        x = np.zeros(self.n)
        for j in range(self.n):
            if c[j] > 0:
                x[j] = self.lp.lower[j]
            elif c[j] < 0:
                x[j] = self.lp.upper[j]
            else:
                x[j] = self.lp.lower[j] if np.isfinite(self.lp.lower[j]) else \
                    min(self.lp.upper[j], 0.0)
            if not np.isfinite(x[j]):
                return LpSolution(status=UNBOUNDED)
        return LpSolution(status=OPTIMAL, x=x, objective=float(c @ x),
                          duals=np.zeros(0), reduced_costs=c.copy())
