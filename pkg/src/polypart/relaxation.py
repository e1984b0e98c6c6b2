"""Convex MILP relaxations of multilinear models.

Builds, per product term, the chain of bilinear links in lexicographic
grouping order and relaxes each link:

* continuous x continuous links get piecewise McCormick envelopes driven by
  per-variable partition maps, with binary partition selectors, selection and
  linking rows, selector-times-variable products linearized exactly, and
  selector-pair products linearized entry-wise;
* links involving one binary variable get a plain McCormick envelope over
  the unit box, which is exact at integral points;
* binary x binary links get the three-row exact product linearization;
* squared links (both ends the same column) get the piecewise convex
  quadratic treatment: a piecewise secant overestimator plus a conic
  underestimator enforced lazily through tangent cutting planes.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .milp import Cut, MilpProblem
from .model import (BINARY, Model, ModelError, interval_product)
from .simplex import LinearProgram, LpBuilder, solve_lp

OA_TOL = 1e-7          # violation threshold before a tangent cut is emitted
MIN_PARTITION_GAP = 1e-12

MODE_MC = "mc"
MODE_UTMC = "utmc"
MODE_DTMC = "dtmc"


# ----------------------------------------------------------------------
# partition maps
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class PartitionMap:
    """Ordered breakpoints over a variable domain; one entry per variable.

    ``breakpoints[0]`` and ``breakpoints[-1]`` are the variable bounds, the
    k-th partition (1-based) is ``[breakpoints[k-1], breakpoints[k]]`` and
    ``active`` names the partition currently containing the solution.
    A single partition encodes "no partitioning".
    """

    breakpoints: tuple
    active: int = 1

    def __post_init__(self):
        bp = self.breakpoints
        if len(bp) < 2:
            raise ModelError("a partition map needs at least two breakpoints")
        if len(bp) > 2 or bp[0] != bp[-1]:
            gaps = np.diff(bp)
            if np.any(gaps < MIN_PARTITION_GAP):
                raise ModelError(f"breakpoints not strictly increasing: {bp}")
        if not 1 <= self.active <= self.size:
            raise ModelError(f"active partition {self.active} outside 1..{self.size}")

    @property
    def size(self) -> int:
        return len(self.breakpoints) - 1

    @property
    def lower(self) -> float:
        return self.breakpoints[0]

    @property
    def upper(self) -> float:
        return self.breakpoints[-1]

    def partition(self, k: int) -> tuple:
        return (self.breakpoints[k - 1], self.breakpoints[k])

    def active_partition(self) -> tuple:
        return self.partition(self.active)

    def sizes(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def locate(self, x: float) -> int:
        """1-based partition containing x; breakpoint ties go left."""
        k = bisect.bisect_left(self.breakpoints, x)
        return min(max(k, 1), self.size)

    def with_active(self, k: int) -> "PartitionMap":
        return PartitionMap(self.breakpoints, k)

    @staticmethod
    def single(lower: float, upper: float) -> "PartitionMap":
        return PartitionMap((float(lower), float(upper)))

    @staticmethod
    def uniform(lower: float, upper: float, n: int) -> "PartitionMap":
        if n < 1:
            raise ModelError("need at least one partition")
        if upper - lower < MIN_PARTITION_GAP or n == 1:
            return PartitionMap.single(lower, upper)
        pts = tuple(np.linspace(lower, upper, n + 1).tolist())
        return PartitionMap(pts)

    def is_uniform(self, rel_tol: float = 1e-9) -> bool:
        gaps = self.sizes()
        if gaps.size <= 1:
            return True
        return float(gaps.max() - gaps.min()) <= rel_tol * max(float(gaps.max()), 1.0)


# ----------------------------------------------------------------------
# elementary envelopes (coefficient form on (z, x_i, x_j))
# ----------------------------------------------------------------------

def mccormick_bilinear(bounds_i: tuple, bounds_j: tuple) -> list:
    """Four-row envelope of z = x_i * x_j over a finite box.

    Rows are ``((cz, ci, cj), relation, rhs)`` meaning
    ``cz*z + ci*x_i + cj*x_j  relation  rhs``.
    """
    li, ui = bounds_i
    lj, uj = bounds_j
    for v in (li, ui, lj, uj):
        if not math.isfinite(v):
            raise ModelError("McCormick envelope requires finite bounds")
    return [
        ((1.0, -lj, -li), ">=", -li * lj),
        ((1.0, -uj, -ui), ">=", -ui * uj),
        ((1.0, -uj, -li), "<=", -li * uj),
        ((1.0, -lj, -ui), "<=", -ui * lj),
    ]


def mccormick_binary() -> list:
    """Exact three-row linearization of a product of two binaries.

    Rows are ``((cz, ci, cj), relation, rhs)``; the auxiliary additionally
    carries bounds [0, 1].
    """
    return [
        ((1.0, -1.0, 0.0), "<=", 0.0),
        ((1.0, 0.0, -1.0), "<=", 0.0),
        ((1.0, -1.0, -1.0), ">=", -1.0),
    ]


@dataclass(frozen=True)
class Link:
    """One bilinear step of a grouped product chain."""

    left_key: tuple      # key of the left factor (an original var or a prefix)
    right: int           # variable index of the right factor
    out_key: tuple       # key defined by this link
    interval: tuple      # interval-arithmetic range of the output


def group_lexicographic(key: tuple, bounds: dict) -> list:
    """Chain a product key into successive bilinear links.

    ``bounds`` maps each variable index of ``key`` to its interval.  The
    first link multiplies the first two entries; each following link
    multiplies the running prefix by the next entry.
    """
    if len(key) < 2:
        raise ModelError(f"key {key} has degree < 2")
    links = []
    lo, hi = bounds[key[0]]
    prefix = (key[0],)
    for nxt in key[1:]:
        lo2, hi2 = bounds[nxt]
        if prefix == (nxt,):
            lo_out = 0.0 if lo <= 0.0 <= hi else min(lo * lo, hi * hi)
            hi_out = max(lo * lo, hi * hi)
        else:
            lo_out, hi_out = interval_product(lo, hi, lo2, hi2)
        out = tuple(sorted(prefix + (nxt,)))
        links.append(Link(prefix, nxt, out, (lo_out, hi_out)))
        prefix = out
        lo, hi = lo_out, hi_out
    return links


# ----------------------------------------------------------------------
# relaxation assembly
# ----------------------------------------------------------------------

@dataclass
class RelaxedMILP:
    """A relaxation MILP plus the bookkeeping to interpret its columns."""

    problem: MilpProblem
    obj_offset: float
    var_map: dict                 # model variable index -> column
    aux_map: dict                 # product key -> column
    selector_map: dict            # partitioned column -> selector columns
    product_binary_map: dict      # ((col_i, k), (col_j, m)) -> product column
    binaries_added: int
    pmaps: dict                   # column -> PartitionMap actually used
    oa_specs: tuple               # (x_col, target_col) pairs with target >= x^2
    links: tuple                  # (left_col, right_col, target_col) in order
    selx_entries: tuple           # (selector_col, x_col, aux_col)
    model: Model

    def n_cols(self) -> int:
        return self.problem.lp.n_cols

    def selector_counts(self) -> dict:
        return {col: len(cols) for col, cols in self.selector_map.items()}

    def make_cut_callback(self):
        specs = self.oa_specs

        def callback(point: np.ndarray) -> list:
            cuts = []
            for x_col, t_col in specs:
                xv = float(point[x_col])
                if point[t_col] < xv * xv - OA_TOL:
                    cuts.append(Cut.make({t_col: 1.0, x_col: -2.0 * xv}, ">=", -xv * xv))
            return cuts

        return callback

    def lift_point(self, model_point) -> np.ndarray:
        """Extend a feasible model point to all relaxation columns.

        Product targets are recomputed from the original variables, selectors
        are set one-hot from the partition containing each value, and the
        linearization auxiliaries take their defining product values.
        """
        v = np.zeros(self.n_cols())
        model_point = np.asarray(model_point, dtype=float)
        v[: model_point.shape[0]] = model_point
        for a, b, t in self.links:
            v[t] = v[a] * v[b]
        for col, sels in self.selector_map.items():
            pm = self.pmaps[col]
            k = pm.locate(float(v[col]))
            v[sels[k - 1]] = 1.0
        for sel_col, x_col, aux_col in self.selx_entries:
            v[aux_col] = v[sel_col] * v[x_col]
        for ((ci, k), (cj, m)), col in self.product_binary_map.items():
            v[col] = v[self.selector_map[ci][k]] * v[self.selector_map[cj][m]]
        return v


def row_violation(lp: LinearProgram, point: np.ndarray) -> float:
    """Largest constraint violation of ``point`` (0 when feasible)."""
    resid = lp.A @ point - lp.b
    worst = 0.0
    for i, rel in enumerate(lp.relations):
        if rel == "<=":
            worst = max(worst, resid[i])
        elif rel == ">=":
            worst = max(worst, -resid[i])
        else:
            worst = max(worst, abs(resid[i]))
    lo = float(np.max(lp.lower - point, initial=0.0))
    hi = float(np.max(point - lp.upper, initial=0.0))
    return max(worst, lo, hi)


class _Assembler:
    """Incrementally emits relaxation blocks into an LP builder."""

    def __init__(self):
        self.lp = LpBuilder()
        self.integral: list = []
        self.binaries_added = 0
        self.selector_map: dict = {}
        self.product_binary_map: dict = {}
        self.pmaps: dict = {}
        self.oa_specs: list = []
        self.links: list = []
        self.selx_entries: list = []
        self._selx_cache: dict = {}
        self._pair_cache: dict = {}
        self._emitted_targets: set = set()

    # -- columns ---------------------------------------------------------
    def add_col(self, lower, upper, name=None, integral=False) -> int:
        col = self.lp.add_col(lower, upper, 0.0, name)
        if integral:
            self.integral.append(col)
        return col

    def col_bounds(self, col: int) -> tuple:
        return self.lp._lower[col], self.lp._upper[col]

    # -- selector machinery -----------------------------------------------
    def selectors(self, x_col: int, pmap: PartitionMap):
        """Selector columns with selection and domain-linking rows.

        Returns None for single-partition maps: the block then reduces to a
        plain envelope with the partition bounds substituted as constants.
        """
        if pmap.size == 1:
            return None
        if x_col in self.selector_map:
            return self.selector_map[x_col]
        cols = [self.add_col(0.0, 1.0, f"sel[{x_col},{k}]", integral=True)
                for k in range(1, pmap.size + 1)]
        self.binaries_added += len(cols)
        self.selector_map[x_col] = cols
        self.pmaps[x_col] = pmap
        self.lp.add_row({c: 1.0 for c in cols}, "=", 1.0)
        bp = pmap.breakpoints
        lo_row = {cols[k]: bp[k] for k in range(pmap.size)}
        lo_row[x_col] = -1.0
        self.lp.add_row(lo_row, "<=", 0.0)          # sum lo_k*y_k <= x
        hi_row = {cols[k]: bp[k + 1] for k in range(pmap.size)}
        hi_row[x_col] = -1.0
        self.lp.add_row(hi_row, ">=", 0.0)          # x <= sum hi_k*y_k
        return cols

    def _sel_times_x(self, sel_owner: int, x_col: int):
        """Auxiliaries v_k = selector_k(owner) * x, linearized exactly."""
        key = (sel_owner, x_col)
        if key in self._selx_cache:
            return self._selx_cache[key]
        sels = self.selector_map[sel_owner]
        lo, hi = self.col_bounds(x_col)
        out = []
        for k, s in enumerate(sels):
            v = self.add_col(min(0.0, lo), max(0.0, hi), f"selx[{sel_owner},{k},{x_col}]")
            # exact McCormick of binary * bounded continuous
            self.lp.add_row({v: 1.0, s: -lo}, ">=", 0.0)
            self.lp.add_row({v: 1.0, x_col: -1.0, s: -hi}, ">=", -hi)
            self.lp.add_row({v: 1.0, s: -hi}, "<=", 0.0)
            self.lp.add_row({v: 1.0, x_col: -1.0, s: -lo}, "<=", -lo)
            if sel_owner == x_col:
                # self product: when selector k is on, x sits in partition k,
                # so the partition bounds are valid coefficients here
                p_lo, p_hi = self.pmaps[sel_owner].partition(k + 1)
                self.lp.add_row({v: 1.0, s: -p_lo}, ">=", 0.0)
                self.lp.add_row({v: 1.0, s: -p_hi}, "<=", 0.0)
            self.selx_entries.append((s, x_col, v))
            out.append(v)
        # selectors are one-hot, so the disaggregated pieces sum back to x
        row = {v: 1.0 for v in out}
        row[x_col] = row.get(x_col, 0.0) - 1.0
        self.lp.add_row(row, "=", 0.0)
        self._selx_cache[key] = out
        return out

    def _pair_products(self, ci: int, cj: int):
        """Entry-wise exact products of two selector vectors (ci != cj)."""
        a, b = (ci, cj) if ci <= cj else (cj, ci)
        key = (a, b)
        if key in self._pair_cache:
            return self._pair_cache[key]
        sa, sb = self.selector_map[a], self.selector_map[b]
        grid = {}
        for k, ya in enumerate(sa):
            for m, yb in enumerate(sb):
                p = self.add_col(0.0, 1.0, f"selp[{a},{k},{b},{m}]", integral=True)
                self.binaries_added += 1
                self.lp.add_row({p: 1.0, ya: -1.0}, "<=", 0.0)
                self.lp.add_row({p: 1.0, yb: -1.0}, "<=", 0.0)
                self.lp.add_row({p: 1.0, ya: -1.0, yb: -1.0}, ">=", -1.0)
                grid[(k, m)] = p
                self.product_binary_map[((a, k), (b, m))] = p
        # redundant at integral points, but the aggregated marginals tighten
        # the continuous relaxation considerably
        for k, ya in enumerate(sa):
            row = {grid[(k, m)]: 1.0 for m in range(len(sb))}
            row[ya] = -1.0
            self.lp.add_row(row, "=", 0.0)
        for m, yb in enumerate(sb):
            row = {grid[(k, m)]: 1.0 for k in range(len(sa))}
            row[yb] = -1.0
            self.lp.add_row(row, "=", 0.0)
        self._pair_cache[key] = grid
        return grid

    def _self_products(self, ci: int):
        """Upper-triangle products of a selector vector with itself.

        Diagonal entries are the selectors themselves (a binary squared).
        """
        key = (ci, ci)
        if key in self._pair_cache:
            return self._pair_cache[key]
        sels = self.selector_map[ci]
        grid = {}
        for k, ya in enumerate(sels):
            grid[(k, k)] = ya
            for m in range(k + 1, len(sels)):
                yb = sels[m]
                p = self.add_col(0.0, 1.0, f"selp[{ci},{k},{ci},{m}]", integral=True)
                self.binaries_added += 1
                self.lp.add_row({p: 1.0, ya: -1.0}, "<=", 0.0)
                self.lp.add_row({p: 1.0, yb: -1.0}, "<=", 0.0)
                self.lp.add_row({p: 1.0, ya: -1.0, yb: -1.0}, ">=", -1.0)
                grid[(k, m)] = p
                self.product_binary_map[((ci, k), (ci, m))] = p
        # off-diagonal entries multiply two one-hot components of the same
        # selector, so every one of them vanishes at integral points
        off_diag = {grid[(k, m)]: 1.0
                    for k in range(len(sels)) for m in range(k + 1, len(sels))}
        if off_diag:
            self.lp.add_row(off_diag, "=", 0.0)
        self._pair_cache[key] = grid
        return grid

    # -- expression pieces --------------------------------------------------
    def _weighted_side(self, x_col, sels, weights, other_col):
        """Expansion of (weights . selectors) * other as (coeffs, const)."""
        if sels is None:
            return {other_col: weights[0]}, 0.0
        vcols = self._sel_times_x(x_col, other_col)
        return {v: w for v, w in zip(vcols, weights)}, 0.0

    def _weighted_product(self, ci, sels_i, wi, cj, sels_j, wj):
        """Expansion of (wi . sel_i)(wj . sel_j) as (coeffs, const)."""
        if sels_i is None and sels_j is None:
            return {}, wi[0] * wj[0]
        if sels_i is None:
            return {s: wi[0] * w for s, w in zip(sels_j, wj)}, 0.0
        if sels_j is None:
            return {s: wj[0] * w for s, w in zip(sels_i, wi)}, 0.0
        if ci == cj:
            grid = self._self_products(ci)
            coeffs: dict = {}
            n = len(sels_i)
            for k in range(n):
                for m in range(k, n):
                    col = grid[(k, m)]
                    coef = wi[k] * wj[m] if k == m else wi[k] * wj[m] + wi[m] * wj[k]
                    coeffs[col] = coeffs.get(col, 0.0) + coef
            return coeffs, 0.0
        grid = self._pair_products(ci, cj)
        a, b = (ci, cj) if ci <= cj else (cj, ci)
        wa, wb = (wi, wj) if ci <= cj else (wj, wi)
        coeffs = {}
        for (k, m), col in grid.items():
            coeffs[col] = coeffs.get(col, 0.0) + wa[k] * wb[m]
        return coeffs, 0.0

    @staticmethod
    def _merge(target: dict, part: dict, sign: float) -> None:
        for col, coef in part.items():
            target[col] = target.get(col, 0.0) + sign * coef

    # -- blocks ---------------------------------------------------------
    def piecewise_mccormick(self, z_col: int, xi_col: int, xj_col: int,
                            pmap_i: PartitionMap, pmap_j: PartitionMap) -> None:
        """Piecewise envelope of z = x_i * x_j for partitioned domains."""
        sels_i = self.selectors(xi_col, pmap_i)
        sels_j = self.selectors(xj_col, pmap_j)
        bp_i, bp_j = pmap_i.breakpoints, pmap_j.breakpoints
        lo_i, hi_i = bp_i[:-1], bp_i[1:]
        lo_j, hi_j = bp_j[:-1], bp_j[1:]
        cases = [
            (lo_i, lo_j, ">="),
            (hi_i, hi_j, ">="),
            (lo_i, hi_j, "<="),
            (hi_i, lo_j, "<="),
        ]
        for wi, wj, rel in cases:
            row = {z_col: 1.0}
            t1, c1 = self._weighted_side(xi_col, sels_i, wi, xj_col)
            t2, c2 = self._weighted_side(xj_col, sels_j, wj, xi_col)
            t3, c3 = self._weighted_product(xi_col, sels_i, wi, xj_col, sels_j, wj)
            self._merge(row, t1, -1.0)
            self._merge(row, t2, -1.0)
            self._merge(row, t3, +1.0)
            self.lp.add_row(row, rel, c1 + c2 - c3)

    def piecewise_quadratic(self, t_col: int, x_col: int,
                            pmap: PartitionMap) -> None:
        """Piecewise convex region for t = x^2.

        Emits the piecewise secant overestimator (selector products expanded
        entry-wise, diagonal entries substituted by the selectors) plus one
        seeded tangent per breakpoint; the conic side t >= x^2 itself is
        enforced lazily by the registered cut generator.
        """
        sels = self.selectors(x_col, pmap)
        bp = pmap.breakpoints
        lo, hi = bp[:-1], bp[1:]
        row = {t_col: 1.0}
        t1, c1 = self._weighted_side(x_col, sels, [a + b for a, b in zip(lo, hi)], x_col)
        t3, c3 = self._weighted_product(x_col, sels, lo, x_col, sels, hi)
        self._merge(row, t1, -1.0)
        self._merge(row, t3, +1.0)
        self.lp.add_row(row, "<=", c1 - c3)
        for p in bp:
            self.lp.add_row({t_col: 1.0, x_col: -2.0 * p}, ">=", -p * p)
        self.oa_specs.append((x_col, t_col))

    def binary_product(self, z_col: int, yi_col: int, yj_col: int) -> None:
        for (cz, ci, cj), rel, rhs in mccormick_binary():
            self.lp.add_row({z_col: cz, yi_col: ci, yj_col: cj}, rel, rhs)

    def plain_mccormick(self, z_col: int, xi_col: int, xj_col: int) -> None:
        rows = mccormick_bilinear(self.col_bounds(xi_col), self.col_bounds(xj_col))
        for (cz, ci, cj), rel, rhs in rows:
            row = {z_col: cz}
            row[xi_col] = row.get(xi_col, 0.0) + ci
            row[xj_col] = row.get(xj_col, 0.0) + cj
            self.lp.add_row(row, rel, rhs)


# ----------------------------------------------------------------------
# whole-model assembly
# ----------------------------------------------------------------------

def build_relaxation(model: Model, pmaps: dict, mode: str = MODE_DTMC) -> RelaxedMILP:
    """Assemble the relaxation MILP of a normalized model.

    ``pmaps`` maps original continuous variable indices (those appearing in
    product terms) to their partition maps; term auxiliaries and binaries are
    never partitioned and receive implicit single-partition maps.  ``mode``
    only validates the maps: 'mc' demands single partitions everywhere,
    'utmc' demands uniform grids, 'dtmc' accepts anything.
    """
    mode = mode.lower()
    if mode not in (MODE_MC, MODE_UTMC, MODE_DTMC):
        raise ModelError(f"unknown relaxation mode {mode!r}")
    if not model.is_normalized():
        raise ModelError("build_relaxation needs a normalized model")
    aux_ids = model.aux_indices()
    for i in model.term_variables():
        if i not in pmaps:
            raise ModelError(
                f"variable {model.variables[i].name!r} appears in a product "
                f"term but has no partition map")
    for i, pm in pmaps.items():
        v = model.variables[i]
        if mode == MODE_MC and pm.size != 1:
            raise ModelError("mode 'mc' requires single-partition maps")
        if mode == MODE_UTMC and not pm.is_uniform():
            raise ModelError("mode 'utmc' requires uniform partition maps")
        if abs(pm.lower - v.lower) > 1e-9 * (1 + abs(v.lower)) or \
           abs(pm.upper - v.upper) > 1e-9 * (1 + abs(v.upper)):
            raise ModelError(
                f"partition map of {v.name!r} does not span its domain")

    asm = _Assembler()
    # one column per model variable, in index order
    for v in model.variables:
        asm.add_col(v.lower, v.upper, v.name, integral=(v.kind == BINARY))
    model_binaries = list(asm.integral)

    # model rows and objective
    obj_offset = 0.0
    obj = np.zeros(model.n_vars)
    for key, coef in model.objective.items():
        if len(key) == 0:
            obj_offset += coef
        else:
            obj[key[0]] += coef
    for j, cj in enumerate(obj):
        if cj:
            asm.lp.set_objective_coef(j, float(cj))
    for c in model.constraints:
        row: dict = {}
        rhs = c.rhs
        for key, coef in c.expr.items():
            if len(key) == 0:
                rhs -= coef
            else:
                row[key[0]] = row.get(key[0], 0.0) + coef
        asm.lp.add_row(row, c.relation, rhs)

    # effective partition maps per column
    def pmap_for(col: int) -> PartitionMap:
        if col in pmaps and col not in aux_ids:
            return pmaps[col]
        lo, hi = asm.col_bounds(col)
        return PartitionMap.single(lo, hi)

    aux_map = {t.key: t.aux for t in model.terms}
    key_col: dict = dict(aux_map)
    bounds_by_idx = {v.index: (v.lower, v.upper) for v in model.variables}

    def is_binary_col(col: int) -> bool:
        return col < model.n_vars and model.variables[col].kind == BINARY

    for term in model.terms:
        for link in group_lexicographic(term.key, bounds_by_idx):
            if link.out_key == term.key:
                target = term.aux
            elif link.out_key in key_col:
                target = key_col[link.out_key]
            else:
                lo, hi = link.interval
                target = asm.add_col(lo, hi, f"grp{link.out_key}")
                key_col[link.out_key] = target
                aux_map[link.out_key] = target
            if target in asm._emitted_targets:
                continue
            asm._emitted_targets.add(target)
            left = key_col[link.left_key] if len(link.left_key) > 1 else link.left_key[0]
            right = link.right
            asm.links.append((left, right, target))
            if left == right:
                asm.piecewise_quadratic(target, left, pmap_for(left))
            elif is_binary_col(left) and is_binary_col(right):
                asm.binary_product(target, left, right)
            elif is_binary_col(left) or is_binary_col(right):
                asm.plain_mccormick(target, left, right)
            else:
                asm.piecewise_mccormick(target, left, right,
                                        pmap_for(left), pmap_for(right))

    lp = asm.lp.build()
    rmilp = RelaxedMILP(
        problem=MilpProblem(lp, np.array(sorted(asm.integral), dtype=int), None),
        obj_offset=obj_offset,
        var_map={v.index: v.index for v in model.variables},
        aux_map=aux_map,
        selector_map=dict(asm.selector_map),
        product_binary_map=dict(asm.product_binary_map),
        binaries_added=asm.binaries_added,
        pmaps=dict(asm.pmaps),
        oa_specs=tuple(asm.oa_specs),
        links=tuple(asm.links),
        selx_entries=tuple(asm.selx_entries),
        model=model,
    )
    rmilp.problem.cut_callback = rmilp.make_cut_callback()
    return rmilp


# ----------------------------------------------------------------------
# quadratic region pair used to compare conic against paired-tangent form
# ----------------------------------------------------------------------

@dataclass
class QuadraticRegion:
    """Polyhedral (x, t) region of one squared link, with pinning solves."""

    lp: LinearProgram
    x_col: int
    t_col: int
    selector_cols: list
    pmap: PartitionMap

    def range_at(self, x_value: float, backend: str | None = None) -> tuple:
        """(min t, max t) over the region at fixed x; selectors pinned."""
        lower = self.lp.lower.copy()
        upper = self.lp.upper.copy()
        lower[self.x_col] = upper[self.x_col] = float(x_value)
        if self.selector_cols:
            k = self.pmap.locate(float(x_value))
            for idx, col in enumerate(self.selector_cols, start=1):
                val = 1.0 if idx == k else 0.0
                lower[col] = upper[col] = val
        out = []
        for sense in (1.0, -1.0):
            c = np.zeros(self.lp.n_cols)
            c[self.t_col] = sense
            sub = LinearProgram(c=c, A=self.lp.A, relations=self.lp.relations,
                                b=self.lp.b, lower=lower, upper=upper)
            sol = solve_lp(sub, backend=backend)
            if sol.status != "optimal":
                raise ModelError(f"region solve returned {sol.status}")
            out.append(sense * sol.objective)
        return out[0], out[1]


def lemma1_regions(bounds: tuple, pmap: PartitionMap,
                   tangents_per_partition: int = 64) -> tuple:
    """Two polyhedral descriptions of a squared link over one partition map.

    Returns ``(conic, paired)`` regions: the first replaces t >= x^2 by dense
    tangent sampling (at least ``tangents_per_partition`` per partition); the
    second uses only the two tangents anchored at each partition's endpoints,
    which is what treating the square as a generic self-product yields.
    The first region is contained in the second.
    """
    out = []
    for style in ("conic", "paired"):
        asm = _Assembler()
        x = asm.add_col(*bounds, "x")
        t = asm.add_col(-np.inf, np.inf, "t")
        sels = asm.selectors(x, pmap)
        bp = pmap.breakpoints
        lo, hi = bp[:-1], bp[1:]
        row = {t: 1.0}
        t1, c1 = asm._weighted_side(x, sels, [a + b for a, b in zip(lo, hi)], x)
        t3, c3 = asm._weighted_product(x, sels, lo, x, sels, hi)
        asm._merge(row, t1, -1.0)
        asm._merge(row, t3, +1.0)
        asm.lp.add_row(row, "<=", c1 - c3)
        if style == "conic":
            for k in range(pmap.size):
                for p in np.linspace(bp[k], bp[k + 1], tangents_per_partition):
                    asm.lp.add_row({t: 1.0, x: -2.0 * p}, ">=", -p * p)
        else:
            for wvec in (lo, hi):
                row = {t: 1.0}
                ta, ca = asm._weighted_side(x, sels, [2.0 * w for w in wvec], x)
                tb, cb = asm._weighted_product(x, sels, wvec, x, sels, wvec)
                asm._merge(row, ta, -1.0)
                asm._merge(row, tb, +1.0)
                asm.lp.add_row(row, ">=", ca - cb)
        out.append(QuadraticRegion(lp=asm.lp.build(), x_col=x, t_col=t,
                                   selector_cols=list(asm.selector_map.get(x, [])),
                                   pmap=pmap))
    return out[0], out[1]


@dataclass
class BilinearRegion:
    """Polyhedral (x_i, x_j, z) region of one bilinear link."""

    lp: LinearProgram
    xi_col: int
    xj_col: int
    z_col: int
    sel_i: list
    sel_j: list
    pmap_i: PartitionMap
    pmap_j: PartitionMap

    def range_at(self, xi: float, xj: float, backend: str | None = None) -> tuple:
        """(min z, max z) at a fixed point; selectors pinned to its partitions."""
        lower = self.lp.lower.copy()
        upper = self.lp.upper.copy()
        lower[self.xi_col] = upper[self.xi_col] = float(xi)
        lower[self.xj_col] = upper[self.xj_col] = float(xj)
        for cols, pm, val in ((self.sel_i, self.pmap_i, xi),
                              (self.sel_j, self.pmap_j, xj)):
            if cols:
                k = pm.locate(float(val))
                for idx, col in enumerate(cols, start=1):
                    pin = 1.0 if idx == k else 0.0
                    lower[col] = upper[col] = pin
        out = []
        for sense in (1.0, -1.0):
            c = np.zeros(self.lp.n_cols)
            c[self.z_col] = sense
            sub = LinearProgram(c=c, A=self.lp.A, relations=self.lp.relations,
                                b=self.lp.b, lower=lower, upper=upper)
            sol = solve_lp(sub, backend=backend)
            if sol.status != "optimal":
                raise ModelError(f"region solve returned {sol.status}")
            out.append(sense * sol.objective)
        return out[0], out[1]


def bilinear_region(bounds_i: tuple, bounds_j: tuple, pmap_i: PartitionMap,
                    pmap_j: PartitionMap) -> BilinearRegion:
    """Standalone piecewise envelope block for one bilinear product."""
    asm = _Assembler()
    xi = asm.add_col(*bounds_i, "xi")
    xj = asm.add_col(*bounds_j, "xj")
    lo, hi = interval_product(*bounds_i, *bounds_j)
    z = asm.add_col(lo, hi, "z")
    asm.piecewise_mccormick(z, xi, xj, pmap_i, pmap_j)
    return BilinearRegion(lp=asm.lp.build(), xi_col=xi, xj_col=xj, z_col=z,
                          sel_i=list(asm.selector_map.get(xi, [])),
                          sel_j=list(asm.selector_map.get(xj, [])),
                          pmap_i=pmap_i, pmap_j=pmap_j)
