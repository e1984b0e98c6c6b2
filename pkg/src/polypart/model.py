"""Data model for box-bounded mixed-integer programs with product terms.

A :class:`Model` holds continuous variables with finite box bounds, binary
variables, linear constraints, a linear objective (always minimization), and
a list of product terms.  Expressions are stored sparsely as mappings from
index tuples to coefficients: ``{(): 3.0, (0,): 2.0, (0, 1): -1.0}`` encodes
``3 + 2*x0 - x0*x1``.  A model is *normalized* when every constraint and the
objective are linear, i.e. every key has length <= 1, and every product of
degree >= 2 has been replaced by an auxiliary variable defined through a
:class:`ProductTerm`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

CONTINUOUS = "continuous"
BINARY = "binary"

RELATIONS = ("<=", "=", ">=")

Key = tuple  # sorted tuple of variable indices; repeats encode powers
Expr = dict  # Key -> float coefficient; () holds the constant part


class ModelError(ValueError):
    """Raised for structurally invalid models or points."""


@dataclass(frozen=True)
class Variable:
    index: int
    kind: str
    lower: float
    upper: float
    name: str

    def is_binary(self) -> bool:
        return self.kind == BINARY

    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class Constraint:
    name: str
    expr: Expr
    relation: str
    rhs: float


@dataclass(frozen=True)
class ProductTerm:
    """A product of variables, ``aux = prod(x[i] for i in key)``."""

    key: Key
    aux: int

    @property
    def degree(self) -> int:
        return len(self.key)

    def is_monomial(self) -> bool:
        return len(set(self.key)) == 1


def expr_add(dst: Expr, key: Key, coef: float) -> None:
    """Accumulate ``coef`` on ``key``, dropping exact-zero entries."""
    c = dst.get(key, 0.0) + coef
    if c == 0.0:
        dst.pop(key, None)
    else:
        dst[key] = c


def expr_degree(expr: Expr) -> int:
    return max((len(k) for k in expr), default=0)


def is_linear(expr: Expr) -> bool:
    return expr_degree(expr) <= 1


@dataclass
class Model:
    variables: list = field(default_factory=list)
    constraints: list = field(default_factory=list)
    objective: Expr = field(default_factory=dict)
    terms: list = field(default_factory=list)
    reference_optimum: float | None = None

    # ------------------------------------------------------------------
    # construction helpers
    # ------------------------------------------------------------------
    def add_variable(self, name: str, lower: float, upper: float,
                     kind: str = CONTINUOUS) -> int:
        if kind == BINARY:
            lower, upper = 0.0, 1.0
        if not lower <= upper:
            raise ModelError(
                f"variable {name!r}: lower bound {lower} exceeds upper bound {upper}")
        idx = len(self.variables)
        self.variables.append(Variable(idx, kind, float(lower), float(upper), name))
        return idx

    def add_constraint(self, name: str, expr: Expr, relation: str, rhs: float) -> None:
        if relation not in RELATIONS:
            raise ModelError(f"unknown relation {relation!r}")
        expr = dict(expr)
        rhs = float(rhs) - expr.pop((), 0.0)
        self.constraints.append(Constraint(name, expr, relation, rhs))

    def set_objective(self, expr: Expr) -> None:
        self.objective = dict(expr)

    # ------------------------------------------------------------------
    # lookups
    # ------------------------------------------------------------------
    @property
    def n_vars(self) -> int:
        return len(self.variables)

    def var_by_name(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def aux_indices(self) -> set:
        return {t.aux for t in self.terms}

    def original_indices(self) -> list:
        """Indices of variables that are not defined by a product term."""
        aux = self.aux_indices()
        return [v.index for v in self.variables if v.index not in aux]

    def term_variables(self) -> list:
        """Original continuous variables appearing in at least one product."""
        aux = self.aux_indices()
        seen: set = set()
        for t in self.terms:
            seen.update(t.key)
        out = []
        for i in sorted(seen):
            v = self.variables[i]
            if i not in aux and v.kind == CONTINUOUS:
                out.append(i)
        return out

    def bounds_array(self) -> tuple:
        lo = np.array([v.lower for v in self.variables], dtype=float)
        hi = np.array([v.upper for v in self.variables], dtype=float)
        return lo, hi

    # ------------------------------------------------------------------
    # validation
    # ------------------------------------------------------------------
    def validate(self) -> None:
        n = self.n_vars
        names = set()
        for v in self.variables:
            if v.name in names:
                raise ModelError(f"duplicate variable name {v.name!r}")
            names.add(v.name)
            if v.kind == BINARY and (v.lower, v.upper) != (0.0, 1.0):
                raise ModelError(f"binary variable {v.name!r} must have bounds 0/1")
            if v.kind == CONTINUOUS and not v.lower <= v.upper:
                raise ModelError(f"variable {v.name!r} has crossed bounds")

        def check_expr(expr: Expr, where: str) -> None:
            for key in expr:
                for i in key:
                    if not 0 <= i < n:
                        raise ModelError(f"{where}: variable index {i} out of range")

        for c in self.constraints:
            check_expr(c.expr, f"constraint {c.name!r}")
        check_expr(self.objective, "objective")

        defined = set()
        seen_keys = set()
        for t in self.terms:
            if t.degree < 2:
                raise ModelError(f"term {t.key} has degree < 2")
            if t.key in seen_keys:
                raise ModelError(f"duplicate product term {t.key}")
            seen_keys.add(t.key)
            if t.aux in defined:
                raise ModelError(f"auxiliary {t.aux} defined by two terms")
            defined.add(t.aux)
            for i in t.key:
                if not 0 <= i < n:
                    raise ModelError(f"term {t.key}: index {i} out of range")
                # chained terms may only reference auxiliaries defined earlier
                if i in self.aux_indices() and i not in defined:
                    raise ModelError(f"term {t.key} uses auxiliary {i} before its definition")
                v = self.variables[i]
                if not (math.isfinite(v.lower) and math.isfinite(v.upper)):
                    raise ModelError(
                        f"variable {v.name!r} appears in a product but is unbounded")

    def is_normalized(self) -> bool:
        if not is_linear(self.objective):
            return False
        return all(is_linear(c.expr) for c in self.constraints)

    # ------------------------------------------------------------------
    # evaluation
    # ------------------------------------------------------------------
    def eval_expr(self, expr: Expr, point) -> float:
        point = np.asarray(point, dtype=float)
        total = 0.0
        for key, coef in expr.items():
            prod = coef
            for i in key:
                prod *= point[i]
            total += prod
        return total

    def eval_expr_batch(self, expr: Expr, points: np.ndarray) -> np.ndarray:
        """Evaluate ``expr`` row-wise on an (N, n_vars) array."""
        out = np.zeros(points.shape[0])
        for key, coef in expr.items():
            prod = np.full(points.shape[0], coef)
            for i in key:
                prod = prod * points[:, i]
            out += prod
        return out

    def complete_point(self, partial) -> np.ndarray:
        """Fill auxiliary entries of a point from its original entries.

        ``partial`` may be a dense vector over all variables (aux entries are
        overwritten) or a mapping from original index to value.
        """
        point = np.zeros(self.n_vars)
        if isinstance(partial, dict):
            for i, val in partial.items():
                point[i] = val
        else:
            arr = np.asarray(partial, dtype=float)
            if arr.shape[0] == self.n_vars:
                point[:] = arr
            else:
                orig = self.original_indices()
                if arr.shape[0] != len(orig):
                    raise ModelError(
                        f"point of length {arr.shape[0]} matches neither all "
                        f"{self.n_vars} variables nor the {len(orig)} original ones")
                point[orig] = arr
        for t in self.terms:
            val = 1.0
            for i in t.key:
                val *= point[i]
            point[t.aux] = val
        return point

    def complete_points(self, partial: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`complete_point` over an (N, k) array."""
        partial = np.asarray(partial, dtype=float)
        pts = np.zeros((partial.shape[0], self.n_vars))
        if partial.shape[1] == self.n_vars:
            pts[:] = partial
        else:
            orig = self.original_indices()
            pts[:, orig] = partial
        for t in self.terms:
            val = np.ones(pts.shape[0])
            for i in t.key:
                val = val * pts[:, i]
            pts[:, t.aux] = val
        return pts

    def check_feasible(self, point, feas_tol: float = 1e-6) -> bool:
        """True iff bounds, integrality, constraints and term equations hold."""
        point = np.asarray(point, dtype=float)
        if point.shape != (self.n_vars,):
            raise ModelError(
                f"point has dimension {point.shape}, expected ({self.n_vars},)")
        for v in self.variables:
            x = point[v.index]
            if x < v.lower - feas_tol or x > v.upper + feas_tol:
                return False
            if v.kind == BINARY and abs(x - round(x)) > feas_tol:
                return False
        for c in self.constraints:
            lhs = self.eval_expr(c.expr, point)
            if c.relation == "<=" and lhs > c.rhs + feas_tol:
                return False
            if c.relation == ">=" and lhs < c.rhs - feas_tol:
                return False
            if c.relation == "=" and abs(lhs - c.rhs) > feas_tol:
                return False
        for t in self.terms:
            val = 1.0
            for i in t.key:
                val *= point[i]
            if abs(point[t.aux] - val) > feas_tol:
                return False
        return True

    # ------------------------------------------------------------------
    # structural equality (used by the round-trip law)
    # ------------------------------------------------------------------
    def _canon(self):
        name_of = [v.name for v in self.variables]

        def key_names(key: Key):
            return tuple(sorted(name_of[i] for i in key))

        def expr_canon(expr: Expr):
            return frozenset((key_names(k), c) for k, c in expr.items())

        vars_canon = frozenset((v.name, v.kind, v.lower, v.upper) for v in self.variables)
        cons_canon = frozenset(
            (c.name, expr_canon(c.expr), c.relation, c.rhs) for c in self.constraints)
        terms_canon = frozenset(
            (key_names(t.key), name_of[t.aux]) for t in self.terms)
        return (vars_canon, cons_canon, expr_canon(self.objective),
                terms_canon, self.reference_optimum)

    def structurally_equal(self, other: "Model") -> bool:
        return self._canon() == other._canon()


@dataclass(frozen=True)
class Incumbent:
    """A feasible point together with its objective value."""

    point: np.ndarray
    objective_value: float

    def validated(self, model: Model, feas_tol: float = 1e-6) -> "Incumbent":
        if not model.check_feasible(self.point, feas_tol):
            raise ModelError("incumbent point is not feasible for the model")
        obj = model.eval_expr(model.objective, self.point)
        if abs(obj - self.objective_value) > feas_tol * (1.0 + abs(obj)):
            raise ModelError(
                f"incumbent objective {self.objective_value} disagrees with "
                f"recomputed value {obj}")
        return self


# ----------------------------------------------------------------------
# normalization
# ----------------------------------------------------------------------

def interval_product(lo_a, hi_a, lo_b, hi_b) -> tuple:
    cands = (lo_a * lo_b, lo_a * hi_b, hi_a * lo_b, hi_a * hi_b)
    return (min(cands), max(cands))


def key_interval(model: Model, key: Key) -> tuple:
    """Interval-arithmetic range of ``prod(x[i] for i in key)``."""
    v0 = model.variables[key[0]]
    lo, hi = v0.lower, v0.upper
    for i in key[1:]:
        v = model.variables[i]
        lo, hi = interval_product(lo, hi, v.lower, v.upper)
    return lo, hi


class _Normalizer:
    def __init__(self, model: Model):
        self.out = Model(
            variables=list(model.variables),
            reference_optimum=model.reference_optimum,
        )
        self.by_key: dict = {t.key: t.aux for t in model.terms}
        # pre-existing terms (already-normalized input) are kept verbatim
        self.out.terms = list(model.terms)
        self.counter = 0

    def _fresh_aux(self, key: Key) -> int:
        lo, hi = key_interval(self.out, key)
        idx = self.out.add_variable(f"_p{self.counter}", lo, hi, CONTINUOUS)
        self.counter += 1
        self.out.terms.append(ProductTerm(key, idx))
        self.by_key[key] = idx
        return idx

    def _ensure_term(self, key: Key) -> int:
        if key in self.by_key:
            return self.by_key[key]
        for i in key:
            v = self.out.variables[i]
            if not (math.isfinite(v.lower) and math.isfinite(v.upper)):
                raise ModelError(
                    f"variable {v.name!r} appears in product {key} but has "
                    f"no finite bounds")
        return self._fresh_aux(key)

    def _reduce_power(self, var: int, power: int) -> int:
        """Rewrite x**power into a chain of squared auxiliaries.

        Equal factors are paired greedily, so x**5 becomes (x**2)(x**2)x via
        two squarings; the odd leftover factor is multiplied last.
        """
        if power == 2:
            return self._ensure_term((var, var))
        if power % 2 == 0:
            sq = self._ensure_term((var, var))
            return self._reduce_power(sq, power // 2)
        even_part = self._reduce_power(var, power - 1)
        pair = tuple(sorted((even_part, var)))
        return self._ensure_term(pair)

    def rewrite_key(self, key: Key) -> Key:
        # binary factors are idempotent: y*y == y
        counts: dict = {}
        for i in key:
            counts[i] = counts.get(i, 0) + 1
        flat = []
        for i in sorted(counts):
            if self.out.variables[i].kind == BINARY:
                flat.append(i)
            else:
                flat.extend([i] * counts[i])
        key = tuple(flat)
        if len(key) <= 1:
            return key
        if len(set(key)) == 1 and len(key) >= 3:
            # pure power: chain through squared auxiliaries
            aux = self._reduce_power(key[0], len(key))
            return (aux,)
        return (self._ensure_term(key),)

    def rewrite_expr(self, expr: Expr) -> Expr:
        out: Expr = {}
        for key, coef in expr.items():
            if len(key) <= 1:
                expr_add(out, key, coef)
            else:
                expr_add(out, self.rewrite_key(tuple(sorted(key))), coef)
        return out


def normalize(model: Model) -> Model:
    """Flatten all products of degree >= 2 into auxiliary-defined terms.

    Idempotent: normalizing an already-normalized model returns a
    structurally equal model.
    """
    model.validate()
    norm = _Normalizer(model)
    for c in model.constraints:
        norm.out.add_constraint(c.name, norm.rewrite_expr(c.expr), c.relation, c.rhs)
    norm.out.set_objective(norm.rewrite_expr(model.objective))
    norm.out.validate()
    return norm.out


def refresh_aux_bounds(model: Model) -> Model:
    """Recompute interval-arithmetic bounds of every term auxiliary.

    Returns a new model; used after bound tightening shrinks the factors.
    """
    out = replace(model, variables=list(model.variables))
    for t in out.terms:
        lo, hi = key_interval(out, t.key)
        old = out.variables[t.aux]
        # never widen beyond previously known bounds
        lo, hi = max(lo, old.lower), min(hi, old.upper)
        out.variables[t.aux] = replace(old, lower=lo, upper=hi)
    return out


def inline_expr(model: Model, expr: Expr) -> Expr:
    """Expand term auxiliaries back into explicit products of originals."""
    by_aux = {t.aux: t.key for t in model.terms}

    def flatten(key: Key) -> Key:
        out: list = []
        for i in key:
            if i in by_aux:
                out.extend(flatten(by_aux[i]))
            else:
                out.append(i)
        return tuple(sorted(out))

    flat: Expr = {}
    for key, coef in expr.items():
        expr_add(flat, flatten(key), coef)
    return flat


def with_bounds(model: Model, lower: dict, upper: dict) -> Model:
    """Copy of ``model`` with selected variable bounds replaced."""
    out = replace(model, variables=list(model.variables))
    for i, lo in lower.items():
        out.variables[i] = replace(out.variables[i], lower=float(lo))
    for i, hi in upper.items():
        out.variables[i] = replace(out.variables[i], upper=float(hi))
    return refresh_aux_bounds(out)
