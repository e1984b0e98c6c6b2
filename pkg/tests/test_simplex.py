import itertools

import numpy as np
import pytest

from polypart.simplex import (INFEASIBLE, OPTIMAL, UNBOUNDED, LinearProgram,
                              LpBuilder, solve_lp, solve_lp_with_basis)

BACKENDS = ("highs", "reference")


def build_lp(c, rows, bounds):
    b = LpBuilder()
    for lo, hi in bounds:
        b.add_col(lo, hi)
    for j, cj in enumerate(c):
        b.set_objective_coef(j, cj)
    for coeffs, rel, rhs in rows:
        b.add_row(coeffs, rel, rhs)
    return b.build()


def random_lp(rng, n_max=5, m_max=5, finite=True):
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    bounds = []
    for _ in range(n):
        lo = float(rng.uniform(-5, 0))
        bounds.append((lo, lo + float(rng.uniform(0.5, 8))) if finite
                      else (lo, np.inf))
    rows = []
    for _ in range(m):
        coeffs = {j: float(rng.normal()) for j in range(n) if rng.random() < 0.8}
        if not coeffs:
            coeffs = {0: 1.0}
        rows.append((coeffs, str(rng.choice(["<=", ">=", "="])),
                     float(rng.normal())))
    return build_lp(rng.normal(size=n).tolist(), rows, bounds)


@pytest.mark.parametrize("backend", BACKENDS)
def test_simple_box_optimum(backend):
    lp = build_lp([-1, -1], [({0: 1, 1: 1}, "<=", 1)], [(0, 1), (0, 1)])
    sol = solve_lp(lp, backend)
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(-1.0, abs=1e-9)


@pytest.mark.parametrize("backend", BACKENDS)
def test_infeasible_detection(backend):
    lp = build_lp([1], [({0: 1}, ">=", 2), ({0: 1}, "<=", 1)], [(0, 10)])
    assert solve_lp(lp, backend).status == INFEASIBLE


@pytest.mark.parametrize("backend", BACKENDS)
def test_unbounded_detection(backend):
    lp = build_lp([-1], [({0: 1}, ">=", 0)], [(0, np.inf)])
    assert solve_lp(lp, backend).status == UNBOUNDED


@pytest.mark.parametrize("backend", BACKENDS)
def test_degenerate_duplicate_rows_terminate(backend):
    rows = [({0: 1, 1: 1}, "<=", 1)] * 6 + [({0: 1, 1: 1}, ">=", 1)] * 3
    lp = build_lp([-1, -2], rows, [(0, 1), (0, 1)])
    sol = solve_lp(lp, backend)
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(-2.0, abs=1e-8)


def test_backends_agree_on_random_lps():
    rng = np.random.default_rng(3)
    for _ in range(120):
        lp = random_lp(rng)
        a = solve_lp(lp, "highs")
        b = solve_lp(lp, "reference")
        assert a.status == b.status
        if a.status == OPTIMAL:
            assert a.objective == pytest.approx(b.objective, abs=1e-7, rel=1e-7)


def test_warm_basis_matches_cold_solve_on_random_lps():
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 100:
        lp = random_lp(rng)
        cold = solve_lp(lp, "reference")
        if cold.status != OPTIMAL:
            continue
        checked += 1
        # re-solve with a perturbed objective, warm-started from the basis
        c2 = lp.c + rng.normal(scale=0.1, size=lp.n_cols)
        lp2 = LinearProgram(c=c2, A=lp.A, relations=lp.relations, b=lp.b,
                            lower=lp.lower, upper=lp.upper)
        warm = solve_lp_with_basis(lp2, cold.basis, "reference")
        cold2 = solve_lp(lp2, "reference")
        assert warm.status == cold2.status == OPTIMAL
        assert warm.objective == pytest.approx(cold2.objective, abs=1e-7, rel=1e-7)


def test_warm_basis_after_adding_cut_matches_cold():
    b = LpBuilder()
    for _ in range(3):
        b.add_col(0, 4, -1.0)
    b.add_row({0: 1, 1: 1, 2: 1}, "<=", 6)
    lp = b.build()
    first = solve_lp(lp, "reference")
    b.add_row({0: 1, 1: 2}, "<=", 3)
    lp2 = b.build()
    warm = solve_lp_with_basis(lp2, first.basis, "reference")
    cold = solve_lp(lp2, "reference")
    assert warm.objective == pytest.approx(cold.objective, abs=1e-8)


def test_incompatible_basis_falls_back_to_cold():
    lp1 = build_lp([-1], [({0: 1}, "<=", 1)], [(0, 2)])
    lp2 = build_lp([-1, -1], [({0: 1, 1: 1}, "<=", 1)], [(0, 2), (0, 2)])
    sol1 = solve_lp(lp1, "reference")
    sol = solve_lp_with_basis(lp2, sol1.basis, "reference")
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(-1.0, abs=1e-9)


def _vertex_enumeration_minimum(lp):
    """Oracle: enumerate intersections of n active hyperplanes/bounds."""
    n = lp.n_cols
    planes = []
    A = lp.A.toarray()
    for i in range(lp.n_rows):
        planes.append((A[i], lp.b[i]))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        planes.append((e.copy(), lp.lower[j]))
        planes.append((e.copy(), lp.upper[j]))
    best = np.inf
    for combo in itertools.combinations(range(len(planes)), n):
        M = np.array([planes[k][0] for k in combo])
        rhs = np.array([planes[k][1] for k in combo])
        try:
            x = np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError:
            continue
        resid = A @ x - lp.b
        ok = np.all(x >= lp.lower - 1e-7) and np.all(x <= lp.upper + 1e-7)
        for i, rel in enumerate(lp.relations):
            if rel == "<=":
                ok &= resid[i] <= 1e-7
            elif rel == ">=":
                ok &= resid[i] >= -1e-7
            else:
                ok &= abs(resid[i]) <= 1e-7
        if ok:
            best = min(best, float(lp.c @ x))
    return best


@pytest.mark.parametrize("backend", BACKENDS)
def test_objective_matches_vertex_enumeration_oracle(backend):
    rng = np.random.default_rng(17)
    checked = 0
    while checked < 40:
        lp = random_lp(rng, n_max=4, m_max=4)
        sol = solve_lp(lp, backend)
        oracle = _vertex_enumeration_minimum(lp)
        if sol.status != OPTIMAL:
            assert not np.isfinite(oracle)
            continue
        checked += 1
        assert sol.objective == pytest.approx(oracle, abs=1e-7, rel=1e-7)


@pytest.mark.parametrize("backend", BACKENDS)
def test_weak_duality_at_optimum(backend):
    rng = np.random.default_rng(23)
    checked = 0
    while checked < 60:
        lp = random_lp(rng)
        sol = solve_lp(lp, backend)
        if sol.status != OPTIMAL:
            continue
        checked += 1
        dual = float(sol.duals @ lp.b)
        for j, d in enumerate(sol.reduced_costs):
            if abs(d) < 1e-9:
                continue
            dual += d * (lp.lower[j] if d > 0 else lp.upper[j])
        assert abs(sol.objective - dual) <= 1e-7 * (1 + abs(sol.objective))


@pytest.mark.parametrize("backend", BACKENDS)
def test_optimal_point_satisfies_reported_objective(backend):
    rng = np.random.default_rng(29)
    for _ in range(30):
        lp = random_lp(rng)
        sol = solve_lp(lp, backend)
        if sol.status == OPTIMAL:
            assert abs(float(lp.c @ sol.x) - sol.objective) <= \
                1e-9 * (1 + abs(sol.objective))


@pytest.mark.parametrize("backend", BACKENDS)
def test_deterministic_repeat_solves(backend):
    rng = np.random.default_rng(31)
    lp = random_lp(rng)
    a = solve_lp(lp, backend)
    b = solve_lp(lp, backend)
    assert a.status == b.status
    if a.status == OPTIMAL:
        assert np.array_equal(a.x, b.x)
        assert a.objective == b.objective
