import numpy as np
import pytest

from polypart.model import ModelError, normalize
from polypart.parser import parse
from polypart.testkit import (InstanceShape, enumerate_milp, gen_random_instance,
                              gen_random_milp, oracle_minlp)


def test_oracle_on_known_instance():
    m = normalize(parse(
        "var x >= 0 <= 8; var y >= 0 <= 8; min x*y; s.t. c1: x + y >= 4;"))
    res = oracle_minlp(m, grid_per_dim=100)
    assert res.found
    assert res.optimum == pytest.approx(0.0, abs=1e-8)


def test_oracle_product_floor_instance():
    m = normalize(parse(
        "var x >= 0.5 <= 8; var y >= 0.5 <= 8; min x + y; s.t. c1: x*y >= 4;"))
    res = oracle_minlp(m, grid_per_dim=100, refine_rounds=3)
    assert res.optimum == pytest.approx(4.0, abs=1e-4)


def test_oracle_pure_binary_enumeration_is_exact():
    m = normalize(parse(
        "bin a; bin b; min a*b - a - b; s.t. c1: a + b >= 1;"))
    res = oracle_minlp(m)
    assert res.method == "binary_enumeration"
    assert res.optimum == pytest.approx(-1.0, abs=1e-12)


def test_oracle_reports_infeasible():
    m = normalize(parse(
        "var x >= 0 <= 8; min x; s.t. a: x >= 5; s.t. b: x <= 1;"))
    res = oracle_minlp(m, grid_per_dim=64)
    assert not res.found


def test_oracle_caps_dimensionality():
    m = parse("".join(f"var x{k} >= 0 <= 1; " for k in range(5)) + "min x0;")
    with pytest.raises(ModelError):
        oracle_minlp(normalize(m))


def test_oracle_self_consistency_across_resolutions():
    m = normalize(gen_random_instance(3, InstanceShape(
        n_continuous=2, n_terms=2, n_constraints=2, objective_offset=5.0)))
    coarse = oracle_minlp(m, grid_per_dim=40)
    fine = oracle_minlp(m, grid_per_dim=90)
    assert coarse.found and fine.found
    scale = 1.0 + abs(fine.optimum)
    assert abs(coarse.optimum - fine.optimum) <= 5e-2 * scale
    assert fine.optimum <= coarse.optimum + 1e-9 * scale


def test_generated_instances_are_reproducible():
    a = gen_random_instance(11)
    b = gen_random_instance(11)
    assert a.structurally_equal(b)


def test_generated_instances_are_feasible_with_margin():
    for seed in range(12):
        shape = InstanceShape(n_continuous=3, n_binary=1, n_terms=2,
                              n_constraints=3, max_degree=3,
                              allow_binary_in_terms=True)
        m = normalize(gen_random_instance(seed, shape))
        rng = np.random.default_rng(seed)
        orig = m.original_indices()
        lo = np.array([m.variables[i].lower for i in orig])
        hi = np.array([m.variables[i].upper for i in orig])
        draws = rng.uniform(lo, hi, size=(400, len(orig)))
        for k, i in enumerate(orig):
            if m.variables[i].kind == "binary":
                draws[:, k] = np.round(draws[:, k])
        pts = m.complete_points(draws)
        feasible = sum(m.check_feasible(p, 1e-9) for p in pts)
        assert feasible >= 8  # usable volume for sampling-based suites


def test_degree_four_instances_exercise_power_chains():
    shape = InstanceShape(n_continuous=2, n_terms=2, n_constraints=1,
                          max_degree=4, monomial_share=0.0)
    found = False
    for seed in range(30):
        m = gen_random_instance(seed, shape)
        if any(len(k) >= 4 for k in m.objective
               ) or any(len(k) >= 4 for c in m.constraints for k in c.expr):
            found = True
            n = normalize(m)
            n.validate()
    assert found


def test_enumerate_milp_matches_known_value():
    prob = gen_random_milp(0, n_binary=3, n_continuous=2, n_rows=3)
    res = enumerate_milp(prob)
    # cross-check against a brute-force over the same assignments
    from polypart.simplex import LinearProgram, solve_lp
    import itertools

    best = np.inf
    lp = prob.lp
    for bits in itertools.product((0.0, 1.0), repeat=3):
        lo = lp.lower.copy()
        hi = lp.upper.copy()
        lo[:3] = bits
        hi[:3] = bits
        sol = solve_lp(LinearProgram(c=lp.c, A=lp.A, relations=lp.relations,
                                     b=lp.b, lower=lo, upper=hi))
        if sol.status == "optimal":
            best = min(best, sol.objective)
    if res.found:
        assert res.optimum == pytest.approx(best, abs=1e-9)
    else:
        assert not np.isfinite(best)
