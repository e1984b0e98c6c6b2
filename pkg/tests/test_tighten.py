import numpy as np
import pytest

from polypart.driver import find_incumbent
from polypart.milp import MilpProblem, solve_milp
from polypart.model import Incumbent, Model, normalize, with_bounds
from polypart.relaxation import PartitionMap, build_relaxation
from polypart.simplex import LinearProgram
from polypart.testkit import oracle_minlp
from polypart.tighten import (TightenConfig, TightenError, make_tcp_pmap,
                              tighten_bounds)


def product_floor_model():
    # minimize x + y subject to x*y >= 4 on [0.5, 8]^2; optimum 4 at (2, 2)
    m = Model()
    x = m.add_variable("x", 0.5, 8)
    y = m.add_variable("y", 0.5, 8)
    m.add_constraint("c1", {(x, y): 1.0}, ">=", 4.0)
    m.set_objective({(x,): 1.0, (y,): 1.0})
    return normalize(m), x, y


def incumbent_at(model, values):
    pt = model.complete_point(values)
    return Incumbent(point=pt,
                     objective_value=float(model.eval_expr(model.objective, pt)))


class TestTcpPartitionMap:
    def test_three_partitions_in_the_interior(self):
        pm = make_tcp_pmap(4.0, (0.0, 8.0), delta=4.0)
        assert pm.breakpoints == (0.0, 2.0, 6.0, 8.0)
        assert pm.size == 3

    def test_clipping_against_a_bound_gives_two(self):
        pm = make_tcp_pmap(0.5, (0.0, 8.0), delta=4.0)
        assert pm.breakpoints == (0.0, 2.5, 8.0)
        assert pm.size == 2

    def test_wide_inner_interval_gives_one(self):
        pm = make_tcp_pmap(4.0, (0.0, 8.0), delta=2.0)
        assert pm.breakpoints == (0.0, 8.0)
        assert pm.size == 1

    def test_active_partition_contains_the_incumbent(self):
        pm = make_tcp_pmap(6.5, (0.0, 8.0), delta=4.0)
        lo, hi = pm.active_partition()
        assert lo <= 6.5 <= hi


class TestTightenBounds:
    def test_cutoff_contracts_the_product_floor_model(self):
        n, x, y = product_floor_model()
        inc = incumbent_at(n, {x: 2.0, y: 2.0})
        rep = tighten_bounds(n, inc, TightenConfig(mode="cp"))
        # with the cutoff x + y <= 4 and x*y >= 4, only (2, 2) survives;
        # the envelope still leaves slack, but both ends must have moved
        for i in (x, y):
            assert rep.lower[i] > 0.5 + 0.05
            assert rep.upper[i] < 8.0 - 0.05
        assert rep.bc_percent > 0.0
        assert rep.rounds >= 1

    def test_no_tightening_when_cutoff_is_loose(self):
        # minimize x*y over x + y >= 4 with incumbent (2, 2): the point
        # (8, 0) with product 0 also satisfies the cutoff, so the upper end
        # of x cannot move (frozen expectation from the grid oracle)
        m = Model()
        x = m.add_variable("x", 0, 8)
        y = m.add_variable("y", 0, 8)
        m.add_constraint("c1", {(x,): 1.0, (y,): 1.0}, ">=", 4.0)
        m.set_objective({(x, y): 1.0})
        n = normalize(m)
        inc = incumbent_at(n, {x: 2.0, y: 2.0})
        rep = tighten_bounds(n, inc, TightenConfig(mode="cp"))
        assert rep.lower[x] == pytest.approx(0.0, abs=1e-7)
        assert rep.upper[x] == pytest.approx(8.0, abs=1e-7)
        assert rep.lower[y] == pytest.approx(0.0, abs=1e-7)
        assert rep.upper[y] == pytest.approx(8.0, abs=1e-7)

    def test_variables_outside_products_are_untouched(self):
        m = Model()
        x = m.add_variable("x", 0.5, 8)
        y = m.add_variable("y", 0.5, 8)
        w = m.add_variable("w", -3, 3)   # linear only
        m.add_constraint("c1", {(x, y): 1.0}, ">=", 4.0)
        m.add_constraint("c2", {(w,): 1.0, (x,): 1.0}, "<=", 10.0)
        m.set_objective({(x,): 1.0, (y,): 1.0, (w,): 0.1})
        n = normalize(m)
        inc = incumbent_at(n, {x: 2.0, y: 2.0, w: 0.0})
        rep = tighten_bounds(n, inc, TightenConfig(mode="cp"))
        assert w not in rep.variables
        assert n.variables[w].lower == -3 and n.variables[w].upper == 3

    def test_incumbent_stays_inside_every_round(self):
        n, x, y = product_floor_model()
        inc = incumbent_at(n, {x: 2.0, y: 2.0})
        rep = tighten_bounds(n, inc, TightenConfig(mode="tcp", delta=4.0))
        for i in (x, y):
            assert rep.lower[i] - 1e-7 <= inc.point[i] <= rep.upper[i] + 1e-7

    def test_intervals_nest_across_rounds(self):
        n, x, y = product_floor_model()
        inc = incumbent_at(n, {x: 2.0, y: 2.0})
        rep = tighten_bounds(n, inc, TightenConfig(mode="cp", tol=1e-4))
        for i in (x, y):
            los = [snap[i][0] for snap in rep.trajectory]
            his = [snap[i][1] for snap in rep.trajectory]
            assert all(a <= b + 1e-12 for a, b in zip(los[:-1], los[1:]))
            assert all(a >= b - 1e-12 for a, b in zip(his[:-1], his[1:]))

    def test_bounds_contain_all_feasible_points_under_the_cutoff(self):
        n, x, y = product_floor_model()
        inc = incumbent_at(n, {x: 2.5, y: 1.8})
        rep = tighten_bounds(n, inc, TightenConfig(mode="cp"))
        rng = np.random.default_rng(0)
        pts = rng.uniform(0.5, 8.0, size=(4000, 2))
        for px, py in pts:
            pt = n.complete_point({x: px, y: py})
            if not n.check_feasible(pt, 1e-9):
                continue
            if n.eval_expr(n.objective, pt) > inc.objective_value:
                continue
            assert rep.lower[x] - 1e-6 <= px <= rep.upper[x] + 1e-6
            assert rep.lower[y] - 1e-6 <= py <= rep.upper[y] + 1e-6

    def test_tcp_subproblem_values_sit_inside_cp_range(self):
        # both modes see identical inputs in round one; the piecewise region
        # is contained in the plain envelope region, so the first-round
        # per-variable values must nest
        n, x, y = product_floor_model()
        inc = incumbent_at(n, {x: 2.0, y: 2.0})
        cp = tighten_bounds(n, inc, TightenConfig(mode="cp"))
        tcp = tighten_bounds(n, inc, TightenConfig(mode="tcp", delta=4.0))
        for i in (x, y):
            assert tcp.trajectory[0][i][0] >= cp.trajectory[0][i][0] - 1e-7
            assert tcp.trajectory[0][i][1] <= cp.trajectory[0][i][1] + 1e-7

    def test_parallel_sweeps_match_serial_trajectories(self):
        n, x, y = product_floor_model()
        inc = incumbent_at(n, {x: 2.0, y: 2.0})
        serial = tighten_bounds(n, inc, TightenConfig(mode="tcp", parallel_width=1))
        parallel = tighten_bounds(n, inc, TightenConfig(mode="tcp", parallel_width=4))
        assert serial.rounds == parallel.rounds
        assert serial.trajectory == parallel.trajectory

    def test_selector_accounting_for_three_partition_maps(self):
        n, x, y = product_floor_model()
        inc = incumbent_at(n, {x: 2.0, y: 2.0})
        rep = tighten_bounds(n, inc, TightenConfig(mode="tcp", delta=4.0))
        assert rep.selector_counts["x"] == 3
        assert rep.selector_counts["y"] == 3
        # 3+3 selectors plus the 3x3 product grid of the pair
        assert rep.binaries_added == 3 + 3 + 9

    def test_infeasible_certificate_is_rejected(self):
        n, x, y = product_floor_model()
        pt = n.complete_point({x: 1.0, y: 1.0})  # violates x*y >= 4
        bad = Incumbent(point=pt, objective_value=2.0)
        with pytest.raises(Exception):
            tighten_bounds(n, bad, TightenConfig(mode="cp"))
