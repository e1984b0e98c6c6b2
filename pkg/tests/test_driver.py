import json
import math

import numpy as np
import pytest

from polypart.driver import (NoIncumbentError, SolverConfig, bc_percent,
                             find_incumbent, gap_percent, solve)
from polypart.model import BINARY, Incumbent, Model, normalize
from polypart.parser import parse
from polypart.testkit import oracle_minlp


def parse_model(text):
    return normalize(parse(text))


PRODUCT_FLOOR = """
# optimum 4.0
var x >= 0.5 <= 8;
var y >= 0.5 <= 8;
min x + y;
s.t. c1: x*y >= 4;
"""

HYPERBOLIC = """
var x >= 0 <= 8;
var y >= 0 <= 8;
min x*y;
s.t. c1: x + y >= 4;
"""


class TestMetrics:
    def test_gap_formula(self):
        assert gap_percent(10.0, 8.0) == (25.0, False)

    def test_zero_gap(self):
        g, flag = gap_percent(58.384, 58.384)
        assert g == 0.0 and not flag

    def test_zero_lower_bound_flags_absolute(self):
        g, flag = gap_percent(3.0, 0.0)
        assert flag and g == 3.0

    def test_bc_no_tightening(self):
        bc, flag = bc_percent([0, 0], [8, 8], [0, 0], [8, 8])
        assert bc == 0.0 and not flag

    def test_bc_halved_widths(self):
        bc, flag = bc_percent([0, 0], [8, 8], [0, 0], [4, 4])
        assert bc == pytest.approx(100.0)

    def test_bc_single_variable(self):
        bc, _ = bc_percent([0], [10], [4], [6])
        assert bc == pytest.approx(400.0)

    def test_bc_zero_width_flags_infinity(self):
        bc, flag = bc_percent([0], [10], [5], [5])
        assert flag and math.isinf(bc)


class TestFindIncumbent:
    def test_returns_feasible_point(self):
        m = parse_model(HYPERBOLIC)
        inc = find_incumbent(m, seed=0, budget=20)
        assert m.check_feasible(inc.point, 1e-6)

    def test_objective_upper_bounds_global_optimum(self):
        m = parse_model(PRODUCT_FLOOR)
        oracle = oracle_minlp(m, grid_per_dim=120)
        inc = find_incumbent(m, seed=0, budget=30)
        assert inc.objective_value >= oracle.optimum - 1e-6

    def test_infeasible_model_raises(self):
        m = parse_model("var x >= 0 <= 8; min x; "
                        "s.t. a: x >= 5; s.t. b: x <= 1;")
        with pytest.raises(NoIncumbentError):
            find_incumbent(m, seed=0, budget=8)

    def test_handles_binary_assignments(self):
        m = parse_model("var x >= 0 <= 4; bin b; min x + 2*b; "
                        "s.t. c1: x + 4*b >= 2;")
        inc = find_incumbent(m, seed=0, budget=20)
        assert m.check_feasible(inc.point, 1e-6)
        assert inc.objective_value == pytest.approx(2.0, abs=1e-6)


class TestSolve:
    def test_converges_to_certified_optimum(self):
        m = parse_model(HYPERBOLIC)
        oracle = oracle_minlp(m, grid_per_dim=150)  # optimum 0 at (0, >=4)
        assert oracle.optimum == pytest.approx(0.0, abs=1e-9)
        rep = solve(m, SolverConfig(mode="dtmc", delta=4, time_limit=60, seed=0))
        assert rep.iterations <= 20
        assert rep.lower_bound <= oracle.optimum + 1e-7
        assert abs(rep.lower_bound - oracle.optimum) <= 1e-4 * (1 + abs(oracle.optimum))

    def test_reference_annotation_yields_proven_status(self):
        m = parse_model(PRODUCT_FLOOR)
        rep = solve(m, SolverConfig(mode="dtmc", delta=4, time_limit=60, seed=0,
                                    tol_imp=1e-5))
        assert rep.status == "global_optimum"
        assert abs(rep.gap_percent) <= 1e-4
        assert rep.gap_basis == "reference"

    def test_pure_binary_model_solves_in_one_iteration(self):
        m = parse_model("bin a; bin b; bin c; max a*b + b*c - a*c; "
                        "s.t. k: a + b + c <= 2;")
        rep = solve(m, SolverConfig(mode="dtmc", delta=4, time_limit=30, seed=0))
        assert rep.iterations == 1
        assert rep.binaries_added == 0
        assert rep.lower_bound == pytest.approx(-1.0, abs=1e-8)

    def test_lower_bound_trajectory_is_monotone_and_sandwiched(self):
        m = parse_model(PRODUCT_FLOOR)
        rep = solve(m, SolverConfig(mode="dtmc", delta=4, time_limit=60, seed=0))
        traj = rep.lower_bound_trajectory
        assert all(a <= b + 1e-9 for a, b in zip(traj[:-1], traj[1:]))
        assert traj[-1] <= rep.upper_bound + 1e-7
        assert rep.upper_bound >= 4.0 - 1e-6

    def test_trajectory_stops_on_partition_convergence_when_imp_disabled(self):
        m = parse_model(PRODUCT_FLOOR)
        cfg = SolverConfig(mode="dtmc", delta=4, time_limit=120, seed=0,
                           tol_imp=0.0, eps=0.05)
        rep = solve(m, cfg)
        assert rep.status in ("global_optimum", "converged_partition")
        assert rep.stop_reason in ("partition", "proved_reference_gap")

    def test_mc_mode_single_relaxation(self):
        m = parse_model(HYPERBOLIC)
        rep = solve(m, SolverConfig(mode="mc", time_limit=30, seed=0))
        assert rep.iterations == 1
        assert rep.binaries_added == 0
        assert rep.lower_bound == pytest.approx(0.0, abs=1e-8)

    def test_utmc_mode_counts_uniform_selectors(self):
        m = parse_model(HYPERBOLIC)
        rep = solve(m, SolverConfig(mode="utmc", utmc_n=10, time_limit=60, seed=0))
        assert rep.iterations == 1
        assert rep.binaries_added == 10 + 10 + 100

    def test_tcp_dtmc_tightens_and_converges(self):
        m = parse_model(PRODUCT_FLOOR)
        rep = solve(m, SolverConfig(mode="tcp-dtmc", delta=4, time_limit=60, seed=0))
        assert rep.status == "global_optimum"
        assert rep.bc_percent > 100.0
        assert rep.tighten_rounds >= 1
        (lo, hi) = rep.tightened_bounds["x"]
        assert 0.5 < lo <= 2.0 <= hi < 8.0

    def test_partition_single_mode_partitions_fewer_variables(self):
        m = parse_model(HYPERBOLIC)
        full = solve(m, SolverConfig(mode="utmc", utmc_n=4, time_limit=30, seed=0))
        single = solve(m, SolverConfig(mode="utmc", utmc_n=4, time_limit=30,
                                       seed=0, partition_single=True))
        assert single.binaries_added == 4
        assert full.binaries_added == 4 + 4 + 16

    def test_manual_incumbent_is_honored(self):
        m = parse_model(PRODUCT_FLOOR)
        pt = m.complete_point({0: 2.0, 1: 2.0})
        inc = Incumbent(point=pt, objective_value=4.0)
        rep = solve(m, SolverConfig(mode="dtmc", delta=4, time_limit=30, seed=0),
                    incumbent=inc)
        assert rep.upper_bound == 4.0

    def test_time_limit_zero_reports_time_status(self):
        m = parse_model(HYPERBOLIC)
        pt = m.complete_point({0: 2.0, 1: 2.0})
        inc = Incumbent(point=pt, objective_value=4.0)
        rep = solve(m, SolverConfig(mode="dtmc", delta=4, time_limit=0.0, seed=0),
                    incumbent=inc)
        assert rep.status == "time_limit"


class TestDeterminism:
    def test_identical_runs_produce_identical_reports(self):
        m = parse_model(PRODUCT_FLOOR)
        cfg = SolverConfig(mode="tcp-dtmc", delta=4, time_limit=60, seed=7)
        a = solve(m, cfg, instance_name="p")
        b = solve(m, cfg, instance_name="p")
        assert a.to_json(include_times=False) == b.to_json(include_times=False)

    def test_report_json_excludes_times_on_request(self):
        m = parse_model(HYPERBOLIC)
        rep = solve(m, SolverConfig(mode="mc", time_limit=30, seed=0))
        full = json.loads(rep.to_json())
        bare = json.loads(rep.to_json(include_times=False))
        assert "times" in full and "times" not in bare
