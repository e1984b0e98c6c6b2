import numpy as np
import pytest

from polypart.dynpart import RefineConfig, locate_active, refine
from polypart.model import ModelError
from polypart.relaxation import PartitionMap


def test_refine_inserts_interval_around_solution():
    pm = {0: PartitionMap((0.0, 8.0))}
    new, changed = refine(pm, {0: 3.0}, RefineConfig(delta=4))
    assert changed
    assert new[0].breakpoints == (0.0, 1.0, 5.0, 8.0)
    assert new[0].active_partition() == (1.0, 5.0)


def test_refine_keeps_existing_breakpoints_on_overlap():
    pm = {0: PartitionMap((0.0, 1.0, 5.0, 8.0), active=2)}
    new, changed = refine(pm, {0: 4.5}, RefineConfig(delta=4))
    assert changed
    assert new[0].breakpoints == (0.0, 1.0, 3.5, 5.0, 5.5, 8.0)
    lo, hi = new[0].active_partition()
    assert lo <= 4.5 <= hi
    assert (lo, hi) == (3.5, 5.0)


def test_refine_respects_minimum_partition_length():
    pm = {0: PartitionMap((0.0, 0.003, 8.0), active=1)}
    new, changed = refine(pm, {0: 0.001}, RefineConfig(delta=4, eps=0.001))
    assert not changed
    assert new[0].breakpoints == pm[0].breakpoints


def test_refine_noop_exactly_when_active_below_delta_times_eps():
    cfg = RefineConfig(delta=4, eps=0.01)
    # active width 0.0399 < delta*eps = 0.04 -> no-op
    pm = {0: PartitionMap((0.0, 0.0399, 8.0), active=1)}
    _, changed = refine(pm, {0: 0.01}, cfg)
    assert not changed
    # active width 0.041 > delta*eps -> refines
    pm = {0: PartitionMap((0.0, 0.041, 8.0), active=1)}
    _, changed = refine(pm, {0: 0.01}, cfg)
    assert changed


def test_refine_clips_to_domain():
    pm = {0: PartitionMap((0.0, 8.0))}
    new, _ = refine(pm, {0: 0.25}, RefineConfig(delta=4))
    assert new[0].breakpoints == (0.0, 2.25, 8.0)
    assert new[0].active_partition() == (0.0, 2.25)


def test_refine_rejects_point_outside_domain():
    pm = {0: PartitionMap((0.0, 8.0))}
    with pytest.raises(ModelError):
        refine(pm, {0: 9.5}, RefineConfig(delta=4))


def test_refine_freezes_degenerate_domains():
    pm = {0: PartitionMap((3.0, 3.0))}
    new, changed = refine(pm, {0: 3.0}, RefineConfig(delta=4))
    assert not changed
    assert new[0].breakpoints == (3.0, 3.0)


def test_delta_must_exceed_one():
    with pytest.raises(ModelError):
        RefineConfig(delta=1.0)


def test_locate_active_tie_rule_and_bounds():
    pms = {0: PartitionMap((0.0, 1.0, 5.0, 8.0)), 1: PartitionMap((0.0, 8.0))}
    out = locate_active(pms, {0: 1.0, 1: 7.0})
    assert out[0].active_partition() == (0.0, 1.0)
    assert out[1].active == 1


def test_breakpoints_stay_strictly_increasing_under_random_refines():
    rng = np.random.default_rng(0)
    pm = {0: PartitionMap((0.0, 10.0))}
    cfg = RefineConfig(delta=3, eps=1e-5)
    for _ in range(40):
        x = float(rng.uniform(0, 10))
        pm, _ = refine(pm, {0: x}, cfg)
        bp = np.array(pm[0].breakpoints)
        assert np.all(np.diff(bp) > 0)
        lo, hi = pm[0].active_partition()
        assert lo - 1e-12 <= x <= hi + 1e-12
        assert bp[0] == 0.0 and bp[-1] == 10.0


def test_geometric_shrinkage_of_the_active_partition():
    pm = {0: PartitionMap((0.0, 8.0))}
    cfg = RefineConfig(delta=4, eps=1e-12)
    widths = []
    for _ in range(10):
        pm, changed = refine(pm, {0: 3.0}, cfg)
        assert changed
        lo, hi = pm[0].active_partition()
        widths.append(hi - lo)
    for r, w in enumerate(widths, start=1):
        assert w <= (2.0 / 4.0) ** r * 8.0 + 1e-12
