"""Dynamic refinement of partition maps around the current solution.

Each refinement looks at the active partition of a variable, computes a new
half-width as active-width / delta, and, when that exceeds the minimum
partition length, inserts a partition of that half-width centered on the
current solution value (clipped to the variable's domain).  Existing
breakpoints are always kept, so refinement never coarsens a map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import ModelError
from .relaxation import MIN_PARTITION_GAP, PartitionMap


@dataclass(frozen=True)
class RefineConfig:
    delta: float = 4.0   # active-width scaling; new half-width = width / delta
    eps: float = 0.001   # minimum partition length
    eps_per_var: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.delta > 1.0:
            raise ModelError("delta must exceed 1 (the new partition must shrink)")
        if not self.eps > 0.0:
            raise ModelError("eps must be positive")

    def eps_for(self, var: int) -> float:
        return float(self.eps_per_var.get(var, self.eps))


def _insert_breakpoint(points: list, value: float) -> bool:
    """Insert ``value`` keeping strict ordering; reject near-duplicates."""
    for p in points:
        if abs(p - value) < MIN_PARTITION_GAP:
            return False
    points.append(value)
    points.sort()
    return True


def refine(pmaps: dict, x_star: dict, cfg: RefineConfig) -> tuple:
    """One refinement pass over all partitioned variables.

    ``x_star[i]`` must lie inside variable i's domain.  Returns
    ``(new_pmaps, refined_any)``; variables whose active partition is already
    at the minimum length come back unchanged.
    """
    new_maps = {}
    refined_any = False
    for i, pm in pmaps.items():
        x = float(x_star[i])
        dom_lo, dom_hi = pm.lower, pm.upper
        if x < dom_lo - 1e-9 * (1 + abs(dom_lo)) or x > dom_hi + 1e-9 * (1 + abs(dom_hi)):
            raise ModelError(
                f"refinement point {x} lies outside the domain [{dom_lo}, {dom_hi}]")
        x = min(max(x, dom_lo), dom_hi)
        if dom_hi - dom_lo < MIN_PARTITION_GAP:
            new_maps[i] = pm  # frozen variable
            continue
        pm = pm.with_active(pm.locate(x))  # size from the partition holding x
        act_lo, act_hi = pm.active_partition()
        half = (act_hi - act_lo) / cfg.delta
        if half <= cfg.eps_for(i):
            new_maps[i] = pm
            continue
        v_lo = max(dom_lo, x - half)
        v_hi = min(dom_hi, x + half)
        points = list(pm.breakpoints)
        changed = _insert_breakpoint(points, v_lo)
        changed = _insert_breakpoint(points, v_hi) or changed
        if not changed:
            new_maps[i] = pm
            continue
        refined_any = True
        # the active partition becomes the piece of [v_lo, v_hi] holding x;
        # when x sits exactly on the new interval's left edge the left-tie
        # rule would pick the piece outside it, so step right once
        refined = PartitionMap(tuple(points))
        k = refined.locate(x)
        p_lo, p_hi = refined.partition(k)
        if (k < refined.size and p_hi <= v_lo + MIN_PARTITION_GAP
                and x >= p_hi - MIN_PARTITION_GAP):
            k += 1
        new_maps[i] = refined.with_active(k)
    return new_maps, refined_any


def locate_active(pmaps: dict, x_star: dict) -> dict:
    """Partition maps with active indices moved to the solution's partitions.

    A value equal to an interior breakpoint selects the left partition.
    """
    out = {}
    for i, pm in pmaps.items():
        out[i] = pm.with_active(pm.locate(float(x_star[i])))
    return out
