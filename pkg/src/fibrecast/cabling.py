"""Cabling policy, capacity-tree Monte Carlo and the last link.

Each tree section of capacity c gets the smallest standard cable with at
least c fibres; demand beyond the largest size overflows into an extra
largest cable plus whatever covers the remainder. Monte Carlo runs average
the per-cell (size -> km) histograms over N independent typical cells and
track dispersion so the central-limit sample-size hint can be offered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyFamily
from .typical_cell import (
    NodePlacementParams,
    build_capacity_tree,
    iter_typical_cells,
    place_lls,
)

__all__ = [
    "CableFamily",
    "CableHistogram",
    "MonteCarloStats",
    "cables_for_demand",
    "cable_sections",
    "cable_tree",
    "monte_carlo_cabling",
    "sample_size_hint",
    "last_link_cabling",
]

DEFAULT_SIZES = (6, 12, 24, 36, 48, 72, 144, 288, 720)


@dataclass(frozen=True)
class CableFamily:
    """Standard n-fibre cable sizes and their per-metre costs."""

    sizes: tuple = DEFAULT_SIZES
    material_per_m: dict = field(default_factory=dict)  # size -> currency
    workforce_per_m: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.sizes:
            raise EmptyFamily("cable family needs at least one size")
        if list(self.sizes) != sorted(set(self.sizes)):
            raise ValueError("cable sizes must be strictly ascending")
        if any(s <= 0 for s in self.sizes):
            raise ValueError("cable sizes must be positive")

    @classmethod
    def from_json_obj(cls, obj) -> "CableFamily":
        return cls(sizes=tuple(obj.get("sizes", DEFAULT_SIZES)),
                   material_per_m={int(k): float(v)
                                   for k, v in obj.get("material_per_m", {}).items()},
                   workforce_per_m={int(k): float(v)
                                    for k, v in obj.get("workforce_per_m", {}).items()})

    def to_json_obj(self):
        return {"sizes": list(self.sizes),
                "material_per_m": {str(k): v for k, v in self.material_per_m.items()},
                "workforce_per_m": {str(k): v for k, v in self.workforce_per_m.items()}}


@dataclass
class CableHistogram:
    """Total km installed per cable size, plus coverage bookkeeping."""

    km_by_size: dict = field(default_factory=dict)  # size -> km
    covered_street_km: float = 0.0
    merge_count: float = 0.0  # section boundaries where the cable set changes

    def add(self, other: "CableHistogram", weight: float = 1.0):
        for size, km in other.km_by_size.items():
            self.km_by_size[size] = self.km_by_size.get(size, 0.0) + weight * km
        self.covered_street_km += weight * other.covered_street_km
        self.merge_count += weight * other.merge_count

    def scaled(self, factor: float) -> "CableHistogram":
        return CableHistogram(
            km_by_size={s: km * factor for s, km in self.km_by_size.items()},
            covered_street_km=self.covered_street_km * factor,
            merge_count=self.merge_count * factor,
        )

    @property
    def total_cable_km(self) -> float:
        return float(sum(self.km_by_size.values()))

    def to_csv(self) -> str:
        lines = ["size_fibres,total_km"]
        for size in sorted(self.km_by_size):
            lines.append(f"{size},{self.km_by_size[size]:.9g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "CableHistogram":
        km = {}
        for line in text.strip().splitlines()[1:]:
            size, total = line.split(",")
            km[int(size)] = float(total)
        return cls(km_by_size=km)


def cables_for_demand(demand: int, family: CableFamily) -> tuple:
    """Cable sizes covering a fibre demand: smallest size >= demand, with
    overflow recursing through extra largest cables."""
    if demand <= 0:
        return ()
    sizes = family.sizes
    out = []
    biggest = sizes[-1]
    while demand > biggest:
        out.append(biggest)
        demand -= biggest
    for s in sizes:
        if s >= demand:
            out.append(s)
            break
    return tuple(sorted(out))


def cable_sections(tree, family: CableFamily, capacity_multiplier: int = 1):
    """Per-section cable assignment of a capacity tree.

    Returns a list aligned with the tree's sections: tuples of cable sizes
    (empty for zero-demand sections).
    """
    if capacity_multiplier < 1:
        raise ValueError("capacity multiplier must be >= 1")
    out = []
    for cap in tree.section_capacity:
        out.append(cables_for_demand(int(cap) * capacity_multiplier, family))
    return out


def cable_tree(tree, family: CableFamily, capacity_multiplier: int = 1,
               include_borrowed: bool = True) -> CableHistogram:
    """Cable histogram of one capacity tree."""
    assignment = cable_sections(tree, family, capacity_multiplier)
    hist = CableHistogram()
    for sizes, length, in_cell in zip(assignment, tree.section_length,
                                      tree.section_in_cell):
        if not sizes:
            continue
        if not include_borrowed and not in_cell:
            continue
        for s in sizes:
            hist.km_by_size[s] = hist.km_by_size.get(s, 0.0) + float(length)
    hist.covered_street_km = tree.covered_length(include_borrowed=include_borrowed)

    # merge points: boundaries where the cable set changes along the tree
    set_of = {}
    for i, sizes in enumerate(assignment):
        set_of[int(tree.section_child[i])] = sizes
    merges = 0
    children_of = {}
    for i in range(len(assignment)):
        children_of.setdefault(int(tree.section_parent[i]), []).append(i)
    for i, sizes in enumerate(assignment):
        child_vertex = int(tree.section_child[i])
        for j in children_of.get(child_vertex, ()):
            if assignment[j] != sizes:
                merges += 1
    hist.merge_count = float(merges)
    return hist


@dataclass
class MonteCarloStats:
    """Mean histogram over N trees plus dispersion of the tracked quantities."""

    mean: CableHistogram
    n: int
    tracked_mean: dict  # quantity -> mean
    tracked_std: dict  # quantity -> std (ddof=1)
    root_capacity_mean: float = 0.0
    mean_tree_fibre_km: float = 0.0


def monte_carlo_cabling(params: NodePlacementParams, c: int, family: CableFamily,
                        capacity_multiplier: int, n_sims: int, seed: int,
                        include_borrowed: bool = True) -> MonteCarloStats:
    """Sample N typical-cell trees, cable each one, and average.

    Deterministic for a given seed; cells come from the batch sampler in a
    fixed order, so any N is a prefix of a longer run.
    """
    if n_sims < 1:
        raise ValueError("need at least one simulation")
    mean = CableHistogram()
    per_size_samples: dict = {}
    covered_samples = []
    root_caps = []
    fibre_kms = []
    count = 0
    for idx, cell in enumerate(iter_typical_cells(params, seed)):
        place_lls(cell, params.lambda_ll, seed=(seed * 1000003 + idx) & 0x7FFFFFFF)
        tree = build_capacity_tree(cell, c=c)
        hist = cable_tree(tree, family, capacity_multiplier, include_borrowed)
        mean.add(hist)
        covered_samples.append(hist.covered_street_km)
        root_caps.append(tree.root_capacity)
        fibre_kms.append(tree.total_fibre_km())
        for s, km in hist.km_by_size.items():
            per_size_samples.setdefault(s, []).append((idx, km))
        count += 1
        if count >= n_sims:
            break
    mean = mean.scaled(1.0 / count)

    tracked_mean = {"covered_street_km": float(np.mean(covered_samples))}
    tracked_std = {"covered_street_km": float(np.std(covered_samples, ddof=1))
                   if count > 1 else 0.0}
    for s, pairs in per_size_samples.items():
        vals = np.zeros(count)
        for idx, km in pairs:
            vals[idx] = km
        tracked_mean[f"cable_km_{s}"] = float(vals.mean())
        tracked_std[f"cable_km_{s}"] = float(vals.std(ddof=1)) if count > 1 else 0.0
    return MonteCarloStats(
        mean=mean, n=count, tracked_mean=tracked_mean, tracked_std=tracked_std,
        root_capacity_mean=float(np.mean(root_caps)),
        mean_tree_fibre_km=float(np.mean(fibre_kms)),
    )


def sample_size_hint(stats: MonteCarloStats, a: float) -> int:
    """Simulations needed so the mean errors stay within +-a at 95 percent.

    N_a = ceil((1.96 sigma / (a mu))^2), maximized over the tracked
    quantities; zero-mean quantities are skipped.
    """
    if a <= 0:
        raise ValueError("relative error target must be > 0")
    worst = 1
    for key, mu in stats.tracked_mean.items():
        sigma = stats.tracked_std.get(key, 0.0)
        if mu == 0.0:
            continue  # nothing to control; excluded with a warning upstream
        n = math.ceil((1.96 * sigma / (a * mu)) ** 2)
        worst = max(worst, int(n))
    return worst


def last_link_cabling(building_households, policy: int, family: CableFamily,
                      fixed_length_km: float = 0.015) -> CableHistogram:
    """Street-to-building cables over a fixed 15 m mean run.

    Policy 1 installs one 12-fibre cable per building; policy 2 sizes each
    cable to the building's household count.
    """
    hist = CableHistogram()
    for households in building_households:
        if policy == 1:
            sizes = (12,)
        else:
            sizes = cables_for_demand(int(households), family)
        for s in sizes:
            hist.km_by_size[s] = hist.km_by_size.get(s, 0.0) + fixed_length_km
    return hist
