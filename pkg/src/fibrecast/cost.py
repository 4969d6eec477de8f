"""Cost bricks, category x level reports, and report comparison.

Every cost is a brick WU * data * coeff: a unitary price, a quantity the
model already knows (households, node counts, covered street km, cable km
by size, ...), and a free coefficient. Bricks aggregate into a matrix of
four categories (material, workforce, civil_work, studies) by network
level, with a parallel fixed/variable split. Costs nobody can express are
declared by name in the uncounted list rather than silently dropped.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from .errors import DocumentError, ShapeMismatch, UnresolvedDataRef

__all__ = [
    "CATEGORIES",
    "CostBrick",
    "CostContext",
    "CostReport",
    "evaluate_cost",
    "compare_reports",
]

CATEGORIES = ("material", "workforce", "civil_work", "studies")


@dataclass(frozen=True)
class CostBrick:
    """wu * value(data_ref) * coeff booked to one category and level."""

    name: str
    wu: float
    data_ref: str  # households | node_count:TYPE | covered_street_km:NET |
    #               cable_km:NET:SIZE | link_count:NET | merge_count:NET | constant
    coeff: float
    category: str
    level: str = "global"  # a 2Net name or "global"
    fixed: bool = False

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise DocumentError(f"brick {self.name!r}: category {self.category!r} "
                                f"not in {CATEGORIES}")
        if self.wu < 0:
            raise DocumentError(f"brick {self.name!r}: WU must be >= 0")

    @classmethod
    def from_json_obj(cls, obj) -> "CostBrick":
        allowed = {"name", "wu", "data_ref", "coeff", "category", "level", "fixed"}
        unknown = set(obj) - allowed
        if unknown:
            raise DocumentError(f"cost brick: unknown fields {sorted(unknown)}")
        return cls(name=obj["name"], wu=float(obj["wu"]), data_ref=obj["data_ref"],
                   coeff=float(obj.get("coeff", 1.0)), category=obj["category"],
                   level=obj.get("level", "global"), fixed=bool(obj.get("fixed", False)))

    def to_json_obj(self):
        return {"name": self.name, "wu": self.wu, "data_ref": self.data_ref,
                "coeff": self.coeff, "category": self.category,
                "level": self.level, "fixed": self.fixed}


@dataclass
class CostContext:
    """Resolvable quantities for brick evaluation."""

    households: float = 0.0
    node_counts: dict = field(default_factory=dict)  # node type -> count
    covered_street_km: dict = field(default_factory=dict)  # two_net -> km
    cable_km: dict = field(default_factory=dict)  # (two_net, size) -> km
    link_counts: dict = field(default_factory=dict)  # two_net -> count
    merge_counts: dict = field(default_factory=dict)  # two_net -> count
    uncounted: list = field(default_factory=list)  # names the model cannot express

    def resolve(self, ref: str) -> float:
        head, *rest = ref.split(":")
        try:
            if head == "households":
                return float(self.households)
            if head == "constant":
                return 1.0
            if head == "node_count":
                return float(self.node_counts[rest[0]])
            if head == "covered_street_km":
                return float(self.covered_street_km[rest[0]])
            if head == "cable_km":
                return float(self.cable_km[(rest[0], int(rest[1]))])
            if head == "link_count":
                return float(self.link_counts[rest[0]])
            if head == "merge_count":
                return float(self.merge_counts[rest[0]])
        except (KeyError, IndexError):
            raise UnresolvedDataRef(f"data_ref {ref!r} not resolvable") from None
        raise UnresolvedDataRef(f"unknown data_ref kind {head!r}")


@dataclass
class CostReport:
    """category x level cost matrix with totals and a fixed/variable split."""

    cells: dict  # (category, level) -> amount
    fixed: float
    variable: float
    uncounted: list = field(default_factory=list)

    @property
    def total(self) -> float:
        return sum(self.cells.values())

    @property
    def levels(self) -> list:
        return sorted({lv for _, lv in self.cells})

    def by_category(self) -> dict:
        out = {}
        for (cat, _), v in self.cells.items():
            out[cat] = out.get(cat, 0.0) + v
        return out

    def by_level(self) -> dict:
        out = {}
        for (_, lv), v in self.cells.items():
            out[lv] = out.get(lv, 0.0) + v
        return out

    def to_json(self) -> str:
        obj = {
            "cells": [{"category": c, "level": lv, "amount": v}
                      for (c, lv), v in sorted(self.cells.items())],
            "fixed": self.fixed,
            "variable": self.variable,
            "total": self.total,
            "uncounted": list(self.uncounted),
        }
        return json.dumps(obj, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CostReport":
        obj = json.loads(text)
        cells = {(c["category"], c["level"]): float(c["amount"]) for c in obj["cells"]}
        return cls(cells=cells, fixed=float(obj["fixed"]),
                   variable=float(obj["variable"]), uncounted=obj.get("uncounted", []))

    def to_csv(self) -> str:
        levels = self.levels
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["category", *levels, "total"])
        for cat in CATEGORIES:
            row = [self.cells.get((cat, lv), 0.0) for lv in levels]
            w.writerow([cat, *(f"{v:.2f}" for v in row), f"{sum(row):.2f}"])
        w.writerow(["total", *(f"{self.by_level().get(lv, 0.0):.2f}" for lv in levels),
                    f"{self.total:.2f}"])
        return buf.getvalue()


def evaluate_cost(bricks, context: CostContext) -> CostReport:
    """Evaluate a brick list against resolved quantities."""
    cells: dict = {}
    fixed = variable = 0.0
    for brick in bricks:
        if isinstance(brick, dict):
            brick = CostBrick.from_json_obj(brick)
        amount = brick.wu * context.resolve(brick.data_ref) * brick.coeff
        key = (brick.category, brick.level)
        cells[key] = cells.get(key, 0.0) + amount
        if brick.fixed:
            fixed += amount
        else:
            variable += amount
    return CostReport(cells=cells, fixed=fixed, variable=variable,
                      uncounted=list(context.uncounted))


def compare_reports(r1: CostReport, r2: CostReport) -> dict:
    """Elementwise relative difference (r1 - r2) / r2.

    Cells with a zero reference are flagged with None instead of a ratio.
    """
    if set(r1.cells) != set(r2.cells):
        raise ShapeMismatch("reports do not share the same category x level shape")
    out = {}
    for key, ref in r2.cells.items():
        if ref == 0.0:
            out[key] = None
        else:
            out[key] = (r1.cells[key] - ref) / ref
    return out
