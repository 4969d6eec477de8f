"""Architectures, scenarios, node-count resolution and composition.

An architecture stacks elementary two-level networks (2Nets) into branches;
secondary branches attach to a primary node through a connector that either
passes the shared equipment (identity: its attenuation applies) or only the
site (passage: no attenuation). A mapping line separates 2Nets engineered at
whole-town scale from those engineered per territory part.

A scenario adds the engineering numbers: node-count rules, fibre loss,
splitter placement, capacities, cable families, last-link policy, and the
Monte Carlo budget. Resolution turns (architecture, scenario, territory)
into per-part node intensities; composition folds per-2Net distributions
into branch and network distance/attenuation distributions by convolution
and customer-weighted mixture.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import (
    AttenuationSpec,
    GridSpec,
    SampledDistribution,
    Unit,
    attenuation_of_link,
    convolve,
    eligibility,
    link_length_distribution,
    mixture,
    spec_to_distribution,
    splitter_attenuation,
)
from .errors import DocumentError, MissingHabitat, UnresolvableRule
from .tessellation import Family, TessellationModel
from .territory import HabitatFile, VoirieFile, VoirieRow

__all__ = [
    "NodeTypeDef",
    "LinkModel",
    "TwoNet",
    "Branch",
    "Connector",
    "Architecture",
    "CountRule",
    "Scenario",
    "ResolvedTwoNet",
    "ResolvedDeployment",
    "validate_architecture",
    "resolve_node_counts",
    "compose_distance",
    "compose_attenuation",
]

_SPLIT_FACTORS = (1, 2, 4, 8, 16, 32)


def _check_keys(obj: dict, allowed, context: str):
    unknown = set(obj) - set(allowed)
    if unknown:
        raise DocumentError(f"{context}: unknown fields {sorted(unknown)}")


@dataclass
class NodeTypeDef:
    name: str
    splitter: int = 1
    attenuation_causes: list = field(default_factory=list)  # of AttenuationSpec

    def __post_init__(self):
        if self.splitter not in _SPLIT_FACTORS:
            raise DocumentError(f"node {self.name}: splitter {self.splitter} "
                                f"not in {_SPLIT_FACTORS}")

    def to_json_obj(self):
        return {"name": self.name, "splitter": self.splitter,
                "attenuation_causes": [
                    {"law": c.law, "params": list(c.params), "cause": c.cause}
                    for c in self.attenuation_causes]}

    @classmethod
    def from_json_obj(cls, obj):
        _check_keys(obj, {"name", "splitter", "attenuation_causes"}, "node_type")
        causes = []
        for c in obj.get("attenuation_causes", []):
            _check_keys(c, {"law", "params", "cause"}, "attenuation cause")
            causes.append(AttenuationSpec(c["law"], tuple(c["params"]), c.get("cause", "")))
        return cls(name=obj["name"], splitter=obj.get("splitter", 1),
                   attenuation_causes=causes)


@dataclass(frozen=True)
class LinkModel:
    kind: str  # streets | crow_flies | constant | normal
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in ("streets", "crow_flies", "constant", "normal"):
            raise DocumentError(f"unknown link model {self.kind!r}")
        if self.kind == "constant" and len(self.params) != 1:
            raise DocumentError("constant link model needs (distance_km,)")
        if self.kind == "normal" and len(self.params) != 2:
            raise DocumentError("normal link model needs (mean_km, std_km)")


@dataclass
class TwoNet:
    name: str
    hl_type: str
    ll_type: str
    link_model: LinkModel = LinkModel("streets")


@dataclass
class Branch:
    name: str
    two_nets: list  # of TwoNet, ordered top (nearest the root) to bottom


@dataclass
class Connector:
    secondary_branch: str
    primary_node: str  # node type of the primary structure it attaches to
    kind: str  # identity | passage

    def __post_init__(self):
        if self.kind not in ("identity", "passage"):
            raise DocumentError(f"connector kind {self.kind!r} invalid")


@dataclass
class Architecture:
    name: str
    node_types: dict  # name -> NodeTypeDef
    branches: list  # of Branch; the first is the primary branch
    connectors: list = field(default_factory=list)
    mapping_line: dict = field(default_factory=dict)  # branch -> #2Nets above

    @property
    def primary(self) -> Branch:
        return self.branches[0]

    def branch(self, name: str) -> Branch:
        for b in self.branches:
            if b.name == name:
                return b
        raise KeyError(name)

    def connector_for(self, branch_name: str):
        for c in self.connectors:
            if c.secondary_branch == branch_name:
                return c
        return None

    def above_line(self, branch_name: str) -> int:
        return int(self.mapping_line.get(branch_name, 0))

    # -- JSON ------------------------------------------------------------------

    def to_json(self) -> str:
        obj = {
            "schema_version": 1,
            "name": self.name,
            "node_types": [nt.to_json_obj() for nt in self.node_types.values()],
            "branches": [
                {"name": b.name, "two_nets": [
                    {"name": t.name, "hl_type": t.hl_type, "ll_type": t.ll_type,
                     "link_model": {"kind": t.link_model.kind,
                                    "params": list(t.link_model.params)}}
                    for t in b.two_nets]}
                for b in self.branches],
            "connectors": [
                {"secondary_branch": c.secondary_branch, "primary_node": c.primary_node,
                 "kind": c.kind} for c in self.connectors],
            "mapping_line": dict(self.mapping_line),
        }
        return json.dumps(obj, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Architecture":
        obj = json.loads(text)
        _check_keys(obj, {"schema_version", "name", "node_types", "branches",
                          "connectors", "mapping_line"}, "architecture")
        if obj.get("schema_version") != 1:
            raise DocumentError("architecture: unsupported schema_version")
        node_types = {}
        for nt in obj["node_types"]:
            d = NodeTypeDef.from_json_obj(nt)
            node_types[d.name] = d
        branches = []
        for b in obj["branches"]:
            _check_keys(b, {"name", "two_nets"}, "branch")
            nets = []
            for t in b["two_nets"]:
                _check_keys(t, {"name", "hl_type", "ll_type", "link_model"}, "two_net")
                lm = t.get("link_model", {"kind": "streets"})
                _check_keys(lm, {"kind", "params"}, "link_model")
                nets.append(TwoNet(t["name"], t["hl_type"], t["ll_type"],
                                   LinkModel(lm["kind"], tuple(lm.get("params", ())))))
            branches.append(Branch(b["name"], nets))
        connectors = []
        for c in obj.get("connectors", []):
            _check_keys(c, {"secondary_branch", "primary_node", "kind"}, "connector")
            connectors.append(Connector(c["secondary_branch"], c["primary_node"], c["kind"]))
        return cls(name=obj["name"], node_types=node_types, branches=branches,
                   connectors=connectors, mapping_line=obj.get("mapping_line", {}))


def validate_architecture(arch: Architecture) -> list:
    """Structural diagnostics; an empty list means the architecture is sound."""
    diags = []
    if not arch.branches:
        return ["architecture has no branches"]
    names = set()
    for b in arch.branches:
        if b.name in names:
            diags.append(f"duplicate branch name {b.name!r}")
        names.add(b.name)
        if not b.two_nets:
            diags.append(f"branch {b.name!r} has no 2Nets")
        for t in b.two_nets:
            if t.hl_type == t.ll_type:
                diags.append(f"2Net {t.name!r}: HL and LL must be of different types")
            for side in (t.hl_type, t.ll_type):
                if side not in arch.node_types:
                    diags.append(f"2Net {t.name!r}: unknown node type {side!r}")
        for upper, lower in zip(b.two_nets[:-1], b.two_nets[1:]):
            if upper.ll_type != lower.hl_type:
                diags.append(
                    f"branch {b.name!r}: {upper.name!r} feeds {upper.ll_type!r} "
                    f"but {lower.name!r} roots at {lower.hl_type!r}")
    secondary = {b.name for b in arch.branches[1:]}
    connected = set()
    for c in arch.connectors:
        if c.secondary_branch not in secondary:
            diags.append(f"connector targets unknown branch {c.secondary_branch!r}")
            continue
        if c.secondary_branch in connected:
            diags.append(f"branch {c.secondary_branch!r} has more than one connector")
        connected.add(c.secondary_branch)
        primary_nodes = {t.hl_type for t in arch.primary.two_nets} | \
            {t.ll_type for t in arch.primary.two_nets}
        if c.primary_node not in primary_nodes:
            diags.append(f"unknown connector target {c.primary_node!r}")
    for name in secondary - connected:
        diags.append(f"secondary branch {name!r} lacks a connector")
    for bname, k in arch.mapping_line.items():
        if bname not in names:
            diags.append(f"mapping line references unknown branch {bname!r}")
        elif not (0 <= k <= len(arch.branch(bname).two_nets)):
            diags.append(f"mapping line position {k} out of range for {bname!r}")
    return diags


# ---------------------------------------------------------------------------
# scenario
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CountRule:
    kind: str  # direct | households_per_node | from_children | from_splitters
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("direct", "households_per_node", "from_children",
                             "from_splitters"):
            raise DocumentError(f"unknown count rule {self.kind!r}")
        if self.kind != "from_splitters" and self.value <= 0:
            raise DocumentError(f"count rule {self.kind} needs a positive value")


@dataclass
class Scenario:
    name: str
    count_rules: dict  # two_net name -> CountRule (counts its HL nodes)
    fibre_alpha_db_per_km: float = 0.35
    branch_customers: dict = field(default_factory=dict)  # branch -> fraction
    capacity_per_ll: dict = field(default_factory=dict)  # two_net -> int | "auto"
    capacity_multiplier: dict = field(default_factory=dict)  # two_net -> int
    cable_family: dict = field(default_factory=dict)  # two_net -> family def dict
    last_link_policy: int = 2
    last_link_fixed_km: float = 0.015
    n_simulations: dict = field(default_factory=dict)  # two_net -> N
    precision: float = 0.999
    cost_bricks: list = field(default_factory=list)  # brick dicts, see cost module

    def __post_init__(self):
        if not (0.9 < self.precision < 1.0):
            raise DocumentError("scenario precision must lie in (0.9, 1)")
        if self.last_link_policy not in (1, 2):
            raise DocumentError("last-link policy must be 1 or 2")

    def rule_for(self, two_net: str) -> CountRule:
        try:
            return self.count_rules[two_net]
        except KeyError:
            raise UnresolvableRule(f"no count rule for 2Net {two_net!r}") from None

    def to_json(self) -> str:
        obj = {
            "schema_version": 1,
            "name": self.name,
            "count_rules": {k: {"kind": r.kind, "value": r.value}
                            for k, r in self.count_rules.items()},
            "fibre_alpha_db_per_km": self.fibre_alpha_db_per_km,
            "branch_customers": dict(self.branch_customers),
            "capacity_per_ll": dict(self.capacity_per_ll),
            "capacity_multiplier": dict(self.capacity_multiplier),
            "cable_family": dict(self.cable_family),
            "last_link_policy": self.last_link_policy,
            "last_link_fixed_km": self.last_link_fixed_km,
            "n_simulations": dict(self.n_simulations),
            "precision": self.precision,
            "cost_bricks": list(self.cost_bricks),
        }
        return json.dumps(obj, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        obj = json.loads(text)
        allowed = {"schema_version", "name", "count_rules", "fibre_alpha_db_per_km",
                   "branch_customers", "capacity_per_ll", "capacity_multiplier",
                   "cable_family", "last_link_policy", "last_link_fixed_km",
                   "n_simulations", "precision", "cost_bricks"}
        _check_keys(obj, allowed, "scenario")
        if obj.get("schema_version") != 1:
            raise DocumentError("scenario: unsupported schema_version")
        rules = {}
        for k, r in obj.get("count_rules", {}).items():
            _check_keys(r, {"kind", "value"}, "count rule")
            rules[k] = CountRule(r["kind"], float(r.get("value", 0.0)))
        return cls(
            name=obj["name"],
            count_rules=rules,
            fibre_alpha_db_per_km=float(obj.get("fibre_alpha_db_per_km", 0.35)),
            branch_customers=obj.get("branch_customers", {}),
            capacity_per_ll=obj.get("capacity_per_ll", {}),
            capacity_multiplier=obj.get("capacity_multiplier", {}),
            cable_family=obj.get("cable_family", {}),
            last_link_policy=int(obj.get("last_link_policy", 2)),
            last_link_fixed_km=float(obj.get("last_link_fixed_km", 0.015)),
            n_simulations=obj.get("n_simulations", {}),
            precision=float(obj.get("precision", 0.999)),
            cost_bricks=obj.get("cost_bricks", []),
        )


# ---------------------------------------------------------------------------
# resolution
# ---------------------------------------------------------------------------


@dataclass
class ResolvedTwoNet:
    part: str  # voirie part id, or "total" for above-line 2Nets
    two_net: str
    branch: str
    hl_type: str
    ll_type: str
    n_hl: float  # unrounded; round half-up for display
    n_ll: float
    customers: float  # households served through this 2Net in this part
    area_km2: float
    family: Family
    gamma: float
    tau: float
    lambda_hl: float
    lambda_ll: float
    kappa: float
    capacity_per_ll: int
    capacity_multiplier: int
    link_model: LinkModel

    @property
    def n_hl_rounded(self) -> int:
        return int(math.floor(self.n_hl + 0.5))


@dataclass
class ResolvedDeployment:
    rows: list  # of ResolvedTwoNet

    def by_two_net(self, name: str) -> list:
        return [r for r in self.rows if r.two_net == name]

    def row(self, two_net: str, part: str) -> ResolvedTwoNet:
        for r in self.rows:
            if r.two_net == two_net and r.part == part:
                return r
        raise KeyError((two_net, part))

    def total_count(self, two_net: str) -> float:
        return sum(r.n_hl for r in self.by_two_net(two_net))


def _row_params(row: VoirieRow):
    model = TessellationModel(row.model, row.intensity)
    from .tessellation import theoretical_morphology

    return model, theoretical_morphology(model).street_length_density


def resolve_node_counts(arch: Architecture, scenario: Scenario,
                        voirie: VoirieFile, habitat: HabitatFile) -> ResolvedDeployment:
    """Resolve per-part node counts bottom-up and derive node intensities.

    2Nets above the mapping line live on the whole-town voirie row; the
    others are resolved independently on each part. Counts stay real-valued
    here so the intensities are unbiased; rounding is a display concern.
    """
    diags = validate_architecture(arch)
    if diags:
        raise DocumentError("invalid architecture: " + "; ".join(diags))
    for row in voirie.rows:
        if row.part not in habitat.households:
            raise MissingHabitat(f"part {row.part!r} has no household row")

    rows = []
    for b_idx, branch in enumerate(arch.branches):
        share = float(scenario.branch_customers.get(
            branch.name, 1.0 if b_idx == 0 else 0.0))
        k_above = arch.above_line(branch.name)
        nets = branch.two_nets
        # resolve each part independently for the below-line suffix
        part_counts_top = {}  # part -> count of the highest below-line level
        for row in voirie.rows:
            model, tau = _row_params(row)
            customers = habitat.households[row.part] * share
            n_below = customers
            for net in reversed(nets[k_above:]):
                n_hl = _apply_rule(scenario.rule_for(net.name), arch, net,
                                   n_below, customers)
                rows.append(_make_row(row.part, branch.name, net, n_hl, n_below,
                                      customers, row.area_km2, row.model,
                                      row.intensity, tau, scenario,
                                      arch.node_types[net.ll_type].splitter))
                n_below = n_hl
            part_counts_top[row.part] = n_below

        # above-line 2Nets on the whole town
        total_row = voirie.total
        model, tau = _row_params(total_row)
        customers_town = habitat.total * share
        n_below = sum(part_counts_top.values())
        for net in reversed(nets[:k_above]):
            n_hl = _apply_rule(scenario.rule_for(net.name), arch, net,
                               n_below, customers_town)
            rows.append(_make_row("total", branch.name, net, n_hl, n_below,
                                  customers_town, total_row.area_km2,
                                  total_row.model, total_row.intensity, tau,
                                  scenario, arch.node_types[net.ll_type].splitter))
            n_below = n_hl
    return ResolvedDeployment(rows=rows)


def _apply_rule(rule: CountRule, arch: Architecture, net: TwoNet,
                n_below: float, customers: float) -> float:
    if rule.kind == "direct":
        return float(rule.value)
    if rule.kind == "households_per_node":
        return customers / rule.value
    if rule.kind == "from_children":
        return n_below / rule.value
    # from_splitters: one wire out per splitter output feeding the level below
    factor = arch.node_types[net.hl_type].splitter
    if factor <= 0:
        raise UnresolvableRule(f"2Net {net.name!r}: splitter factor unusable")
    return n_below / factor


def _make_row(part, branch_name, net, n_hl, n_ll, customers, area, family,
              gamma, tau, scenario, ll_splitter: int = 1) -> ResolvedTwoNet:
    if n_hl <= 0:
        raise UnresolvableRule(f"2Net {net.name!r} resolves to {n_hl} nodes in part {part}")
    total_street = tau * area
    lam_hl = n_hl / total_street
    lam_ll = n_ll / total_street
    cap = scenario.capacity_per_ll.get(net.name, "auto")
    if cap == "auto":
        # each LL forwards its customers' fibres through its own splitter
        per_ll = customers / max(n_ll, 1e-12)
        cap = max(1, math.ceil(per_ll / ll_splitter - 1e-9))
    cap = int(cap)
    return ResolvedTwoNet(
        part=part, two_net=net.name, branch=branch_name,
        hl_type=net.hl_type, ll_type=net.ll_type,
        n_hl=float(n_hl), n_ll=float(n_ll), customers=float(customers),
        area_km2=float(area), family=family, gamma=float(gamma), tau=float(tau),
        lambda_hl=lam_hl, lambda_ll=lam_ll, kappa=tau / lam_hl,
        capacity_per_ll=cap,
        capacity_multiplier=int(scenario.capacity_multiplier.get(net.name, 1)),
        link_model=net.link_model,
    )


# ---------------------------------------------------------------------------
# composition
# ---------------------------------------------------------------------------


def _link_distribution(row: ResolvedTwoNet, grid: GridSpec, seed: int) -> SampledDistribution:
    lm = row.link_model
    if lm.kind == "constant":
        return SampledDistribution.delta(float(lm.params[0]), Unit.LENGTH_KM)
    if lm.kind == "normal":
        mean, std = (float(v) for v in lm.params)
        d = spec_to_distribution(AttenuationSpec("Normal", (mean, std)), grid)
        return SampledDistribution(d.origin, d.step, d.values, Unit.LENGTH_KM)
    if lm.kind == "crow_flies":
        from .typical_cell import NodePlacementParams, sample_link_lengths

        params = NodePlacementParams(
            lambda_hl=row.lambda_hl, lambda_ll=max(row.lambda_ll, 10 * row.lambda_hl),
            street_model=TessellationModel(row.family, row.gamma),
            enforce_range=False)
        lengths = sample_link_lengths(params, n_links=20000, seed=seed, euclidean=True)
        return SampledDistribution.from_samples(lengths, Unit.LENGTH_KM, grid)
    return link_length_distribution(row.family, row.gamma, row.lambda_hl, grid,
                                    seed=seed)


def _chain_for_branch(arch: Architecture, branch: Branch):
    """The 2Net chain a customer of this branch traverses, top to bottom.

    Secondary branches continue through the primary branch above their
    connector node.
    """
    if branch.name == arch.primary.name:
        return list(branch.two_nets), None
    conn = arch.connector_for(branch.name)
    prefix = []
    if conn is not None:
        for t in arch.primary.two_nets:
            prefix.append(t)
            if t.ll_type == conn.primary_node:
                break
        else:
            prefix = []
    return prefix + list(branch.two_nets), conn


def _parts_for(arch, resolved, two_net_name):
    return sorted({r.part for r in resolved.by_two_net(two_net_name)})


class ComposedResult:
    """Distance or attenuation distributions per 2Net, branch and network."""

    def __init__(self, per_two_net, per_branch, network, unit):
        self.per_two_net = per_two_net  # (two_net, part) -> SampledDistribution
        self.per_branch = per_branch  # branch -> SampledDistribution
        self.network = network  # SampledDistribution
        self.unit = unit

    def eligibility(self, threshold: float) -> float:
        return eligibility(self.network, threshold)


def compose_distance(arch: Architecture, resolved: ResolvedDeployment,
                     scenario: Scenario, seed: int = 12061) -> ComposedResult:
    """Customer-distance distributions: convolve stacks, mix branches by customers."""
    grid = GridSpec(precision=scenario.precision)
    cache = {}

    def dist_of(row):
        key = (row.two_net, row.part)
        if key not in cache:
            cache[key] = _link_distribution(row, grid, seed + (hash(key) & 0xFFFF))
        return cache[key]

    branch_dists = {}
    branch_weights = {}
    for branch in arch.branches:
        chain, _ = _chain_for_branch(arch, branch)
        bottoms = resolved.by_two_net(branch.two_nets[-1].name) if branch.two_nets else []
        weight = sum(r.customers for r in bottoms)
        per_part = []
        parts = _parts_for(arch, resolved, branch.two_nets[-1].name)
        for part in parts:
            factors = []
            for net in chain:
                rows = resolved.by_two_net(net.name)
                row = next((r for r in rows if r.part == part),
                           next((r for r in rows if r.part == "total"), None))
                if row is None:
                    continue
                factors.append(dist_of(row))
            if not factors:
                continue
            total = factors[0]
            for f in factors[1:]:
                total = convolve(total, f)
            part_rows = resolved.by_two_net(branch.two_nets[-1].name)
            w = next((r.customers for r in part_rows if r.part == part), 0.0)
            per_part.append((total, w))
        if per_part and sum(w for _, w in per_part) > 0:
            branch_dists[branch.name] = mixture(per_part)
            branch_weights[branch.name] = weight
    network = mixture([(d, branch_weights[b]) for b, d in branch_dists.items()])
    return ComposedResult(dict(cache), branch_dists, network, Unit.LENGTH_KM)


def _node_attenuation(arch: Architecture, scenario: Scenario, node_type: str,
                      grid: GridSpec) -> SampledDistribution | None:
    nt = arch.node_types[node_type]
    parts = []
    if nt.splitter > 1:
        parts.append(SampledDistribution.delta(splitter_attenuation(nt.splitter),
                                               Unit.ATTENUATION_DB))
    for cause in nt.attenuation_causes:
        parts.append(spec_to_distribution(cause, grid))
    if not parts:
        return None
    total = parts[0]
    for p in parts[1:]:
        total = convolve(total, p)
    return total


def compose_attenuation(arch: Architecture, resolved: ResolvedDeployment,
                        scenario: Scenario, seed: int = 12061) -> ComposedResult:
    """Signal-loss distributions along each branch and over the whole network.

    Per branch: fibre attenuation (alpha x link length) of every 2Net in the
    chain convolved with every node's causes and splitter loss. A passage
    connector skips the shared node's equipment for the secondary branch.
    """
    grid = GridSpec(precision=scenario.precision)
    alpha = scenario.fibre_alpha_db_per_km
    link_cache = {}

    def link_att(row):
        key = (row.two_net, row.part)
        if key not in link_cache:
            d = _link_distribution(row, grid, seed + (hash(key) & 0xFFFF))
            link_cache[key] = attenuation_of_link(d, alpha)
        return link_cache[key]

    node_cache = {}

    def node_att(name):
        if name not in node_cache:
            node_cache[name] = _node_attenuation(arch, scenario, name, grid)
        return node_cache[name]

    branch_dists = {}
    branch_weights = {}
    per_two_net = {}
    for branch in arch.branches:
        chain, conn = _chain_for_branch(arch, branch)
        skip_node = conn.primary_node if (conn is not None and conn.kind == "passage") \
            else None
        bottoms = resolved.by_two_net(branch.two_nets[-1].name) if branch.two_nets else []
        weight = sum(r.customers for r in bottoms)
        parts = _parts_for(arch, resolved, branch.two_nets[-1].name)
        per_part = []
        for part in parts:
            factors = []
            seen_nodes = []
            for net in chain:
                rows = resolved.by_two_net(net.name)
                row = next((r for r in rows if r.part == part),
                           next((r for r in rows if r.part == "total"), None))
                if row is None:
                    continue
                att = link_att(row)
                per_two_net[(net.name, row.part)] = att
                factors.append(att)
                for node in (net.hl_type, net.ll_type):
                    if node not in seen_nodes:
                        seen_nodes.append(node)
            for node in seen_nodes:
                if node == skip_node:
                    continue
                d = node_att(node)
                if d is not None:
                    factors.append(d)
            if not factors:
                continue
            total = factors[0]
            for f in factors[1:]:
                total = convolve(total, f)
            part_rows = resolved.by_two_net(branch.two_nets[-1].name)
            w = next((r.customers for r in part_rows if r.part == part), 0.0)
            per_part.append((total, w))
        if per_part and sum(w for _, w in per_part) > 0:
            branch_dists[branch.name] = mixture(per_part)
            branch_weights[branch.name] = weight
    network = mixture([(d, branch_weights[b]) for b, d in branch_dists.items()])
    return ComposedResult(per_two_net, branch_dists, network, Unit.ATTENUATION_DB)
