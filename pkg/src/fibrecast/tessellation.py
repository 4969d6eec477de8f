"""Random street-system models and the morphology fitting procedure.

Three stationary random tessellations are supported as street models, each
driven by a single scalar intensity gamma:

* PVT - Voronoi tessellation of a homogeneous Poisson point process
  (gamma in points/km^2),
* PLT - isotropic Poisson line process (gamma in km of line per km^2),
* PDT - Delaunay triangulation of a Poisson point process (gamma in
  points/km^2).

A street map, real or simulated, is summarized by its morphology vector:
densities of crossings, edges and cells per km^2 plus street length per km^2.
Fitting selects the (family, gamma) whose closed-form vector is nearest to
the measured one in relative Euclidean distance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.spatial import Delaunay, QhullError, Voronoi

from .errors import DegenerateWindow, EmptyGraph, NoCandidates
from .geomutil import Box, clip_segments, poisson_points

__all__ = [
    "Family",
    "MorphologyVector",
    "TessellationModel",
    "PlanarTessellation",
    "FitResult",
    "theoretical_morphology",
    "estimate_morphology",
    "fit_model",
    "generate_realization",
]


class Family(str, Enum):
    PVT = "PVT"
    PLT = "PLT"
    PDT = "PDT"


# Monomial structure of the theoretical vectors: the first three components
# are coeff * u^2 and street length is coeff * u, with u = sqrt(gamma) for the
# point-driven families and u = gamma for PLT.
_QUADRATIC_COEFFS = {
    Family.PVT: (2.0, 3.0, 1.0),
    Family.PLT: (1.0 / math.pi, 2.0 / math.pi, 1.0 / math.pi),
    Family.PDT: (1.0, 3.0, 2.0),
}
_LINEAR_COEFF = {
    Family.PVT: 2.0,
    Family.PLT: 1.0,
    Family.PDT: 32.0 / (3.0 * math.pi),
}


@dataclass
class MorphologyVector:
    """Per-km^2 densities characterizing a street map."""

    crossings_density: float
    edges_density: float
    cells_density: float
    street_length_density: float  # km of street per km^2
    reference_area: float | None = None  # km^2, for absolute-count views

    def __post_init__(self):
        for name in ("crossings_density", "edges_density", "cells_density",
                     "street_length_density"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def as_array(self) -> np.ndarray:
        return np.array([
            self.crossings_density,
            self.edges_density,
            self.cells_density,
            self.street_length_density,
        ])

    def absolute_counts(self) -> np.ndarray:
        """Counts over the reference area (crossings, edges, cells, street km)."""
        if self.reference_area is None:
            raise ValueError("reference_area not set")
        return self.as_array() * self.reference_area

    def euler_gap(self) -> float:
        """Relative gap in the check identity edges = crossings + cells."""
        expected = self.crossings_density + self.cells_density
        if expected == 0:
            return 0.0 if self.edges_density == 0 else math.inf
        return abs(self.edges_density - expected) / expected

    def is_consistent(self, tolerance: float = 0.05) -> bool:
        return self.euler_gap() <= tolerance

    def to_json(self) -> str:
        data = {
            "crossings_density": self.crossings_density,
            "edges_density": self.edges_density,
            "cells_density": self.cells_density,
            "street_length_density": self.street_length_density,
        }
        if self.reference_area is not None:
            data["reference_area"] = self.reference_area
        return json.dumps(data, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MorphologyVector":
        return cls(**json.loads(text))


@dataclass(frozen=True)
class TessellationModel:
    """A street-model family plus its scalar intensity.

    gamma is km^-2 for PVT/PDT (point intensities) and km^-1 for PLT
    (line length per unit area).
    """

    family: Family
    gamma: float

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")

    @property
    def tau(self) -> float:
        """Street length density (km/km^2) implied by the model."""
        return theoretical_morphology(self).street_length_density


@dataclass
class PlanarTessellation:
    """A planar street graph: straight or polyline edges between vertices.

    ``truncated`` flags edges that were cut by the window boundary when the
    graph is a clipped realization of a stationary model; those get weight
    1/2 in density estimation so large-window estimates stay unbiased.
    """

    vertices: np.ndarray  # (n, 2) km
    edges: np.ndarray  # (m, 2) vertex indices
    window: Box
    lengths: np.ndarray = None  # (m,) km
    polylines: list | None = None  # per-edge (k,2) arrays, straight if None
    truncated: np.ndarray = None  # (m,) bool
    window_clipped: bool = False
    area_km2: float | None = None  # density reference area, window area if None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        self.edges = np.asarray(self.edges, dtype=int).reshape(-1, 2)
        if self.lengths is None:
            if self.polylines is not None:
                self.lengths = np.array([
                    float(np.sum(np.hypot(*np.diff(pl, axis=0).T))) for pl in self.polylines
                ])
            else:
                d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
                self.lengths = np.hypot(d[:, 0], d[:, 1])
        self.lengths = np.asarray(self.lengths, dtype=float)
        if self.truncated is None:
            self.truncated = np.zeros(len(self.edges), dtype=bool)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def total_length(self) -> float:
        return float(self.lengths.sum())

    @property
    def reference_area(self) -> float:
        return self.window.area if self.area_km2 is None else self.area_km2

    def degrees(self) -> np.ndarray:
        deg = np.zeros(len(self.vertices), dtype=int)
        np.add.at(deg, self.edges[:, 0], 1)
        np.add.at(deg, self.edges[:, 1], 1)
        return deg

    def edge_geometry(self, i: int) -> np.ndarray:
        if self.polylines is not None and self.polylines[i] is not None:
            return self.polylines[i]
        return self.vertices[self.edges[i]]

    def to_edge_text(self) -> str:
        """Edge-list text: '#'-header with window bounds, one segment per line."""
        w = self.window
        lines = [f"# window {w.xmin:.9f} {w.ymin:.9f} {w.xmax:.9f} {w.ymax:.9f}"]
        for i in range(self.n_edges):
            geom = self.edge_geometry(i)
            for a, b in zip(geom[:-1], geom[1:]):
                lines.append(f"{a[0]:.9f} {a[1]:.9f} {b[0]:.9f} {b[1]:.9f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edge_text(cls, text: str) -> "PlanarTessellation":
        window = None
        segs = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line.split()
                if len(parts) >= 6 and parts[1] == "window":
                    window = Box(*(float(v) for v in parts[2:6]))
                continue
            x1, y1, x2, y2 = (float(v) for v in line.split())
            segs.append((x1, y1, x2, y2))
        if not segs:
            raise EmptyGraph("no edges in edge-list text")
        segs = np.array(segs)
        pts = np.vstack([segs[:, :2], segs[:, 2:]])
        uniq, inverse = np.unique(pts.round(9), axis=0, return_inverse=True)
        edges = np.column_stack([inverse[: len(segs)], inverse[len(segs):]])
        if window is None:
            window = Box(float(uniq[:, 0].min()), float(uniq[:, 1].min()),
                         float(uniq[:, 0].max()), float(uniq[:, 1].max()))
        return cls(vertices=uniq, edges=edges, window=window)


@dataclass(frozen=True)
class FitResult:
    model: TessellationModel
    residual: float


def theoretical_morphology(model: TessellationModel,
                           reference_area: float | None = None) -> MorphologyVector:
    """Closed-form morphology vector of a street model."""
    q = _QUADRATIC_COEFFS[model.family]
    p = _LINEAR_COEFF[model.family]
    u = model.gamma if model.family is Family.PLT else math.sqrt(model.gamma)
    return MorphologyVector(
        crossings_density=q[0] * u * u,
        edges_density=q[1] * u * u,
        cells_density=q[2] * u * u,
        street_length_density=p * u,
        reference_area=reference_area,
    )


def _merge_degree2(graph: PlanarTessellation):
    """Absorb degree-2 vertices into polyline edges.

    Returns (n_crossings, n_vertices, n_edges, truncated_count, n_components).
    Pure-cycle components (every vertex degree 2) keep their raw vertices:
    their corners are taken as drawn rather than treated as bends.
    """
    deg = graph.degrees()
    n_vert = len(graph.vertices)

    # union-find for connected components
    parent = np.arange(n_vert)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for u, v in graph.edges:
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[ru] = rv

    roots = np.array([find(i) for i in range(n_vert)])
    used = deg > 0
    comp_ids = np.unique(roots[used]) if used.any() else np.array([], dtype=int)
    n_components = len(comp_ids)

    # a component is a pure cycle iff all its vertices have degree exactly 2
    comp_has_node = {}
    for i in range(n_vert):
        if deg[i] >= 3 or deg[i] == 1:
            comp_has_node[roots[i]] = True
    pure_cycle = {c: not comp_has_node.get(c, False) for c in comp_ids}

    # mergeable: degree-2 vertices in components that are not pure cycles
    mergeable = (deg == 2) & np.array(
        [pure_cycle.get(roots[i], False) is False for i in range(n_vert)]
    )

    # each merge of a degree-2 vertex removes one vertex and one edge
    n_merged = int(mergeable.sum())
    kept_vertices = int(used.sum()) - n_merged
    kept_edges = graph.n_edges - n_merged
    n_crossings = int((deg >= 3).sum())
    for c in comp_ids:
        if pure_cycle[c]:
            n_crossings += int(np.sum((roots == c) & used))
    truncated_count = int(graph.truncated.sum())
    return n_crossings, kept_vertices, kept_edges, truncated_count, n_components


def estimate_morphology(graph: PlanarTessellation) -> MorphologyVector:
    """Measure the morphology vector of a planar street graph.

    Crossings are vertices of degree >= 3 (bends and dead-end tips do not
    count); cells come from the Euler relation. For window-clipped
    realizations, boundary-cut edges are half-weighted and the cell count
    drops the finite-graph '+components' term, which makes the estimate
    asymptotically unbiased for stationary models.
    """
    if graph.n_edges == 0:
        raise EmptyGraph("cannot estimate morphology of an empty graph")
    area = graph.reference_area
    if area <= 0:
        raise ValueError("window area must be > 0")

    n_cross, n_vert, n_edges, n_trunc, n_comp = _merge_degree2(graph)

    if graph.window_clipped:
        edge_count = (n_edges - n_trunc) + 0.5 * n_trunc
        cell_count = edge_count - n_cross
    else:
        edge_count = float(n_edges)
        cell_count = float(n_edges - n_vert + n_comp)
    cell_count = max(cell_count, 0.0)

    return MorphologyVector(
        crossings_density=n_cross / area,
        edges_density=edge_count / area,
        cells_density=cell_count / area,
        street_length_density=graph.total_length / area,
        reference_area=area,
    )


def _fit_single_family(measured: np.ndarray, family: Family) -> tuple[float, float]:
    """Best intensity and residual for one family.

    The theoretical vector is (q_i u^2, p u), so the stationarity condition
    of the relative squared distance is the cubic
        2 sum(Q_i^2) u^3 + (P^2 - 2 sum(Q_i)) u - P = 0
    with Q_i = q_i / m_i and P = p / m_tau; positive roots are candidate
    minima and are polished with one Newton step.
    """
    q = np.array(_QUADRATIC_COEFFS[family])
    p = _LINEAR_COEFF[family]
    mq = measured[:3]
    mt = measured[3]
    pos = mq > 0
    if mt <= 0 or not pos.any():
        raise ValueError("fitting needs positive crossings/edges/cells and street length")
    Q = q[pos] / mq[pos]
    P = p / mt

    coeffs = [2.0 * np.sum(Q**2), 0.0, P**2 - 2.0 * np.sum(Q), -P]
    roots = np.roots(coeffs)
    cands = [float(r.real) for r in roots if abs(r.imag) < 1e-9 * (1 + abs(r.real)) and r.real > 0]
    if not cands:  # fall back to a coarse log-grid scan
        cands = list(np.geomspace(1e-4, 1e6, 200))

    def dist(u):
        return float(np.sum((1.0 - Q * u * u) ** 2) + (1.0 - P * u) ** 2)

    def ddist(u):
        return float(4 * np.sum(Q**2) * u**3 - 4 * np.sum(Q) * u + 2 * P * P * u - 2 * P)

    def d2dist(u):
        return float(12 * np.sum(Q**2) * u**2 - 4 * np.sum(Q) + 2 * P * P)

    best_u, best_d = None, math.inf
    for u in cands:
        h = d2dist(u)
        if h > 0:
            step = ddist(u) / h
            if abs(step) < 0.5 * u:
                u = u - step
        d = dist(u)
        if d < best_d:
            best_u, best_d = u, d
    gamma = best_u if family is Family.PLT else best_u * best_u
    return gamma, best_d


def fit_model(measured: MorphologyVector,
              candidates=(Family.PVT, Family.PLT, Family.PDT)) -> FitResult:
    """Select the street-model family and intensity nearest to a measured vector.

    Distance is the relative Euclidean distance over all four components;
    the edges component participates with weight 1, so maps violating the
    Euler check show up as residual rather than being silently accepted.
    """
    candidates = list(candidates)
    if not candidates:
        raise NoCandidates("no candidate families supplied")
    m = measured.as_array()
    best = None
    for family in candidates:
        gamma, residual = _fit_single_family(m, Family(family))
        if best is None or residual < best.residual:
            best = FitResult(TessellationModel(Family(family), gamma), residual)
    return best


# ---------------------------------------------------------------------------
# realization generators
# ---------------------------------------------------------------------------


def _dedup_vertices(points: np.ndarray, decimals: int = 9):
    uniq, inverse = np.unique(points.round(decimals), axis=0, return_inverse=True)
    return uniq, inverse


def _clip_and_build(p: np.ndarray, q: np.ndarray, window: Box) -> PlanarTessellation:
    """Clip straight segments to a window and assemble the graph."""
    keep, t0, t1 = clip_segments(p, q, window)
    p, q, t0, t1 = p[keep], q[keep], t0[keep], t1[keep]
    nonzero = (t1 - t0) > 1e-12
    p, q, t0, t1 = p[nonzero], q[nonzero], t0[nonzero], t1[nonzero]
    if len(p) == 0:
        raise DegenerateWindow("no street edges intersect the window")
    a = p + t0[:, None] * (q - p)
    b = p + t1[:, None] * (q - p)
    truncated = (t0 > 0) | (t1 < 1)
    verts, inverse = _dedup_vertices(np.vstack([a, b]))
    edges = np.column_stack([inverse[: len(a)], inverse[len(a):]])
    ok = edges[:, 0] != edges[:, 1]
    return PlanarTessellation(
        vertices=verts,
        edges=edges[ok],
        window=window,
        truncated=truncated[ok],
        window_clipped=True,
    )


def _generate_pvt(gamma: float, window: Box, rng) -> PlanarTessellation:
    pad = 3.0 / math.sqrt(gamma)
    ext = window.expand(pad)
    pts = poisson_points(ext, gamma, rng)
    if len(pts) < 4:
        raise DegenerateWindow(f"only {len(pts)} generating points, need >= 4")
    try:
        vor = Voronoi(pts)
    except QhullError as exc:  # pragma: no cover - degenerate input
        raise DegenerateWindow(str(exc)) from exc
    ridge = np.asarray(vor.ridge_vertices)
    finite = (ridge >= 0).all(axis=1)
    ridge = ridge[finite]
    p = vor.vertices[ridge[:, 0]]
    q = vor.vertices[ridge[:, 1]]
    return _clip_and_build(p, q, window)


def _generate_pdt(gamma: float, window: Box, rng) -> PlanarTessellation:
    pad = 3.0 / math.sqrt(gamma)
    ext = window.expand(pad)
    pts = poisson_points(ext, gamma, rng)
    if len(pts) < 4:
        raise DegenerateWindow(f"only {len(pts)} generating points, need >= 4")
    try:
        tri = Delaunay(pts)
    except QhullError as exc:  # pragma: no cover - degenerate input
        raise DegenerateWindow(str(exc)) from exc
    s = tri.simplices
    pairs = np.vstack([s[:, [0, 1]], s[:, [1, 2]], s[:, [0, 2]]])
    pairs = np.unique(np.sort(pairs, axis=1), axis=0)
    return _clip_and_build(pts[pairs[:, 0]], pts[pairs[:, 1]], window)


def _generate_plt(gamma: float, window: Box, rng) -> PlanarTessellation:
    # lines hitting the disc of radius R: count is Poisson(2 R gamma)
    pad = 3.0 * math.sqrt(math.pi) / gamma
    radius = window.circumradius + pad
    center = window.center
    n = rng.poisson(2.0 * radius * gamma)
    if n < 1:
        raise DegenerateWindow("no lines hit the window")
    dist = rng.uniform(-radius, radius, n)
    theta = rng.uniform(0.0, math.pi, n)
    normal = np.column_stack([np.cos(theta), np.sin(theta)])
    direction = np.column_stack([-np.sin(theta), np.cos(theta)])
    base = center + normal * dist[:, None]

    # intersection parameters along each line with every other line
    span = 2.0 * radius
    p_list, q_list = [], []
    for i in range(n):
        denom = direction[:, 0] * normal[i, 0] + direction[:, 1] * normal[i, 1]
        offset = (base[i] - base) @ normal[i]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_other = offset / denom
        cross = np.abs(denom) > 1e-12
        pts = base[cross] + direction[cross] * t_other[cross, None]
        t_self = (pts - base[i]) @ direction[i]
        t_self = t_self[np.abs(t_self) <= span]
        t_self.sort()
        cuts = np.concatenate([[-span], t_self, [span]])
        starts = base[i] + direction[i] * cuts[:-1, None]
        ends = base[i] + direction[i] * cuts[1:, None]
        p_list.append(starts)
        q_list.append(ends)
    p = np.vstack(p_list)
    q = np.vstack(q_list)
    return _clip_and_build(p, q, window)


def generate_realization(model: TessellationModel, window: Box, seed: int) -> PlanarTessellation:
    """Draw one realization of a street model clipped to a window.

    Deterministic for a given (model, window, seed); generation happens on a
    padded window so the clipped graph has no visible edge bias.
    """
    if window.area <= 0:
        raise ValueError("window area must be > 0")
    if model.family in (Family.PVT, Family.PDT) and model.gamma * window.area < 3:
        raise DegenerateWindow("expected point count below 3; enlarge window or gamma")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF]))
    if model.family is Family.PVT:
        return _generate_pvt(model.gamma, window, rng)
    if model.family is Family.PDT:
        return _generate_pdt(model.gamma, window, rng)
    return _generate_plt(model.gamma, window, rng)
