"""Typical serving zones of street-supported nodes and their capacity trees.

High-level nodes (HLs) form a linear Poisson process of intensity lambda_HL
on a random street system; each HL serves the low-level nodes (LLs) inside
its Euclidean Voronoi cell. Everything here is simulated in a normalized
frame where the planar HL intensity lambda_HL * tau equals one, so a single
dimensionless parameter kappa = tau / lambda_HL controls the geometry and
results rescale exactly to user units.

Sampling works window by window: one stationary street realization is drawn
on a square window, HLs are thrown on its edges, and every HL inside the
core region whose Voronoi cell provably closes (no unseen competitor can
alter it, checked as 2 * farthest-cell-vertex <= distance to the unseen
region) yields one typical-cell sample. Pooling all core cells keeps the
Palm statistics unbiased; picking a single cell uses an extra acceptance
step on the window so that the draw stays exactly cell-uniform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import QhullError, Voronoi

from .errors import DegenerateWindow, RangeExceeded, ZeroStreetDensity
from .geomutil import Box, clip_segments_to_convex, polygon_area
from .tessellation import Family, TessellationModel, generate_realization, theoretical_morphology

__all__ = [
    "KAPPA_MIN",
    "KAPPA_MAX",
    "NodePlacementParams",
    "TypicalCell",
    "CapacityTree",
    "derive_parameters",
    "sample_typical_cell",
    "iter_typical_cells",
    "place_lls",
    "shortest_link_lengths",
    "build_capacity_tree",
    "serialize_tree",
    "parse_tree",
    "sample_link_lengths",
]

KAPPA_MIN = 1.0
KAPPA_MAX = 1e4

_PRED_SENTINEL = -9999


@dataclass(frozen=True)
class NodePlacementParams:
    """Linear node intensities on a street model; kappa = tau / lambda_HL."""

    lambda_hl: float  # km^-1 of street
    lambda_ll: float  # km^-1 of street
    street_model: TessellationModel
    enforce_range: bool = True

    def __post_init__(self):
        if self.lambda_hl <= 0 or self.lambda_ll <= 0:
            raise ValueError("node intensities must be > 0")

    @property
    def tau(self) -> float:
        return theoretical_morphology(self.street_model).street_length_density

    @property
    def kappa(self) -> float:
        return self.tau / self.lambda_hl

    def check_range(self):
        if self.enforce_range and not (KAPPA_MIN <= self.kappa <= KAPPA_MAX):
            raise RangeExceeded(
                f"kappa={self.kappa:.4g} outside supported range "
                f"[{KAPPA_MIN:g}, {KAPPA_MAX:g}]")


def derive_parameters(area_km2: float, model: TessellationModel, n_hl: float,
                      n_ll: float, enforce_range: bool = True) -> NodePlacementParams:
    """Node intensities from territory area, street model and node counts.

    L_s = tau A / N_H is the mean street length per serving zone, so
    lambda_HL = 1 / L_s and lambda_LL = N_L / (tau A).
    """
    if area_km2 <= 0:
        raise ValueError("area must be > 0")
    if n_hl < 1:
        raise ValueError("need at least one high-level node")
    tau = theoretical_morphology(model).street_length_density
    if tau <= 0:
        raise ZeroStreetDensity("street model has zero length density")
    total_street = tau * area_km2
    return NodePlacementParams(
        lambda_hl=n_hl / total_street,
        lambda_ll=n_ll / total_street,
        street_model=model,
        enforce_range=enforce_range,
    )


def _normalized_model(family: Family, kappa: float) -> TessellationModel:
    """Intensity that gives street density sqrt(kappa) in the unit-HL frame."""
    if family is Family.PVT:
        return TessellationModel(family, kappa / 4.0)
    if family is Family.PDT:
        return TessellationModel(family, 9.0 * math.pi**2 * kappa / 1024.0)
    return TessellationModel(family, math.sqrt(kappa))


def _street_mesh(family: Family, gamma_norm: float) -> float:
    """Typical diameter of a street-system cell in normalized units."""
    if family is Family.PLT:
        return 2.0 * math.sqrt(math.pi) / gamma_norm
    return 2.0 / math.sqrt(gamma_norm)


# ---------------------------------------------------------------------------
# window realization
# ---------------------------------------------------------------------------


class _Window:
    """One stationary realization: streets, HLs, Voronoi cells, path fields."""

    def __init__(self, params: NodePlacementParams, seed_key: tuple,
                 core_side: float, margin: float):
        self.params = params
        self.kappa = params.kappa
        self.tau_norm = math.sqrt(self.kappa)
        self.scale = self.tau_norm / params.tau  # km per normalized unit
        self.core_side = core_side
        self.margin = margin
        self.rng = np.random.default_rng(np.random.SeedSequence(
            [k & 0xFFFFFFFFFFFFFFFF for k in seed_key]))

        side = core_side + 2.0 * margin
        self.window = Box.centered((0.0, 0.0), side)
        model = _normalized_model(params.street_model.family, self.kappa)
        street_seed = int(self.rng.integers(0, 2**63 - 1))
        graph = generate_realization(model, self.window, street_seed)

        self.vx = graph.vertices.copy()
        edges = graph.edges
        lengths = graph.lengths
        ok = lengths > 1e-12
        edges, lengths = edges[ok], lengths[ok]

        # linear Poisson HLs on the edges
        lam = 1.0 / self.tau_norm  # normalized lambda_HL
        counts = self.rng.poisson(lam * lengths)
        total = int(counts.sum())
        if total < 8:
            raise DegenerateWindow("window too small: fewer than 8 high-level nodes")
        hl_edge = np.repeat(np.arange(len(edges)), counts)
        hl_t = self.rng.uniform(0.0, 1.0, total)
        a = self.vx[edges[:, 0]]
        b = self.vx[edges[:, 1]]
        self.hl_xy = a[hl_edge] + (b[hl_edge] - a[hl_edge]) * hl_t[:, None]

        half_core = core_side / 2.0
        in_core = (np.abs(self.hl_xy[:, 0]) <= half_core) & (np.abs(self.hl_xy[:, 1]) <= half_core)
        self.core_ids = np.flatnonzero(in_core)
        self.rng.shuffle(self.core_ids)

        # Voronoi cells of all HLs; competitors outside the window cannot
        # matter for core cells once the closure criterion below holds
        if total < 5:
            raise DegenerateWindow("not enough HLs for a Voronoi diagram")
        try:
            self.vor = Voronoi(self.hl_xy)
        except QhullError as exc:  # pragma: no cover
            raise DegenerateWindow(str(exc)) from exc

        # split street edges at core HL positions so they become graph vertices
        self._split_edges(edges, lengths, hl_edge, hl_t)
        self._dist = None
        self._pred = None
        self.warnings = {"unreachable": 0}

    # -- graph assembly ------------------------------------------------------

    def _split_edges(self, edges, lengths, hl_edge, hl_t):
        n_base = len(self.vx)
        core_set = set(self.core_ids.tolist())
        by_edge: dict[int, list] = {}
        for hid in self.core_ids:
            by_edge.setdefault(int(hl_edge[hid]), []).append(hid)

        eu, ev, el = [], [], []
        new_xy = []
        self.hl_vertex = {}
        for ei in range(len(edges)):
            u, v = int(edges[ei, 0]), int(edges[ei, 1])
            length = float(lengths[ei])
            hids = by_edge.get(ei)
            if not hids:
                eu.append(u); ev.append(v); el.append(length)
                continue
            hids = sorted(hids, key=lambda h: hl_t[h])
            prev_v, prev_t = u, 0.0
            for h in hids:
                t = float(hl_t[h])
                vid = n_base + len(new_xy)
                new_xy.append(self.hl_xy[h])
                self.hl_vertex[int(h)] = vid
                eu.append(prev_v); ev.append(vid); el.append((t - prev_t) * length)
                prev_v, prev_t = vid, t
            eu.append(prev_v); ev.append(v); el.append((1.0 - prev_t) * length)
        if new_xy:
            self.vx = np.vstack([self.vx, np.array(new_xy)])
        eu = np.array(eu); ev = np.array(ev); el = np.array(el)
        ok = (el > 1e-12) & (eu != ev)
        self.edge_u, self.edge_v, self.edge_len = eu[ok], ev[ok], el[ok]
        self._edge_lookup = {}
        for i in range(len(self.edge_u)):
            self._edge_lookup[(int(self.edge_u[i]), int(self.edge_v[i]))] = i
            self._edge_lookup[(int(self.edge_v[i]), int(self.edge_u[i]))] = i

    def edge_between(self, a: int, b: int) -> int:
        return self._edge_lookup[(a, b)]

    # -- shortest-path fields --------------------------------------------------

    def _ensure_paths(self):
        if self._dist is not None:
            return
        n = len(self.vx)
        graph = csr_matrix((self.edge_len, (self.edge_u, self.edge_v)), shape=(n, n))
        sources = [self.hl_vertex[int(h)] for h in self.core_ids]
        limit = self.margin * 0.98
        dists, preds = [], []
        for i in range(0, len(sources), 16):
            chunk = sources[i:i + 16]
            d, p = dijkstra(graph, directed=False, indices=chunk,
                            return_predecessors=True, limit=limit)
            dists.append(np.atleast_2d(d))
            preds.append(np.atleast_2d(p))
        self._dist = np.vstack(dists)
        self._pred = np.vstack(preds)
        self._row_of = {int(h): i for i, h in enumerate(self.core_ids)}

    def paths_for(self, hl_id: int):
        self._ensure_paths()
        row = self._row_of[int(hl_id)]
        return self._dist[row], self._pred[row]

    # -- cells -----------------------------------------------------------------

    def cell_for(self, hl_id: int) -> "TypicalCell | None":
        """Build the typical cell of one core HL; None if its cell fails closure."""
        region_idx = self.vor.point_region[hl_id]
        region = self.vor.regions[region_idx]
        if -1 in region or len(region) < 3:
            return None
        poly = self.vor.vertices[np.array(region)]
        hl = self.hl_xy[hl_id]
        r_max = float(np.max(np.hypot(poly[:, 0] - hl[0], poly[:, 1] - hl[1])))
        boundary_dist = float(min(
            self.window.xmax - abs(hl[0]), self.window.ymax - abs(hl[1])))
        if 2.0 * r_max > boundary_dist:
            return None
        if polygon_area(poly) < 0:
            poly = poly[::-1]

        # clip street edges to the convex cell polygon
        lo = poly.min(axis=0) - 1e-9
        hi = poly.max(axis=0) + 1e-9
        pu = self.vx[self.edge_u]
        pv = self.vx[self.edge_v]
        near = ~((np.maximum(pu, pv) < lo) | (np.minimum(pu, pv) > hi)).any(axis=1)
        cand = np.flatnonzero(near)
        keep, t0, t1 = clip_segments_to_convex(pu[cand], pv[cand], poly)
        frac = np.clip(t1 - t0, 0.0, 1.0)
        good = keep & (frac * self.edge_len[cand] > 1e-12)
        pieces_edge = cand[good]
        pieces_t0 = np.clip(t0[good], 0.0, 1.0)
        pieces_t1 = np.clip(t1[good], 0.0, 1.0)
        piece_len = (pieces_t1 - pieces_t0) * self.edge_len[pieces_edge]

        return TypicalCell(
            window=self,
            hl_id=int(hl_id),
            hl_xy_norm=hl.copy(),
            polygon_norm=poly,
            pieces_edge=pieces_edge,
            pieces_t0=pieces_t0,
            pieces_t1=pieces_t1,
            piece_len_norm=piece_len,
            r_max_norm=r_max,
        )

    def cells(self):
        for hid in self.core_ids:
            cell = self.cell_for(int(hid))
            if cell is not None:
                yield cell
            else:
                self.warnings["closure_failures"] = self.warnings.get("closure_failures", 0) + 1


@dataclass
class TypicalCell:
    """One serving zone: convex cell polygon, contained streets, optional LLs.

    Geometry is held in the normalized frame; the km-facing properties apply
    the scale factor and put the HL at the origin.
    """

    window: _Window
    hl_id: int
    hl_xy_norm: np.ndarray
    polygon_norm: np.ndarray
    pieces_edge: np.ndarray
    pieces_t0: np.ndarray
    pieces_t1: np.ndarray
    piece_len_norm: np.ndarray
    r_max_norm: float
    ll_edge: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    ll_t: np.ndarray = field(default_factory=lambda: np.zeros(0))
    skipped_lls: int = 0

    @property
    def scale(self) -> float:
        return self.window.scale

    @property
    def hl_position(self) -> np.ndarray:
        return np.zeros(2)

    @property
    def area_km2(self) -> float:
        return abs(polygon_area(self.polygon_norm)) * self.scale**2

    @property
    def street_length_km(self) -> float:
        return float(self.piece_len_norm.sum()) * self.scale

    @property
    def cell_polygon(self) -> np.ndarray:
        return (self.polygon_norm - self.hl_xy_norm) * self.scale

    @property
    def n_lls(self) -> int:
        return len(self.ll_edge)

    def ll_points(self) -> np.ndarray:
        """LL coordinates in km, HL at the origin."""
        if self.n_lls == 0:
            return np.zeros((0, 2))
        w = self.window
        a = w.vx[w.edge_u[self.ll_edge]]
        b = w.vx[w.edge_v[self.ll_edge]]
        xy = a + (b - a) * self.ll_t[:, None]
        return (xy - self.hl_xy_norm) * self.scale

    def street_segments(self) -> np.ndarray:
        """In-cell street pieces as (k, 2, 2) km segments, HL at origin."""
        w = self.window
        a = w.vx[w.edge_u[self.pieces_edge]]
        b = w.vx[w.edge_v[self.pieces_edge]]
        p = a + (b - a) * self.pieces_t0[:, None]
        q = a + (b - a) * self.pieces_t1[:, None]
        return np.stack([(p - self.hl_xy_norm) * self.scale,
                         (q - self.hl_xy_norm) * self.scale], axis=1)


# ---------------------------------------------------------------------------
# sampling drivers
# ---------------------------------------------------------------------------


def _window_geometry(params: NodePlacementParams, core_side: float | None,
                     margin: float | None):
    kappa = params.kappa
    model = _normalized_model(params.street_model.family, kappa)
    mesh = _street_mesh(params.street_model.family, model.gamma)
    if margin is None:
        # wide enough that 2 * r_max fits for essentially every core cell;
        # sparse street meshes stretch cells, hence the mesh term
        margin = max(5.0, 3.2 * mesh)
    if core_side is None:
        # dense-street windows amortize their cost over more core cells
        core_side = 6.0 if kappa >= 50 else 4.0
    return core_side, margin


def iter_typical_cells(params: NodePlacementParams, seed: int,
                       core_side: float | None = None,
                       margin: float | None = None,
                       max_windows: int = 100000):
    """Yield typical cells window after window, deterministically.

    Every closed core cell of every window is yielded (in a per-window
    shuffled order), which keeps pooled statistics unbiased Palm estimates.
    """
    params.check_range()
    core_side, margin = _window_geometry(params, core_side, margin)
    for w_idx in range(max_windows):
        win = _Window(params, (int(seed), w_idx), core_side, margin)
        cells = list(win.cells())
        if win.warnings.get("closure_failures", 0) > 0:
            # a cell failed the closure criterion: regrow the window with a
            # wider margin so large cells are kept rather than dropped
            for attempt in (1, 2):
                bigger = _Window(params, (int(seed), w_idx, attempt),
                                 core_side, margin * 1.6**attempt)
                cells = list(bigger.cells())
                if bigger.warnings.get("closure_failures", 0) == 0:
                    break
        yield from cells


def sample_typical_cell(params: NodePlacementParams, seed: int,
                        core_side: float | None = None,
                        margin: float | None = None) -> TypicalCell:
    """Draw one typical cell, exactly cell-uniform.

    Windows hold a Poisson-varying number of core cells; accepting a window
    with probability n / n_max before picking uniformly inside removes the
    small-cell-count bias a naive single pick would have.
    """
    params.check_range()
    core_side, margin = _window_geometry(params, core_side, margin)
    rng = np.random.default_rng(np.random.SeedSequence(
        [int(seed) & 0xFFFFFFFFFFFFFFFF, 0x51E]))
    n_max = 3.0 * core_side**2 + 20.0
    for attempt in range(512):
        win = _Window(params, (int(seed), 0x51E, attempt), core_side, margin)
        cells = list(win.cells())
        if not cells:
            margin *= 1.3
            continue
        if rng.uniform() <= len(cells) / n_max:
            return cells[int(rng.integers(0, len(cells)))]
    raise DegenerateWindow("single-cell sampling failed to accept a window")


def place_lls(cell: TypicalCell, lambda_ll: float, seed: int) -> np.ndarray:
    """Throw LLs on the cell's streets: Poisson count, uniform positions.

    Stores the draw on the cell and returns the LL coordinates in km.
    """
    if lambda_ll <= 0:
        raise ValueError("lambda_ll must be > 0")
    rng = np.random.default_rng(np.random.SeedSequence(
        [int(seed) & 0xFFFFFFFFFFFFFFFF, 0x11]))
    total_km = cell.street_length_km
    n = rng.poisson(lambda_ll * total_km)
    if n == 0:
        cell.ll_edge = np.zeros(0, dtype=int)
        cell.ll_t = np.zeros(0)
        return cell.ll_points()
    cum = np.concatenate([[0.0], np.cumsum(cell.piece_len_norm)])
    u = rng.uniform(0.0, cum[-1], n)
    idx = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, len(cell.pieces_edge) - 1)
    local = (u - cum[idx]) / np.maximum(cell.piece_len_norm[idx], 1e-300)
    cell.ll_edge = cell.pieces_edge[idx]
    cell.ll_t = cell.pieces_t0[idx] + local * (cell.pieces_t1[idx] - cell.pieces_t0[idx])
    return cell.ll_points()


def shortest_link_lengths(cell: TypicalCell) -> np.ndarray:
    """Street distance from each LL to the HL, km; unreachable LLs skipped."""
    if cell.n_lls == 0:
        return np.zeros(0)
    w = cell.window
    d, _ = w.paths_for(cell.hl_id)
    du = d[w.edge_u[cell.ll_edge]]
    dv = d[w.edge_v[cell.ll_edge]]
    ell = w.edge_len[cell.ll_edge]
    dist = np.minimum(du + cell.ll_t * ell, dv + (1.0 - cell.ll_t) * ell)
    ok = np.isfinite(dist)
    skipped = int((~ok).sum())
    if skipped:
        cell.skipped_lls += skipped
        w.warnings["unreachable"] += skipped
        cell.ll_edge = cell.ll_edge[ok]
        cell.ll_t = cell.ll_t[ok]
        dist = dist[ok]
    return dist * cell.scale


def euclidean_link_lengths(cell: TypicalCell) -> np.ndarray:
    """Crow-flies LL-to-HL distances in km."""
    pts = cell.ll_points()
    return np.hypot(pts[:, 0], pts[:, 1])


# ---------------------------------------------------------------------------
# capacity trees
# ---------------------------------------------------------------------------


@dataclass
class CapacityTree:
    """Shortest-path tree of a cell with per-section fibre capacities.

    vertices[i] is a km position with parents[i] the index of the next
    vertex toward the root (-1 at the root). Sections join a child vertex to
    its parent and carry a constant capacity. Leaf tags and the in-cell flag
    of sections are derived data and are not serialized.
    """

    vertices: np.ndarray  # (n, 2) km
    parents: np.ndarray  # (n,) int
    section_parent: np.ndarray  # (m,) int vertex ids
    section_child: np.ndarray  # (m,) int vertex ids
    section_length: np.ndarray  # (m,) km
    section_capacity: np.ndarray  # (m,) int
    section_in_cell: np.ndarray  # (m,) bool, derived
    leaf_tags: dict  # vertex id -> "midpoint" | "boundary", derived
    ll_xy: np.ndarray  # (k, 2) km
    ll_dist: np.ndarray  # (k,) km
    contour: np.ndarray  # (p, 2) km
    area_km2: float

    @property
    def root_capacity(self) -> int:
        root_children = np.flatnonzero(self.section_parent == 0)
        return int(self.section_capacity[root_children].sum())

    def covered_length(self, include_borrowed: bool = True) -> float:
        mask = self.section_capacity > 0
        if not include_borrowed:
            mask &= self.section_in_cell
        return float(self.section_length[mask].sum())

    def total_fibre_km(self) -> float:
        return float((self.section_length * self.section_capacity).sum())


def build_capacity_tree(cell: TypicalCell, c: int = 1) -> CapacityTree:
    """Assemble the capacity tree of a cell from its LL draw.

    Capacity grows toward the root: crossing an LL adds c, crossings add the
    incoming branches. Leaves sit where streets exit the cell polygon or at
    in-street midpoints with two equal-length routes to the HL. A path may
    borrow streets outside the cell; those sections are tagged not-in-cell.
    """
    if c < 1 or int(c) != c:
        raise ValueError("capacity per LL must be a positive integer")
    c = int(c)
    # drop unreachable LLs first so every capacity source has a path
    d_ll = shortest_link_lengths(cell)
    w = cell.window
    d, pred = w.paths_for(cell.hl_id)
    hl_vertex = w.hl_vertex[cell.hl_id]
    scale = cell.scale
    eps = 1e-12

    # per-edge material: cell intervals and LL offsets in edge-length units
    pieces_by_edge: dict[int, list] = {}
    for k in range(len(cell.pieces_edge)):
        e = int(cell.pieces_edge[k])
        ell = float(w.edge_len[e])
        pieces_by_edge.setdefault(e, []).append(
            (cell.pieces_t0[k] * ell, cell.pieces_t1[k] * ell))
    lls_by_edge: dict[int, list] = {}
    for k in range(cell.n_lls):
        e = int(cell.ll_edge[k])
        lls_by_edge.setdefault(e, []).append(float(cell.ll_t[k]) * float(w.edge_len[e]))

    # walk predecessor chains from every piece endpoint: their union is the
    # skeleton of full street edges the tree traverses (possibly borrowed)
    skeleton_edges: set[int] = set()
    tree_vertices: set[int] = {hl_vertex}

    def walk(v: int):
        chain = []
        x = v
        while x != hl_vertex and x not in tree_vertices:
            p = int(pred[x])
            if p == _PRED_SENTINEL:
                return
            chain.append((x, p))
            x = p
        for x, p in chain:
            tree_vertices.add(x)
            skeleton_edges.add(w.edge_between(x, p))

    endpoints: set[int] = set()
    for e in pieces_by_edge:
        for g in (int(w.edge_u[e]), int(w.edge_v[e])):
            if np.isfinite(d[g]):
                endpoints.add(g)
    for v in sorted(endpoints):
        walk(v)

    all_edges = sorted(set(pieces_by_edge) | skeleton_edges)

    # routing split per edge and direct LL injections into endpoints
    edge_plan = []
    arrive: dict[int, float] = {}
    for e in all_edges:
        u, v = int(w.edge_u[e]), int(w.edge_v[e])
        ell = float(w.edge_len[e])
        du, dv = float(d[u]), float(d[v])
        if not np.isfinite(du) and not np.isfinite(dv):
            continue  # fully unreachable; its LLs were dropped above
        if not np.isfinite(du):
            xstar = 0.0
        elif not np.isfinite(dv):
            xstar = ell
        else:
            xstar = min(max((dv - du + ell) / 2.0, 0.0), ell)
        is_skeleton = e in skeleton_edges
        offs = sorted(lls_by_edge.get(e, []))
        bounds = sorted(pieces_by_edge.get(e, []))
        if is_skeleton:
            # paths traverse the whole edge
            left = [(0.0, xstar)] if xstar > eps else []
            right = [(xstar, ell)] if xstar < ell - eps else []
        else:
            # fibres run from each cell piece toward its routed endpoint
            left_hi = max((min(b, xstar) for a, b in bounds if a < xstar - eps), default=None)
            right_lo = min((max(a, xstar) for a, b in bounds if b > xstar + eps), default=None)
            left = [(0.0, left_hi)] if left_hi is not None and left_hi > eps else []
            right = [(right_lo, ell)] if right_lo is not None and right_lo < ell - eps else []
        edge_plan.append((e, u, v, ell, xstar, left, right, offs, is_skeleton, bounds))

        n_left = sum(1 for o in offs if o < xstar)
        n_right = len(offs) - n_left
        if n_left and np.isfinite(du):
            arrive[u] = arrive.get(u, 0.0) + c * n_left
        if n_right and np.isfinite(dv):
            arrive[v] = arrive.get(v, 0.0) + c * n_right

    # propagate flows rootward in decreasing-distance order
    order = sorted(tree_vertices - {hl_vertex}, key=lambda x: -d[x])
    through: dict[int, float] = {}
    for x in order:
        p = int(pred[x])
        flow = arrive.get(x, 0.0)
        through[x] = flow
        arrive[p] = arrive.get(p, 0.0) + flow

    # emit vertices and sections; the HL is vertex 0 at the origin
    verts_xy = [cell.hl_xy_norm.copy()]
    parents = [-1]
    vid_of_graph = {hl_vertex: 0}
    leaf_tags: dict[int, str] = {}

    def graph_vid(g: int) -> int:
        if g not in vid_of_graph:
            vid_of_graph[g] = len(verts_xy)
            verts_xy.append(w.vx[g].copy())
            parents.append(-2)  # set when the vertex's own pred chain is emitted
        return vid_of_graph[g]

    sec_p, sec_c, sec_len, sec_cap, sec_in = [], [], [], [], []

    def covered_by_cell(e: int, mid: float, bounds) -> bool:
        for a, b in bounds:
            if a - eps <= mid <= b + eps:
                return True
        return False

    def emit_chain(e, u, v, ell, interval, offs, toward_low, xstar, base_flow, bounds):
        """Sections of one flow side of an edge, anchored at the rootward end."""
        lo, hi = interval
        if hi - lo <= eps:
            return
        side_offs = [o for o in offs if (o < xstar) == toward_low and lo - eps <= o <= hi + eps]
        inner_bounds = [y for ab in bounds for y in ab if lo + eps < y < hi - eps]
        cuts = sorted({lo, hi, *side_offs, *inner_bounds})
        axy = w.vx[u]
        bxy = w.vx[v]

        def xy_at(y):
            return axy + (bxy - axy) * (y / ell)

        seq = cuts if toward_low else cuts[::-1]
        anchor_y = seq[0]
        anchor_graph = u if toward_low else v
        anchor_vid = graph_vid(anchor_graph)
        prev_vid, prev_y = anchor_vid, anchor_y
        for y in seq[1:]:
            if abs(y - prev_y) <= eps:
                continue
            at_far_end = (y >= ell - eps) if toward_low else (y <= eps)
            if at_far_end:
                vid = graph_vid(v if toward_low else u)
                if parents[vid] == -2:
                    parents[vid] = prev_vid
            else:
                vid = len(verts_xy)
                verts_xy.append(xy_at(y))
                parents.append(prev_vid)
            mid = (y + prev_y) / 2.0
            if toward_low:
                n_up = sum(1 for o in side_offs if o >= y - eps)
            else:
                n_up = sum(1 for o in side_offs if o <= y + eps)
            sec_p.append(prev_vid); sec_c.append(vid)
            sec_len.append(abs(y - prev_y) * scale)
            sec_cap.append(int(round(base_flow + c * n_up)))
            sec_in.append(covered_by_cell(e, mid, bounds))
            prev_vid, prev_y = vid, y
        far_y = seq[-1]
        interior = eps < far_y < ell - eps
        if interior and prev_vid != anchor_vid:
            if abs(far_y - xstar) <= 1e-9:
                leaf_tags[prev_vid] = "midpoint"
            else:
                leaf_tags[prev_vid] = "boundary"

    for (e, u, v, ell, xstar, left, right, offs, is_skeleton, bounds) in edge_plan:
        flow_left = through.get(v, 0.0) if (is_skeleton and int(pred[v]) == u) else 0.0
        flow_right = through.get(u, 0.0) if (is_skeleton and int(pred[u]) == v) else 0.0
        for interval in left:
            emit_chain(e, u, v, ell, interval, offs, True, xstar, flow_left, bounds)
        for interval in right:
            emit_chain(e, u, v, ell, interval, offs, False, xstar, flow_right, bounds)

    verts = (np.array(verts_xy).reshape(-1, 2) - cell.hl_xy_norm) * scale
    parents = np.array(parents, dtype=int)
    parents[parents == -2] = 0  # isolated anchors (defensive; should not occur)

    return CapacityTree(
        vertices=verts,
        parents=parents,
        section_parent=np.array(sec_p, dtype=int),
        section_child=np.array(sec_c, dtype=int),
        section_length=np.array(sec_len),
        section_capacity=np.array(sec_cap, dtype=int),
        section_in_cell=np.array(sec_in, dtype=bool),
        leaf_tags=leaf_tags,
        ll_xy=cell.ll_points(),
        ll_dist=d_ll,
        contour=cell.cell_polygon,
        area_km2=cell.area_km2,
    )


# ---------------------------------------------------------------------------
# tree text records
# ---------------------------------------------------------------------------


def serialize_tree(tree: CapacityTree) -> str:
    """Text record of a tree; floats use repr so parsing is lossless."""
    lines = [f"#cell area={float(tree.area_km2)!r} hl=0,0"]
    for i, (x, y) in enumerate(tree.vertices):
        lines.append(f"v {i} {float(x)!r} {float(y)!r} {int(tree.parents[i])}")
    for i in range(len(tree.section_parent)):
        lines.append(
            f"s {int(tree.section_parent[i])} {int(tree.section_child[i])} "
            f"{float(tree.section_length[i])!r} {int(tree.section_capacity[i])}")
    for (x, y), dist in zip(tree.ll_xy, tree.ll_dist):
        lines.append(f"l {float(x)!r} {float(y)!r} {float(dist)!r}")
    if len(tree.contour):
        coords = " ".join(f"{float(v)!r}" for v in tree.contour.ravel())
        lines.append(f"c {coords}")
    return "\n".join(lines) + "\n"


def parse_tree(text: str) -> CapacityTree:
    verts, parents = [], []
    sp, sc, sl, scap = [], [], [], []
    llx, lld = [], []
    contour = np.zeros((0, 2))
    area = 0.0
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#cell"):
            for tok in line.split():
                if tok.startswith("area="):
                    area = float(tok[5:])
            continue
        kind, *rest = line.split()
        if kind == "v":
            verts.append((float(rest[1]), float(rest[2])))
            parents.append(int(rest[3]))
        elif kind == "s":
            sp.append(int(rest[0])); sc.append(int(rest[1]))
            sl.append(float(rest[2])); scap.append(int(rest[3]))
        elif kind == "l":
            llx.append((float(rest[0]), float(rest[1])))
            lld.append(float(rest[2]))
        elif kind == "c":
            vals = np.array([float(v) for v in rest])
            contour = vals.reshape(-1, 2)
    return CapacityTree(
        vertices=np.array(verts).reshape(-1, 2),
        parents=np.array(parents, dtype=int),
        section_parent=np.array(sp, dtype=int),
        section_child=np.array(sc, dtype=int),
        section_length=np.array(sl),
        section_capacity=np.array(scap, dtype=int),
        section_in_cell=np.ones(len(sp), dtype=bool),
        leaf_tags={},
        ll_xy=np.array(llx).reshape(-1, 2),
        ll_dist=np.array(lld),
        contour=contour,
        area_km2=area,
    )


# ---------------------------------------------------------------------------
# bulk helpers
# ---------------------------------------------------------------------------


def sample_link_lengths(params: NodePlacementParams, n_links: int, seed: int,
                        euclidean: bool = False) -> np.ndarray:
    """Pool LL link lengths over typical cells until n_links are collected."""
    out = []
    count = 0
    for idx, cell in enumerate(iter_typical_cells(params, seed)):
        place_lls(cell, params.lambda_ll, seed=hash((seed, idx, 7)) & 0x7FFFFFFF)
        dists = euclidean_link_lengths(cell) if euclidean else shortest_link_lengths(cell)
        out.append(dists)
        count += len(dists)
        if count >= n_links:
            break
    return np.concatenate(out) if out else np.zeros(0)
