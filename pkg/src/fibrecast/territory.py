"""Territory acquisition: map parsing, build-up limit, street graph, fitting.

Takes a raw open-map XML extract, keeps the way classes that can carry
network wires, computes the populated ("build-up") limit of the town from
building or street density on a grid, trims the street graph to that limit,
removes dead-ends to obtain a tessellation, and fits the best street model
per territory part. Outputs are the voirie/habitat CSV files and a standard
.poly limit file.
"""

from __future__ import annotations

import csv
import io
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import Delaunay
from shapely.geometry import LineString, MultiLineString, Point, Polygon
from shapely.ops import linemerge, unary_union

from .errors import (
    AllSquaresEliminated,
    EmptyAfterFilter,
    EmptyGraphAfterTrim,
    MalformedInput,
    PartWithNoStreets,
)
from .geomutil import Box
from .tessellation import (
    Family,
    PlanarTessellation,
    estimate_morphology,
    fit_model,
)

__all__ = [
    "EARTH_RADIUS_KM",
    "DEFAULT_HIGHWAY_WHITELIST",
    "RawStreetMap",
    "BuildUpLimit",
    "VoirieRow",
    "VoirieFile",
    "HabitatFile",
    "parse_street_extract",
    "project_tangent_plane",
    "unproject_tangent_plane",
    "compute_buildup_limit",
    "planarize_and_trim",
    "segment_and_fit",
    "write_poly",
    "read_poly",
]

EARTH_RADIUS_KM = 6371.0088

DEFAULT_HIGHWAY_WHITELIST = frozenset({
    "motorway", "trunk", "primary", "secondary", "tertiary", "unclassified",
    "residential", "living_street", "service", "motorway_link", "trunk_link",
    "primary_link", "secondary_link", "tertiary_link", "pedestrian",
})


@dataclass
class RawStreetMap:
    """Filtered ways and building footprints straight out of the map extract."""

    ways: list  # of dicts {points: (n,2) lon/lat deg, highway: str}
    buildings: list  # of (n,2) lon/lat rings
    center: tuple  # (lon, lat) projection center

    @property
    def n_ways(self) -> int:
        return len(self.ways)


@dataclass
class BuildUpLimit:
    polygon: np.ndarray  # (n, 2) lon/lat closed ring
    grid_size: float  # km
    threshold: int
    source: str  # "buildings" | "streets"
    center: tuple = (0.0, 0.0)
    dropped_squares: int = 0  # squares outside the main component

    def polygon_xy(self) -> np.ndarray:
        return project_tangent_plane(self.polygon, self.center)

    @property
    def area_km2(self) -> float:
        ring = self.polygon_xy()
        x, y = ring[:, 0], ring[:, 1]
        return abs(0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)))


@dataclass
class VoirieRow:
    part: str
    area_km2: float
    model: Family
    intensity: float


@dataclass
class VoirieFile:
    rows: list  # VoirieRow, one per part
    total: VoirieRow

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["part", "area_km2", "model", "intensity"])
        for r in [*self.rows, self.total]:
            w.writerow([r.part, f"{r.area_km2:.6f}", r.model.value, f"{r.intensity:.6f}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "VoirieFile":
        rows = []
        for rec in csv.DictReader(io.StringIO(text)):
            rows.append(VoirieRow(rec["part"], float(rec["area_km2"]),
                                  Family(rec["model"]), float(rec["intensity"])))
        if not rows:
            raise MalformedInput("empty voirie file")
        return cls(rows=rows[:-1], total=rows[-1])

    def check_area_additivity(self, tolerance: float = 0.01) -> bool:
        if not self.rows:
            return True
        return abs(sum(r.area_km2 for r in self.rows) - self.total.area_km2) \
            <= tolerance * self.total.area_km2


@dataclass
class HabitatFile:
    households: dict  # part -> count

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["part", "households"])
        for part, n in self.households.items():
            w.writerow([part, int(n)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "HabitatFile":
        hh = {}
        for rec in csv.DictReader(io.StringIO(text)):
            hh[rec["part"]] = int(rec["households"])
        return cls(households=hh)

    @property
    def total(self) -> int:
        return int(sum(self.households.values()))


# ---------------------------------------------------------------------------
# projection (azimuthal equidistant on the mean sphere)
# ---------------------------------------------------------------------------


def project_tangent_plane(points, center) -> np.ndarray:
    """lon/lat degrees -> km on the tangent plane at center.

    Azimuthal equidistant: radial distances from the center are exact, so
    pairwise distortion stays below (d / R_earth)^2 across a town.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    lon0, lat0 = math.radians(center[0]), math.radians(center[1])
    lon = np.radians(pts[:, 0])
    lat = np.radians(pts[:, 1])
    dlon = lon - lon0
    cos_sigma = np.clip(np.sin(lat0) * np.sin(lat)
                        + np.cos(lat0) * np.cos(lat) * np.cos(dlon), -1.0, 1.0)
    sigma = np.arccos(cos_sigma)
    sin_sigma = np.sin(sigma)
    with np.errstate(invalid="ignore", divide="ignore"):
        sin_az = np.cos(lat) * np.sin(dlon) / sin_sigma
        cos_az = (np.sin(lat) - np.sin(lat0) * cos_sigma) / (np.cos(lat0) * sin_sigma)
    sin_az = np.where(sin_sigma < 1e-15, 0.0, sin_az)
    cos_az = np.where(sin_sigma < 1e-15, 1.0, cos_az)
    r = EARTH_RADIUS_KM * sigma
    return np.column_stack([r * sin_az, r * cos_az])


def unproject_tangent_plane(xy, center) -> np.ndarray:
    """Inverse of project_tangent_plane."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    lon0, lat0 = math.radians(center[0]), math.radians(center[1])
    r = np.hypot(xy[:, 0], xy[:, 1])
    sigma = r / EARTH_RADIUS_KM
    az = np.arctan2(xy[:, 0], xy[:, 1])
    sin_lat = np.sin(lat0) * np.cos(sigma) + np.cos(lat0) * np.sin(sigma) * np.cos(az)
    lat = np.arcsin(np.clip(sin_lat, -1.0, 1.0))
    lon = lon0 + np.arctan2(np.sin(az) * np.sin(sigma) * np.cos(lat0),
                            np.cos(sigma) - np.sin(lat0) * sin_lat)
    return np.degrees(np.column_stack([lon, lat]))


# ---------------------------------------------------------------------------
# map parsing
# ---------------------------------------------------------------------------


def parse_street_extract(data, whitelist=DEFAULT_HIGHWAY_WHITELIST,
                         merge_dual: bool = True) -> RawStreetMap:
    """Parse an open-map XML extract, keeping whitelisted way classes.

    Buildings are collected when present. Duplicated parallel carriageways
    of the same class are collapsed to their midline.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise MalformedInput(f"not well-formed map XML: {exc}") from exc

    nodes = {}
    for nd in root.iter("node"):
        nodes[nd.get("id")] = (float(nd.get("lon")), float(nd.get("lat")))

    ways, buildings = [], []
    for way in root.iter("way"):
        tags = {t.get("k"): t.get("v") for t in way.findall("tag")}
        refs = [nd.get("ref") for nd in way.findall("nd")]
        pts = np.array([nodes[r] for r in refs if r in nodes])
        if len(pts) < 2:
            continue
        if tags.get("highway") in whitelist:
            ways.append({"points": pts, "highway": tags["highway"],
                         "oneway": tags.get("oneway", "no")})
        if "building" in tags and len(pts) >= 3:
            buildings.append(pts)

    if not ways:
        raise EmptyAfterFilter("no ways left after applying the highway whitelist")

    all_pts = np.vstack([w["points"] for w in ways])
    center = (float((all_pts[:, 0].min() + all_pts[:, 0].max()) / 2),
              float((all_pts[:, 1].min() + all_pts[:, 1].max()) / 2))
    if merge_dual:
        ways = _merge_dual_carriageways(ways, center)
    return RawStreetMap(ways=ways, buildings=buildings, center=center)


def _way_xy(way, center):
    return project_tangent_plane(way["points"], center)


def _merge_dual_carriageways(ways, center, gap_km: float = 0.015):
    """Collapse antiparallel same-class way pairs closer than gap to a midline."""
    xys = [_way_xy(w, center) for w in ways]
    boxes = [(xy.min(axis=0), xy.max(axis=0)) for xy in xys]
    used = [False] * len(ways)
    out = []
    for i in range(len(ways)):
        if used[i]:
            continue
        merged = None
        for j in range(i + 1, len(ways)):
            if used[j] or ways[i]["highway"] != ways[j]["highway"]:
                continue
            lo_i, hi_i = boxes[i]
            lo_j, hi_j = boxes[j]
            if (lo_i > hi_j + gap_km).any() or (lo_j > hi_i + gap_km).any():
                continue
            pair = _try_merge_pair(xys[i], xys[j], gap_km)
            if pair is not None:
                merged = pair
                used[j] = True
                break
        used[i] = True
        if merged is None:
            out.append(ways[i])
        else:
            lonlat = unproject_tangent_plane(merged, center)
            out.append({"points": lonlat, "highway": ways[i]["highway"], "oneway": "no"})
    return out


def _try_merge_pair(a: np.ndarray, b: np.ndarray, gap_km: float):
    """Midline of two antiparallel nearby polylines, or None."""
    la = LineString(a)
    lb = LineString(b)
    if abs(la.length - lb.length) > 0.3 * max(la.length, lb.length):
        return None
    # antiparallel: end-to-end alignment beats start-to-start
    d_par = np.hypot(*(a[0] - b[0])) + np.hypot(*(a[-1] - b[-1]))
    d_anti = np.hypot(*(a[0] - b[-1])) + np.hypot(*(a[-1] - b[0]))
    if d_anti >= d_par:
        return None
    # every sampled point of a must be close to b
    ts = np.linspace(0.0, 1.0, 12)
    pts = [la.interpolate(t, normalized=True) for t in ts]
    if max(p.distance(lb) for p in pts) > gap_km:
        return None
    rb = [lb.interpolate(1.0 - t, normalized=True) for t in ts]
    mid = np.array([[(p.x + q.x) / 2, (p.y + q.y) / 2] for p, q in zip(pts, rb)])
    return mid


# ---------------------------------------------------------------------------
# build-up limit
# ---------------------------------------------------------------------------


def compute_buildup_limit(street_map: RawStreetMap, grid_size: float,
                          threshold: int, source: str = "buildings") -> BuildUpLimit:
    """Populated-area limit from building (or street-vertex) grid counts.

    Squares under the threshold go first, then isolated squares (at most one
    of their four edge-neighbours retained); the concave hull of the corners
    of the surviving squares, peeled at twice the grid size, is the limit.
    """
    if grid_size <= 0:
        raise ValueError("grid_size must be > 0")
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    if source == "buildings" and street_map.buildings:
        pts = np.array([b.mean(axis=0) for b in street_map.buildings])
    else:
        source = "streets"
        pts = np.vstack([w["points"] for w in street_map.ways])
    xy = project_tangent_plane(pts, street_map.center)

    ix = np.floor(xy[:, 0] / grid_size).astype(int)
    iy = np.floor(xy[:, 1] / grid_size).astype(int)
    ox, oy = ix.min(), iy.min()
    nx, ny = ix.max() - ox + 1, iy.max() - oy + 1
    counts = np.zeros((nx, ny), dtype=int)
    np.add.at(counts, (ix - ox, iy - oy), 1)

    keep = counts >= threshold
    if not keep.any():
        raise AllSquaresEliminated(f"threshold {threshold} removed every square")
    neighbours = (
        np.pad(keep, 1)[:-2, 1:-1].astype(int) + np.pad(keep, 1)[2:, 1:-1]
        + np.pad(keep, 1)[1:-1, :-2] + np.pad(keep, 1)[1:-1, 2:]
    )
    keep &= neighbours >= 2  # isolated = no more than one neighbour
    if not keep.any():
        raise AllSquaresEliminated("isolation rule removed every square")

    # the build-up area is the main contiguous mass; satellites are dropped
    labels, nlab = ndimage.label(keep)
    if nlab > 1:
        sizes = ndimage.sum_labels(keep, labels, index=range(1, nlab + 1))
        main = 1 + int(np.argmax(sizes))
        dropped = int(keep.sum() - sizes[int(np.argmax(sizes))])
        keep = labels == main
    else:
        dropped = 0

    sq = np.argwhere(keep)
    corners = set()
    for gx, gy in sq:
        for dx in (0, 1):
            for dy in (0, 1):
                corners.add(((gx + ox + dx) * grid_size, (gy + oy + dy) * grid_size))
    corner_pts = np.array(sorted(corners))
    ring_xy = _chi_hull(corner_pts, peel_length=2.0 * grid_size)
    ring = unproject_tangent_plane(ring_xy, street_map.center)
    return BuildUpLimit(polygon=ring, grid_size=grid_size, threshold=threshold,
                        source=source, center=street_map.center, dropped_squares=dropped)


def _chi_hull(points: np.ndarray, peel_length: float) -> np.ndarray:
    """Concave hull by peeling long boundary edges off the Delaunay triangulation."""
    if len(points) < 3:
        raise ValueError("need at least 3 points for a hull")
    if len(points) == 3:
        return points
    tri = Delaunay(points)
    alive = np.ones(len(tri.simplices), dtype=bool)

    def edge_key(a, b):
        return (a, b) if a < b else (b, a)

    # adjacency: edge -> triangles
    edge_tris: dict = {}
    for t, simplex in enumerate(tri.simplices):
        for k in range(3):
            e = edge_key(int(simplex[k]), int(simplex[(k + 1) % 3]))
            edge_tris.setdefault(e, []).append(t)

    def boundary_edges():
        for e, ts in edge_tris.items():
            live = [t for t in ts if alive[t]]
            if len(live) == 1:
                yield e, live[0]

    changed = True
    while changed:
        changed = False
        candidates = []
        for (a, b), t in boundary_edges():
            length = float(np.hypot(*(points[a] - points[b])))
            if length > peel_length:
                candidates.append((length, a, b, t))
        candidates.sort(reverse=True)
        for _, a, b, t in candidates:
            if not alive[t]:
                continue
            live = [x for x in edge_tris[edge_key(a, b)] if alive[x]]
            if len(live) != 1 or live[0] != t:
                continue
            # removing t must keep the region regular: the opposite vertex
            # must not already lie on the boundary
            simplex = tri.simplices[t]
            opp = [v for v in simplex if v not in (a, b)][0]
            on_boundary = False
            for e, ts in edge_tris.items():
                if opp in e:
                    live_e = [x for x in ts if alive[x]]
                    if len(live_e) == 1:
                        on_boundary = True
                        break
            if on_boundary:
                continue
            alive[t] = False
            changed = True

    polys = [Polygon(points[s]) for s, a in zip(tri.simplices, alive) if a]
    merged = unary_union(polys)
    if merged.geom_type == "MultiPolygon":
        merged = max(merged.geoms, key=lambda g: g.area)
    ring = np.asarray(merged.exterior.coords)
    return ring[:-1]  # open ring; closure is implicit


# ---------------------------------------------------------------------------
# planarize and trim
# ---------------------------------------------------------------------------


def planarize_and_trim(street_map: RawStreetMap, limit: BuildUpLimit):
    """Clip ways to the limit, node crossings, and strip dead-end chains.

    Returns (PlanarTessellation, removed dead-end length in km). The removed
    length feeds the covered-street correction in the cost stage.
    """
    poly = Polygon(limit.polygon_xy())
    if not poly.is_valid:
        poly = poly.buffer(0)
    lines = []
    for way in street_map.ways:
        xy = _way_xy(way, street_map.center)
        clipped = LineString(xy).intersection(poly)
        if clipped.is_empty:
            continue
        geoms = clipped.geoms if hasattr(clipped, "geoms") else [clipped]
        for g in geoms:
            if g.geom_type == "LineString" and g.length > 1e-9:
                lines.append(g)
    if not lines:
        raise EmptyGraphAfterTrim("no street length inside the build-up limit")

    noded = unary_union(MultiLineString(lines))
    merged = linemerge(noded) if noded.geom_type != "LineString" else noded
    geoms = list(merged.geoms) if hasattr(merged, "geoms") else [merged]

    # graph on rounded endpoints; polyline geometry kept per edge
    def key(pt):
        return (round(pt[0], 9), round(pt[1], 9))

    deadend_km = 0.0
    edges = {i: np.asarray(g.coords) for i, g in enumerate(geoms)}
    while True:
        deg: dict = {}
        for i, coords in edges.items():
            for pt in (key(coords[0]), key(coords[-1])):
                deg[pt] = deg.get(pt, 0) + 1
        # closed loops keep themselves alive
        drop = [i for i, coords in edges.items()
                if key(coords[0]) != key(coords[-1])
                and (deg[key(coords[0])] == 1 or deg[key(coords[-1])] == 1)]
        if not drop:
            break
        for i in drop:
            deadend_km += LineString(edges[i]).length
            del edges[i]
        if not edges:
            raise EmptyGraphAfterTrim("everything was a dead end")
        # re-merge chains that the removal left as degree-2 joints
        merged = linemerge(MultiLineString([LineString(c) for c in edges.values()]))
        geoms = list(merged.geoms) if hasattr(merged, "geoms") else [merged]
        edges = {i: np.asarray(g.coords) for i, g in enumerate(geoms)}

    vert_index: dict = {}
    verts = []
    pairs = []
    polylines = []
    for coords in edges.values():
        ends = []
        for pt in (key(coords[0]), key(coords[-1])):
            if pt not in vert_index:
                vert_index[pt] = len(verts)
                verts.append(pt)
            ends.append(vert_index[pt])
        pairs.append(ends)
        polylines.append(coords)

    verts = np.array(verts, dtype=float)
    window = Box(float(verts[:, 0].min()), float(verts[:, 1].min()),
                 float(verts[:, 0].max()), float(verts[:, 1].max()))
    graph = PlanarTessellation(
        vertices=verts, edges=np.array(pairs, dtype=int), window=window,
        polylines=polylines, area_km2=poly.area,
    )
    return graph, deadend_km


# ---------------------------------------------------------------------------
# segmentation and fitting
# ---------------------------------------------------------------------------


def _edge_midpoints(graph: PlanarTessellation) -> np.ndarray:
    mids = []
    for i in range(graph.n_edges):
        geom = graph.edge_geometry(i)
        line = LineString(geom)
        mids.append(np.asarray(line.interpolate(0.5, normalized=True).coords)[0])
    return np.array(mids)


def segment_and_fit(graph: PlanarTessellation, parts=1,
                    candidates=(Family.PVT, Family.PLT, Family.PDT),
                    grid_cells: int = 48, smooth_cells: float = 1.2) -> VoirieFile:
    """Partition the town and fit the best street model per part and overall.

    parts: an integer k (quantile bands of the smoothed street-length
    density field) or explicit shapely polygons in the projected km plane.
    """
    total_area = graph.reference_area
    mids = _edge_midpoints(graph)
    lengths = graph.lengths

    if isinstance(parts, int):
        assignments, part_areas = _density_bands(graph, mids, parts, grid_cells,
                                                 smooth_cells, total_area)
    else:
        polys = [p if isinstance(p, Polygon) else Polygon(p) for p in parts]
        assignments = np.full(len(mids), -1, dtype=int)
        for pi, poly in enumerate(polys):
            inside = np.array([poly.contains(Point(*m)) for m in mids])
            assignments[inside & (assignments < 0)] = pi
        assignments[assignments < 0] = len(polys) - 1
        part_areas = [p.area for p in polys]

    rows = []
    for pi in range(len(part_areas)):
        mask = assignments == pi
        if not mask.any():
            raise PartWithNoStreets(f"part {pi + 1} contains no street edges")
        sub = PlanarTessellation(
            vertices=graph.vertices,
            edges=graph.edges[mask],
            window=graph.window,
            lengths=lengths[mask],
            polylines=[graph.polylines[i] for i in np.flatnonzero(mask)]
            if graph.polylines is not None else None,
            truncated=graph.truncated[mask],
            window_clipped=graph.window_clipped,
            area_km2=part_areas[pi],
        )
        fit = fit_model(estimate_morphology(sub), candidates)
        rows.append(VoirieRow(str(pi + 1), float(part_areas[pi]),
                              fit.model.family, fit.model.gamma))

    total_fit = fit_model(estimate_morphology(graph), candidates)
    total = VoirieRow("total", float(total_area), total_fit.model.family,
                      total_fit.model.gamma)
    return VoirieFile(rows=rows, total=total)


def _density_bands(graph, mids, k, grid_cells, smooth_cells, total_area):
    """Split the town by clustering the smoothed street-length density field.

    One-dimensional k-means on cell densities yields homogeneous parts (a
    dense core against peripheries) regardless of how unequal their areas
    are; parts come out densest first.
    """
    w = graph.window
    cell = max(w.width, w.height) / grid_cells
    nx = max(int(math.ceil(w.width / cell)), 1)
    ny = max(int(math.ceil(w.height / cell)), 1)
    ix = np.clip(((mids[:, 0] - w.xmin) / cell).astype(int), 0, nx - 1)
    iy = np.clip(((mids[:, 1] - w.ymin) / cell).astype(int), 0, ny - 1)
    density = np.zeros((nx, ny))
    np.add.at(density, (ix, iy), graph.lengths)
    density = ndimage.gaussian_filter(density, smooth_cells)

    street_cells = density > 0
    if k <= 1 or street_cells.sum() <= k:
        return np.zeros(len(mids), dtype=int), [total_area]

    vals = density[street_cells]
    centers = np.quantile(vals, np.linspace(0.05, 0.95, k))
    for _ in range(100):
        assign = np.argmin(np.abs(vals[:, None] - centers[None, :]), axis=1)
        new = np.array([vals[assign == j].mean() if (assign == j).any() else centers[j]
                        for j in range(k)])
        if np.allclose(new, centers):
            break
        centers = new

    order = np.argsort(-centers)  # densest part first
    rank = np.empty(k, dtype=int)
    rank[order] = np.arange(k)
    cell_band = np.full(density.shape, k - 1, dtype=int)
    cell_band[street_cells] = rank[np.argmin(
        np.abs(vals[:, None] - centers[None, :]), axis=1)]
    edge_band = cell_band[ix, iy]

    # territory area per part: street-bearing cells carry their band; empty
    # cells (parks, blocks) join the part of the nearest street cell
    raw_street = np.zeros_like(density, dtype=bool)
    raw_street[ix, iy] = True
    part_map = np.where(raw_street, cell_band, -1)
    _, (gx, gy) = ndimage.distance_transform_edt(~raw_street, return_indices=True)
    part_full = part_map[gx, gy]
    counts = np.array([(part_full == j).sum() for j in range(k)], dtype=float)
    areas = counts / counts.sum() * total_area
    return edge_band, areas.tolist()


# ---------------------------------------------------------------------------
# .poly file
# ---------------------------------------------------------------------------


def write_poly(name: str, polygon: np.ndarray) -> str:
    """Standard polygon-filter text: name, section '1', lon lat pairs, END END."""
    lines = [name, "1"]
    ring = np.asarray(polygon)
    for lon, lat in ring:
        lines.append(f"   {lon:.7f} {lat:.7f}")
    first, last = ring[0], ring[-1]
    if abs(first[0] - last[0]) > 1e-12 or abs(first[1] - last[1]) > 1e-12:
        lines.append(f"   {first[0]:.7f} {first[1]:.7f}")
    lines.append("END")
    lines.append("END")
    return "\n".join(lines) + "\n"


def read_poly(text: str):
    lines = [ln for ln in text.splitlines()]
    if len(lines) < 4:
        raise MalformedInput("truncated .poly file")
    name = lines[0].strip()
    ring = []
    for ln in lines[2:]:
        s = ln.strip()
        if s == "END":
            break
        lon, lat = (float(v) for v in s.split())
        ring.append((lon, lat))
    return name, np.array(ring)
