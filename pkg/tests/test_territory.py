import math

import numpy as np
import pytest
from shapely.geometry import LineString, Polygon

from fibrecast.errors import (
    AllSquaresEliminated,
    EmptyAfterFilter,
    EmptyGraphAfterTrim,
    MalformedInput,
)
from fibrecast.geomutil import Box
from fibrecast.tessellation import (
    Family,
    PlanarTessellation,
    TessellationModel,
    generate_realization,
)
from fibrecast.territory import (
    BuildUpLimit,
    HabitatFile,
    VoirieFile,
    VoirieRow,
    compute_buildup_limit,
    parse_street_extract,
    planarize_and_trim,
    project_tangent_plane,
    read_poly,
    segment_and_fit,
    unproject_tangent_plane,
    write_poly,
)

CENTER = (-1.55, 47.21)  # arbitrary mid-latitude town


def osm_xml(ways, buildings=()):
    """Tiny open-map XML builder; ways/buildings are lists of lon/lat tuples."""
    nodes = {}
    chunks = ["<?xml version='1.0'?><osm version='0.6'>"]

    def node_id(pt):
        k = (round(pt[0], 9), round(pt[1], 9))
        if k not in nodes:
            nodes[k] = len(nodes) + 1
        return nodes[k]

    body = []
    for wid, (pts, tags) in enumerate(ways, start=1):
        refs = [node_id(p) for p in pts]
        tag_xml = "".join(f"<tag k='{k}' v='{v}'/>" for k, v in tags.items())
        nd_xml = "".join(f"<nd ref='{r}'/>" for r in refs)
        body.append(f"<way id='{wid}'>{nd_xml}{tag_xml}</way>")
    for bid, pts in enumerate(buildings, start=1):
        refs = [node_id(p) for p in pts] + [node_id(pts[0])]
        nd_xml = "".join(f"<nd ref='{r}'/>" for r in refs)
        body.append(f"<way id='{9000 + bid}'>{nd_xml}<tag k='building' v='yes'/></way>")
    for (lon, lat), nid in nodes.items():
        chunks.append(f"<node id='{nid}' lon='{lon}' lat='{lat}'/>")
    chunks.extend(body)
    chunks.append("</osm>")
    return "".join(chunks)


def offset(lon_km=0.0, lat_km=0.0):
    """Approximate lon/lat displacement of a km offset near CENTER."""
    dlat = lat_km / 111.19
    dlon = lon_km / (111.19 * math.cos(math.radians(CENTER[1])))
    return CENTER[0] + dlon, CENTER[1] + dlat


# -- parsing -------------------------------------------------------------------


def test_parse_filters_by_whitelist():
    xml = osm_xml([
        ([offset(0, 0), offset(1, 0)], {"highway": "residential"}),
        ([offset(0, 1), offset(1, 1)], {"highway": "cycleway"}),
        ([offset(0, 2), offset(1, 2)], {"highway": "footway"}),
    ])
    m = parse_street_extract(xml, whitelist={"residential"})
    assert m.n_ways == 1
    assert m.ways[0]["highway"] == "residential"


def test_parse_malformed():
    with pytest.raises(MalformedInput):
        parse_street_extract("<osm><node id=")


def test_parse_empty_after_filter():
    xml = osm_xml([([offset(0, 0), offset(1, 0)], {"highway": "footway"})])
    with pytest.raises(EmptyAfterFilter):
        parse_street_extract(xml, whitelist={"residential"})


def test_parse_collects_buildings():
    xml = osm_xml(
        [([offset(0, 0), offset(1, 0)], {"highway": "residential"})],
        buildings=[[offset(0.1, 0.1), offset(0.2, 0.1), offset(0.2, 0.2)]],
    )
    m = parse_street_extract(xml)
    assert len(m.buildings) == 1


def test_dual_carriageway_merge():
    # same street duplicated 8 m apart, opposite directions
    a = [offset(0, 0), offset(1.0, 0)]
    b = [offset(1.0, 0.008), offset(0, 0.008)]
    xml = osm_xml([
        (a, {"highway": "primary", "oneway": "yes"}),
        (b, {"highway": "primary", "oneway": "yes"}),
    ])
    m = parse_street_extract(xml)
    assert m.n_ways == 1
    merged_xy = project_tangent_plane(m.ways[0]["points"], m.center)
    assert LineString(merged_xy).length == pytest.approx(1.0, abs=0.02)


# -- projection ------------------------------------------------------------------


def test_projection_center_is_origin():
    xy = project_tangent_plane([CENTER], CENTER)
    assert np.allclose(xy, 0.0, atol=1e-12)


def test_projection_meridian_arc():
    pt = (0.0, 45.01)
    xy = project_tangent_plane([pt], (0.0, 45.0))
    expected = 6371.0088 * math.radians(0.01)
    assert xy[0, 0] == pytest.approx(0.0, abs=1e-9)
    assert xy[0, 1] == pytest.approx(expected, rel=1e-9)
    assert xy[0, 1] == pytest.approx(1.112, abs=2e-3)


def test_projection_roundtrip():
    rng = np.random.default_rng(3)
    pts = np.column_stack([
        CENTER[0] + rng.uniform(-0.2, 0.2, 50),
        CENTER[1] + rng.uniform(-0.2, 0.2, 50),
    ])
    xy = project_tangent_plane(pts, CENTER)
    back = unproject_tangent_plane(xy, CENTER)
    xy2 = project_tangent_plane(back, CENTER)
    assert np.max(np.abs(xy - xy2)) < 1e-9


def test_projection_distance_distortion():
    # pairwise distances at 20 km radius distort by < 0.1 %
    a, b = offset(14, 14), offset(-14, 9)
    xy = project_tangent_plane([a, b], CENTER)
    planar = float(np.hypot(*(xy[0] - xy[1])))
    # great-circle via the exact projection property: distances from center
    # are exact, use the haversine formula for the pair
    lon1, lat1, lon2, lat2 = map(math.radians, (*a, *b))
    s = 2 * 6371.0088 * math.asin(math.sqrt(
        math.sin((lat2 - lat1) / 2) ** 2
        + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2))
    assert abs(planar - s) / s < 1e-3


# -- build-up limit ----------------------------------------------------------------


def grid_of_buildings(squares, per_square=5, grid=0.5):
    """Buildings centred in given (gx, gy) grid squares."""
    buildings = []
    for gx, gy in squares:
        for k in range(per_square):
            cx = (gx + 0.2 + 0.6 * k / per_square) * grid
            cy = (gy + 0.5) * grid
            lon, lat = offset(cx, cy)
            d = 0.00003
            buildings.append([(lon - d, lat - d), (lon + d, lat - d), (lon + d, lat + d)])
    return buildings


def test_buildup_dense_block():
    squares = [(i, j) for i in range(3) for j in range(3)]
    xml = osm_xml([([offset(0, 0), offset(1.5, 1.5)], {"highway": "residential"})],
                  buildings=grid_of_buildings(squares))
    m = parse_street_extract(xml)
    limit = compute_buildup_limit(m, grid_size=0.5, threshold=3, source="buildings")
    assert limit.area_km2 == pytest.approx(9 * 0.25, rel=0.02)


def test_buildup_drops_isolated_square():
    squares = [(i, j) for i in range(3) for j in range(3)] + [(10, 10)]
    xml = osm_xml([([offset(0, 0), offset(1.5, 1.5)], {"highway": "residential"})],
                  buildings=grid_of_buildings(squares))
    m = parse_street_extract(xml)
    limit = compute_buildup_limit(m, grid_size=0.5, threshold=3)
    assert limit.area_km2 == pytest.approx(9 * 0.25, rel=0.02)


def test_buildup_threshold_too_high():
    xml = osm_xml([([offset(0, 0), offset(1, 1)], {"highway": "residential"})],
                  buildings=grid_of_buildings([(0, 0)]))
    m = parse_street_extract(xml)
    with pytest.raises(AllSquaresEliminated):
        compute_buildup_limit(m, grid_size=0.5, threshold=1000)


def test_buildup_monotone_in_threshold():
    squares = [(i, j) for i in range(4) for j in range(4)]
    buildings = grid_of_buildings(squares, per_square=4) + grid_of_buildings(
        [(1, 1), (1, 2), (2, 1), (2, 2)], per_square=6)
    xml = osm_xml([([offset(0, 0), offset(2, 2)], {"highway": "residential"})],
                  buildings=buildings)
    m = parse_street_extract(xml)
    a_low = compute_buildup_limit(m, 0.5, threshold=3).area_km2
    a_high = compute_buildup_limit(m, 0.5, threshold=8).area_km2
    assert a_high <= a_low + 1e-9


def test_buildup_from_streets_when_no_buildings():
    ways = []
    for i in range(6):
        ways.append(([offset(0, i * 0.3), offset(1.5, i * 0.3)], {"highway": "residential"}))
        ways.append(([offset(i * 0.3, 0), offset(i * 0.3, 1.5)], {"highway": "residential"}))
    m = parse_street_extract(osm_xml(ways))
    limit = compute_buildup_limit(m, grid_size=0.5, threshold=2, source="buildings")
    assert limit.source == "streets"
    assert limit.area_km2 > 1.0


# -- planarize and trim ---------------------------------------------------------------


def square_ring_with_spur():
    ring = [offset(0, 0), offset(1, 0), offset(1, 1), offset(0, 1), offset(0, 0)]
    spur = [offset(1, 1), offset(1.2, 1)]
    return osm_xml([
        (ring, {"highway": "residential"}),
        (spur, {"highway": "residential"}),
    ])


def wide_limit():
    ring = np.array([offset(-1, -1), offset(3, -1), offset(3, 3), offset(-1, 3)])
    return BuildUpLimit(polygon=ring, grid_size=0.5, threshold=1,
                        source="buildings", center=CENTER)


def test_trim_removes_spur():
    m = parse_street_extract(square_ring_with_spur())
    limit = wide_limit()
    limit.center = m.center
    graph, deadend = planarize_and_trim(m, limit)
    assert deadend == pytest.approx(0.2, abs=0.01)
    assert graph.total_length == pytest.approx(4.0, abs=0.02)


def test_trim_plus_shape_becomes_empty():
    xml = osm_xml([
        ([offset(-1, 0), offset(1, 0)], {"highway": "residential"}),
        ([offset(0, -1), offset(0, 1)], {"highway": "residential"}),
    ])
    m = parse_street_extract(xml)
    limit = wide_limit()
    limit.center = m.center
    with pytest.raises(EmptyGraphAfterTrim):
        planarize_and_trim(m, limit)


def test_trim_idempotent_and_length_conserved():
    ways = []
    # a grid of streets: all cycles, nothing to trim except the clipped rim
    for i in range(6):
        ways.append(([offset(0, i * 0.4), offset(2.0, i * 0.4)], {"highway": "residential"}))
        ways.append(([offset(i * 0.4, 0), offset(i * 0.4, 2.0)], {"highway": "residential"}))
    m = parse_street_extract(osm_xml(ways))
    limit = wide_limit()
    limit.center = m.center
    graph, deadend = planarize_and_trim(m, limit)
    total_ways = sum(LineString(project_tangent_plane(w["points"], m.center)).length
                     for w in m.ways)
    assert graph.total_length + deadend == pytest.approx(total_ways, rel=1e-6)
    # feeding the trimmed graph back through the dead-end rule removes nothing
    degs = graph.degrees()
    assert (degs[np.unique(graph.edges)] >= 2).all()


# -- segmentation ------------------------------------------------------------------


def clipped_pvt_patch(gamma, box, seed):
    return generate_realization(TessellationModel(Family.PVT, gamma), box, seed)


def test_segment_single_part():
    g = clipped_pvt_patch(40.0, Box(0, 0, 3, 3), seed=2)
    voirie = segment_and_fit(g, parts=1)
    assert len(voirie.rows) == 1
    assert voirie.rows[0].model == voirie.total.model
    assert voirie.rows[0].intensity == pytest.approx(voirie.total.intensity, rel=1e-9)
    assert voirie.check_area_additivity()


def test_segment_planted_partition():
    # a dense core glued to a sparse periphery along x = 2
    dense = clipped_pvt_patch(100.0, Box(0, 0, 2, 2), seed=5)
    sparse = clipped_pvt_patch(10.0, Box(0, 0, 4, 2), seed=6)
    shift = np.array([2.0, 0.0])
    verts = np.vstack([dense.vertices, sparse.vertices + shift])
    edges = np.vstack([dense.edges, sparse.edges + len(dense.vertices)])
    merged = PlanarTessellation(
        vertices=verts, edges=edges, window=Box(0, 0, 6, 2),
        truncated=np.concatenate([dense.truncated, sparse.truncated]),
        window_clipped=True, area_km2=12.0,
    )
    voirie = segment_and_fit(merged, parts=2)
    assert len(voirie.rows) == 2
    gammas = sorted(r.intensity for r in voirie.rows)
    assert abs(gammas[1] - 100.0) < 15.0
    assert abs(gammas[0] - 10.0) < 1.5
    assert voirie.check_area_additivity(0.05)
    # densest part listed first, as in a dense-core / periphery table
    assert voirie.rows[0].intensity > voirie.rows[1].intensity


# -- file formats ------------------------------------------------------------------


def test_poly_roundtrip():
    ring = np.array([offset(0, 0), offset(1, 0), offset(1, 1), offset(0, 1)])
    text = write_poly("townlimit", ring)
    lines = text.splitlines()
    assert lines[0] == "townlimit"
    assert lines[1] == "1"
    assert lines[-1] == "END"
    assert lines[-2] == "END"
    name, ring2 = read_poly(text)
    assert name == "townlimit"
    assert len(ring2) == 5  # closed
    assert np.allclose(ring2[:4], ring, atol=1e-6)


def test_voirie_csv_roundtrip():
    v = VoirieFile(
        rows=[VoirieRow("1", 2.181, Family.PVT, 125.642),
              VoirieRow("2", 10.789, Family.PVT, 38.101)],
        total=VoirieRow("total", 12.970, Family.PVT, 23.142),
    )
    text = v.to_csv()
    assert text.splitlines()[0] == "part,area_km2,model,intensity"
    w = VoirieFile.from_csv(text)
    assert len(w.rows) == 2
    assert w.total.part == "total"
    assert w.rows[0].intensity == pytest.approx(125.642)
    assert w.check_area_additivity()


def test_habitat_csv_roundtrip():
    h = HabitatFile(households={"1": 1200, "2": 3400})
    text = h.to_csv()
    assert text.splitlines()[0] == "part,households"
    g = HabitatFile.from_csv(text)
    assert g.households == {"1": 1200, "2": 3400}
    assert g.total == 4600
