import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from fibrecast.errors import RangeExceeded
from fibrecast.tessellation import Family, TessellationModel
from fibrecast.typical_cell import (
    CapacityTree,
    NodePlacementParams,
    build_capacity_tree,
    derive_parameters,
    euclidean_link_lengths,
    iter_typical_cells,
    parse_tree,
    place_lls,
    sample_link_lengths,
    sample_typical_cell,
    serialize_tree,
    shortest_link_lengths,
)

PVT25 = TessellationModel(Family.PVT, 25.0)  # tau = 10 km^-1


def params_for_kappa(kappa, lls_per_cell=8.0):
    lam_hl = 10.0 / kappa
    return NodePlacementParams(lambda_hl=lam_hl, lambda_ll=lls_per_cell * lam_hl,
                               street_model=PVT25)


def take_cells(params, seed, n):
    out = []
    for cell in iter_typical_cells(params, seed):
        out.append(cell)
        if len(out) >= n:
            break
    return out


# -- parameter derivation -----------------------------------------------------


def test_derive_parameters_formulas():
    # kappa = 4 gamma A / N_H for PVT
    model = TessellationModel(Family.PVT, 18.2)
    p = derive_parameters(53.9, model, n_hl=10, n_ll=5000)
    assert p.kappa == pytest.approx(4 * 18.2 * 53.9 / 10, rel=1e-12)
    tau = 2 * math.sqrt(18.2)
    assert p.lambda_hl == pytest.approx(10 / (tau * 53.9), rel=1e-12)
    assert p.lambda_ll == pytest.approx(5000 / (tau * 53.9), rel=1e-12)


def test_derive_parameters_single_hl():
    model = TessellationModel(Family.PVT, 9.0)
    p = derive_parameters(20.0, model, n_hl=1, n_ll=100, enforce_range=False)
    assert p.kappa == pytest.approx(4 * 9.0 * 20.0, rel=1e-12)
    # L_s = tau A and lambda_HL = 1/L_s
    assert p.lambda_hl == pytest.approx(1.0 / (6.0 * 20.0), rel=1e-12)


def test_derive_parameters_tours_scale():
    # ~185 km of streets on 9.2 km^2 with one central office
    tau = 185.0 / 9.2
    model = TessellationModel(Family.PVT, (tau / 2) ** 2)
    p = derive_parameters(9.2, model, n_hl=1, n_ll=3000, enforce_range=False)
    assert p.lambda_hl == pytest.approx(1 / 185.0, rel=1e-9)
    assert p.kappa == pytest.approx(tau * 185.0, rel=1e-9)
    assert 3500 < p.kappa < 3900


def test_kappa_range_guard():
    p = params_for_kappa(0.5)
    with pytest.raises(RangeExceeded):
        next(iter(iter_typical_cells(p, seed=1)))
    q = NodePlacementParams(lambda_hl=10.0 / 0.5, lambda_ll=1.0,
                            street_model=PVT25, enforce_range=False)
    assert q.kappa == pytest.approx(0.5)


# -- typical cells --------------------------------------------------------------


def test_cell_determinism():
    p = params_for_kappa(10.0)
    c1 = sample_typical_cell(p, seed=33)
    c2 = sample_typical_cell(p, seed=33)
    assert np.array_equal(c1.polygon_norm, c2.polygon_norm)
    assert np.array_equal(c1.pieces_edge, c2.pieces_edge)


def test_cell_mean_area_and_street_identity():
    p = params_for_kappa(20.0)
    cells = take_cells(p, seed=4, n=500)
    areas = np.array([c.area_km2 for c in cells])
    streets = np.array([c.street_length_km for c in cells])
    expect_area = 1.0 / (p.lambda_hl * p.tau)
    expect_street = 1.0 / p.lambda_hl
    for vals, expect in ((areas, expect_area), (streets, expect_street)):
        se = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean() - expect) < max(2 * se, 0.03 * expect)


def test_hl_inside_cell_and_lls_on_streets():
    p = params_for_kappa(12.0)
    cell = sample_typical_cell(p, seed=9)
    poly = cell.cell_polygon
    # HL (origin) strictly inside its convex cell
    from fibrecast.geomutil import clip_segments_to_convex

    keep, t0, t1 = clip_segments_to_convex(np.array([[0.0, 0.0]]), np.array([[0.0, 0.0]]) + 1e-12, poly)
    assert keep[0]
    place_lls(cell, 40.0 * p.lambda_hl / 1.0, seed=2)
    pts = cell.ll_points()
    if len(pts):
        keep, _, _ = clip_segments_to_convex(pts, pts + 1e-12, poly)
        assert keep.all()
        # every LL sits on a street segment
        segs = cell.street_segments()
        for q in pts:
            ab = segs[:, 1] - segs[:, 0]
            aq = q - segs[:, 0]
            cross = ab[:, 0] * aq[:, 1] - ab[:, 1] * aq[:, 0]
            d = np.abs(cross) / np.maximum(np.linalg.norm(ab, axis=1), 1e-300)
            t = np.einsum("ij,ij->i", q - segs[:, 0], segs[:, 1] - segs[:, 0]) / \
                np.maximum(np.sum((segs[:, 1] - segs[:, 0]) ** 2, axis=1), 1e-300)
            on = (d < 1e-9) & (t > -1e-9) & (t < 1 + 1e-9)
            assert on.any()


def test_ll_count_poisson_mean():
    p = params_for_kappa(10.0, lls_per_cell=6.0)
    cells = take_cells(p, seed=10, n=400)
    counts = []
    for i, cell in enumerate(cells):
        place_lls(cell, p.lambda_ll, seed=100 + i)
        counts.append(cell.n_lls)
    counts = np.array(counts, dtype=float)
    expect = p.lambda_ll / p.lambda_hl  # lambda_LL * E[street per cell]
    se = counts.std(ddof=1) / math.sqrt(len(counts))
    assert abs(counts.mean() - expect) < max(3 * se, 0.05 * expect)


def test_lambda_ll_zero_limit():
    p = params_for_kappa(10.0)
    cell = sample_typical_cell(p, seed=3)
    place_lls(cell, 1e-9, seed=1)
    assert cell.n_lls == 0
    tree = build_capacity_tree(cell, c=1)
    assert tree.root_capacity == 0
    assert tree.covered_length() == 0.0
    assert (tree.section_capacity == 0).all()


# -- link lengths ---------------------------------------------------------------


def test_distance_distribution_independent_of_lambda_ll():
    p1 = params_for_kappa(20.0, lls_per_cell=5.0)
    p2 = params_for_kappa(20.0, lls_per_cell=10.0)
    d1 = sample_link_lengths(p1, 6000, seed=1)
    d2 = sample_link_lengths(p2, 6000, seed=2)
    assert ks_2samp(d1, d2).statistic < 0.03


def test_link_lengths_positive_and_scale():
    p = params_for_kappa(50.0)
    d = sample_link_lengths(p, 2000, seed=5)
    assert (d > 0).all()
    # mean street distance is a small multiple of the mean cell radius
    assert d.mean() < 10.0 / p.lambda_hl


def test_euclidean_not_longer_than_street():
    p = params_for_kappa(15.0)
    cells = take_cells(p, seed=6, n=30)
    for i, cell in enumerate(cells):
        place_lls(cell, p.lambda_ll, seed=i)
        street = shortest_link_lengths(cell)
        euclid = euclidean_link_lengths(cell)
        assert (euclid <= street + 1e-9).all()


# -- capacity trees ---------------------------------------------------------------


def test_tree_conservation_and_monotonicity():
    p = params_for_kappa(20.0)
    cells = take_cells(p, seed=8, n=60)
    for i, cell in enumerate(cells):
        place_lls(cell, p.lambda_ll, seed=i)
        tree = build_capacity_tree(cell, c=3)
        assert tree.root_capacity == 3 * cell.n_lls
        lhs = tree.total_fibre_km()
        rhs = 3 * tree.ll_dist.sum()
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12)
        cap_of = {}
        for pv, cv, cap in zip(tree.section_parent, tree.section_child,
                               tree.section_capacity):
            cap_of[cv] = cap
        for pv, cv in zip(tree.section_parent, tree.section_child):
            if pv in cap_of:
                assert cap_of[cv] <= cap_of[pv]


def test_tree_covered_length_bounds():
    p = params_for_kappa(20.0)
    cells = take_cells(p, seed=12, n=40)
    for i, cell in enumerate(cells):
        place_lls(cell, p.lambda_ll, seed=i)
        tree = build_capacity_tree(cell, c=1)
        in_cell_len = tree.section_length[tree.section_in_cell].sum()
        assert in_cell_len <= cell.street_length_km * (1 + 1e-6)
        assert tree.covered_length() <= tree.section_length.sum() + 1e-9
        assert tree.covered_length(include_borrowed=False) <= tree.covered_length() + 1e-12


def test_tree_acyclic_rooted():
    p = params_for_kappa(10.0)
    cell = sample_typical_cell(p, seed=77)
    place_lls(cell, p.lambda_ll, seed=7)
    tree = build_capacity_tree(cell, c=1)
    assert tree.parents[0] == -1
    n = len(tree.parents)
    for start in range(n):
        hops = 0
        v = start
        while v != 0:
            v = int(tree.parents[v])
            hops += 1
            assert 0 <= v < n
            assert hops <= n


def test_tree_serialization_roundtrip():
    p = params_for_kappa(10.0)
    cell = sample_typical_cell(p, seed=21)
    place_lls(cell, p.lambda_ll, seed=2)
    tree = build_capacity_tree(cell, c=2)
    text = serialize_tree(tree)
    again = serialize_tree(parse_tree(text))
    assert text == again


def test_empty_tree_serialization():
    tree = CapacityTree(
        vertices=np.zeros((1, 2)), parents=np.array([-1]),
        section_parent=np.zeros(0, dtype=int), section_child=np.zeros(0, dtype=int),
        section_length=np.zeros(0), section_capacity=np.zeros(0, dtype=int),
        section_in_cell=np.zeros(0, dtype=bool), leaf_tags={},
        ll_xy=np.zeros((0, 2)), ll_dist=np.zeros(0),
        contour=np.zeros((0, 2)), area_km2=1.5,
    )
    text = serialize_tree(tree)
    parsed = parse_tree(text)
    assert parsed.area_km2 == 1.5
    assert len(parsed.section_parent) == 0
    assert serialize_tree(parsed) == text
