import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lada.topology import (
    EAST, NORTH, SOUTH, WEST,
    DisconnectedNetworkError,
    EmptyDirectionError,
    Network,
    classify_neighbors,
    default_radius,
    geometric_network,
    is_connected,
    make_grid,
    sample_geometric,
    sector,
)


def _node(net, x, y):
    return int(np.flatnonzero((net.positions == (x, y)).all(axis=1))[0])


def test_grid_corner_neighbors():
    net = make_grid(2)
    nbrs = {tuple(net.positions[j]) for j in net.adjacency[_node(net, 0, 0)]}
    assert nbrs == {(1.0, 0.0), (0.0, 1.0)}


def test_grid_center_degree_and_edge_count():
    assert len(make_grid(3).adjacency[_node(make_grid(3), 1, 1)]) == 4
    net = make_grid(4)
    assert net.n == 16 and len(net.edges()) == 24


@pytest.mark.parametrize("k", [2, 3, 5, 8])
def test_grid_adjacency_is_lattice(k):
    net = make_grid(k)
    assert is_connected(net)
    for i, j in net.edges():
        assert np.abs(net.positions[i] - net.positions[j]).sum() == 1


def test_grid_rejects_small_k():
    with pytest.raises(ValueError):
        make_grid(1)


def test_two_nodes_full_range_connected():
    for seed in range(20):
        assert is_connected(sample_geometric(2, math.sqrt(2), seed=seed))


def test_tiny_range_fails_after_resampling():
    with pytest.raises(DisconnectedNetworkError):
        sample_geometric(100, 0.01, seed=0, max_resample=5)


def test_n500_default_radius_mostly_connected():
    r = default_radius(500)
    resampled = sum(sample_geometric(500, r, seed=s).resamples > 0 for s in range(30))
    assert resampled <= 3


def test_disconnected_fixtures():
    far = geometric_network(np.array([[0.1, 0.1], [0.9, 0.9]]), 0.2)
    assert not is_connected(far)
    path = geometric_network(np.array([[0.1, 0.5], [0.2, 0.5], [0.5, 0.5], [0.6, 0.5]]), 0.15)
    assert not is_connected(path)


@pytest.mark.parametrize(
    "dx,dy,expected",
    [(1, 0, EAST), (0, 1, NORTH), (-1, 0, WEST), (0, -1, SOUTH),
     (0.1, 0.1, EAST), (-0.1, 0.1, NORTH), (-0.1, -0.1, WEST), (0.1, -0.1, SOUTH)],
)
def test_sector_half_open_edges(dx, dy, expected):
    assert sector(dx, dy) == expected


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_sector_antisymmetric(dx, dy):
    if dx == 0 and dy == 0:
        return
    assert sector(-dx, -dy) == (sector(dx, dy) + 2) % 4


def test_diagonal_neighbor_is_east():
    net = geometric_network(np.array([[0.5, 0.5], [0.6, 0.6]]), 0.2)
    nb = classify_neighbors(net, strict=False)
    assert 1 in nb.physical[EAST][0].tolist()
    assert 0 in nb.physical[WEST][1].tolist()


def test_west_border_node_is_its_own_match_neighbor():
    net = geometric_network(np.array([[0.05, 0.5], [0.12, 0.5]]), 0.1)
    nb = classify_neighbors(net, strict=False)
    assert 0 in nb.match[WEST][0].tolist()


def test_north_reflection_of_neighbor():
    # image of j across y = 1 sits at (0.55, 1.07), 0.13 away and north of i, so it bounces
    net = geometric_network(np.array([[0.5, 0.95], [0.55, 0.93]]), 0.15)
    assert 1 not in classify_neighbors(geometric_network(net.positions, 0.1), strict=False).match[NORTH][0]
    nb = classify_neighbors(net, strict=False)
    assert 1 in nb.match[NORTH][0].tolist()
    assert 0 in nb.match[NORTH][1].tolist()


def _check_symmetry(nb):
    n = nb.n
    for l in range(4):
        opp = (l + 2) % 4
        for i in range(n):
            for j in nb.physical[l][i].tolist():
                assert i in nb.physical[opp][j].tolist()
            m_i = sorted(nb.match[l][i].tolist())
            for j in set(m_i):
                assert sorted(nb.match[l][j].tolist()).count(i) == m_i.count(j)
            h_i = sorted(nb.mismatch[l][i].tolist())
            for j in set(h_i):
                assert sorted(nb.mismatch[opp][j].tolist()).count(i) == h_i.count(j)


@given(st.integers(0, 10_000))
def test_directional_symmetry_invariants(seed):
    net = sample_geometric(120, default_radius(120), seed=seed)
    nb = classify_neighbors(net, strict=False)
    _check_symmetry(nb)
    phys = sum(len(nb.physical[l][i]) for l in range(4) for i in range(net.n))
    assert phys == net.degrees().sum()


@given(st.integers(0, 10_000))
def test_geometric_adjacency_matches_range(seed):
    net = sample_geometric(60, 0.3, seed=seed)
    d = np.linalg.norm(net.positions[:, None] - net.positions[None], axis=-1)
    expected = (d <= net.r) & (d > 0)
    got = np.zeros_like(expected)
    for i, nbrs in enumerate(net.adjacency):
        got[i, nbrs] = True
    assert (got == expected).all()


def test_determinism():
    a, b = sample_geometric(300, 0.2, seed=42), sample_geometric(300, 0.2, seed=42)
    assert np.array_equal(a.positions, b.positions)
    na, nb = classify_neighbors(a, strict=False), classify_neighbors(b, strict=False)
    assert np.array_equal(na.degree, nb.degree)


def test_degree_regularity_soft():
    n = 500
    r = math.sqrt(16 * math.log(n) / (math.pi * n))
    ratios = [
        classify_neighbors(sample_geometric(n, r, seed=s), strict=False).degree
        for s in range(10)
    ]
    ratios = [d.max() / max(d.min(), 1) for d in ratios]
    # recorded, not enforced as a hard bound; it only has to be finite and moderate
    print("max/min directional degree ratios:", ratios)
    assert all(np.isfinite(ratios))


def test_empty_direction_raises():
    net = geometric_network(np.array([[0.5, 0.5], [0.6, 0.5]]), 0.2)
    with pytest.raises(EmptyDirectionError):
        classify_neighbors(net)


def test_json_round_trip():
    for net in (make_grid(3), sample_geometric(40, 0.4, seed=3)):
        back = Network.from_dict(json.loads(net.to_json()))
        assert back.kind == net.kind and back.edges() == net.edges()
        assert np.allclose(back.positions, net.positions)
