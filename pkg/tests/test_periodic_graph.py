import json

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpp1d.periodic_graph import (
    EdgeRef,
    GraphSchemaError,
    PeriodCell,
    VertexRef,
    build_cylinder,
    build_line,
    build_tube,
    cell_from_json,
    cell_from_spec,
    component_count,
    disjoint_path_count,
    level_distance,
    shortest_cell_path,
    vertices_of,
)


def nx_slab(cell, lo, hi):
    """Reference slab graph built edge by edge with networkx."""
    g = nx.Graph()
    for n in range(lo, hi + 1):
        for i in range(1, cell.K + 1):
            g.add_node((n, i))
        for i, j in cell.intra_edges:
            g.add_edge((n, i), (n, j))
        if n < hi:
            for i, j in cell.J:
                g.add_edge((n, i), (n + 1, j))
    return g


@pytest.mark.parametrize("K,d", [(1, 2), (2, 2), (3, 2), (2, 3), (3, 3)])
def test_tube_shape(K, d):
    cell = build_tube(K, d)
    assert cell.K == K ** (d - 1)
    # grid graph on {0..K-1}^(d-1)
    assert cell.L == (d - 1) * K ** (d - 2) * (K - 1)
    assert cell.J == tuple((k, k) for k in range(1, cell.K + 1))
    assert cell.n_slots == cell.L + cell.K


def test_cylinder_wraps():
    c = build_cylinder(4, 2)
    assert c.K == 4 and c.L == 4
    assert build_cylinder(2, 2).L == 1  # wrap edge equals grid edge


def test_line_is_integers():
    c = build_line()
    assert (c.K, c.L, c.J) == (1, 0, ((1, 1),))
    assert level_distance(c, VertexRef(-3, 1), VertexRef(4, 1)) == 7


@pytest.mark.parametrize("cell", [build_tube(2, 2), build_tube(3, 2), build_cylinder(3, 2), build_tube(2, 3)])
def test_edges_match_networkx(cell):
    g = nx_slab(cell, 0, 3)
    ours = set()
    for n in range(0, 3):
        for s in range(cell.n_slots):
            a, b = cell.edge_vertices(EdgeRef(n, s))
            ours.add(frozenset((tuple(a), tuple(b))))
    for s in range(cell.L):
        a, b = cell.edge_vertices(EdgeRef(3, s))
        ours.add(frozenset((tuple(a), tuple(b))))
    assert ours == {frozenset(e) for e in g.edges}
    assert component_count(cell, 4) == 1


@pytest.mark.parametrize("cell", [build_tube(2, 2), build_tube(3, 2), build_tube(2, 3)])
def test_distance_matches_networkx(cell):
    g = nx_slab(cell, -8, 8)
    rng = np.random.default_rng(0)
    for _ in range(20):
        u = VertexRef(int(rng.integers(-3, 4)), int(rng.integers(1, cell.K + 1)))
        v = VertexRef(int(rng.integers(-3, 4)), int(rng.integers(1, cell.K + 1)))
        assert level_distance(cell, u, v) == nx.shortest_path_length(g, tuple(u), tuple(v))


def test_edge_between_roundtrip(tube22):
    for s in range(tube22.n_slots):
        e = EdgeRef(5, s)
        a, b = tube22.edge_vertices(e)
        assert tube22.edge_between(a, b) == e
        assert tube22.edge_between(b, a) == e
    with pytest.raises(KeyError):
        tube22.edge_between(VertexRef(0, 1), VertexRef(2, 1))


@pytest.mark.parametrize("K,d", [(1, 2), (2, 2), (3, 2), (2, 3)])
def test_menger_cut_is_one_level_of_rungs(K, d):
    cell = build_tube(K, d)
    assert disjoint_path_count(cell) == cell.K


@pytest.mark.parametrize("span", [1, 2, 5])
def test_shortest_cell_path(tube22, span):
    p = shortest_cell_path(tube22, span)
    assert p[0].level == 0 and p[-1].level == span
    assert len(p) - 1 == span
    for a, b in zip(p[:-1], p[1:]):
        tube22.edge_between(a, b)


def test_nested_tubes_share_keys():
    small, big = build_tube(2, 2), build_tube(3, 2)
    ks, kb = small.slot_keys, big.slot_keys
    # every edge of the 2-tube appears in the 3-tube with the same key
    for s in range(small.n_slots):
        a, b = small.edge_vertices(EdgeRef(0, s))
        ca, cb = small.coords[a.index - 1], small.coords[b.index - 1]
        ia = big.coords.index(ca) + 1
        ib = big.coords.index(cb) + 1
        t = big.edge_between(VertexRef(a.level, ia), VertexRef(b.level, ib))
        assert kb[t.slot] == ks[s]
    assert len(set(kb.tolist())) == big.n_slots


@pytest.mark.parametrize(
    "bad",
    [
        {"K": 0, "intra_edges": [], "J": [[1, 1]]},
        {"K": 2, "intra_edges": [[1, 1]], "J": [[1, 1]]},
        {"K": 2, "intra_edges": [[1, 3]], "J": [[1, 1]]},
        {"K": 2, "intra_edges": [], "J": [[1, 1]]},  # vertex 2 unreachable
        {"K": 1, "intra_edges": [], "J": []},
        {"K": 2, "intra_edges": [[1, 2], [2, 1]], "J": [[1, 1]]},
        {"K": "2", "intra_edges": [], "J": [[1, 1]]},
        {"intra_edges": [], "J": [[1, 1]]},
    ],
)
def test_schema_errors(bad):
    with pytest.raises(GraphSchemaError):
        cell_from_json(bad)


def test_level_shift_must_generate_integers():
    # only even level shifts: two disjoint copies of Z
    with pytest.raises(GraphSchemaError):
        PeriodCell(2, (), ((1, 2), (2, 1)))
    PeriodCell(2, ((1, 2),), ((1, 2),))  # fine with an internal edge


def test_json_roundtrip():
    c = build_tube(3, 2)
    d = cell_from_json(json.dumps(c.to_json()))
    assert (d.K, d.intra_edges, d.J) == (c.K, c.intra_edges, c.J)


def test_spec_parser(tmp_path):
    assert cell_from_spec("tube:2,2").K == 2
    assert cell_from_spec("cylinder:3,2").L == 3
    assert cell_from_spec("line").K == 1
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"K": 2, "intra_edges": [[1, 2]], "J": [[1, 1], [2, 2]]}))
    assert cell_from_spec(str(p)).L == 1
    for bad in ("tube:2", "tube:a,b", "nothing"):
        with pytest.raises(GraphSchemaError):
            cell_from_spec(bad)


@given(st.integers(1, 3), st.integers(2, 3), st.lists(st.integers(-5, 5), min_size=1, max_size=4))
@settings(max_examples=30, deadline=None)
def test_vertices_of(K, d, levels):
    cell = build_tube(K, d)
    vs = vertices_of(cell, levels)
    assert len(vs) == len(set(levels)) * cell.K
    assert vs == sorted(set(vs))


def test_reflection(tube22):
    r = tube22.reflected()
    assert r.J == tuple((j, i) for i, j in tube22.J)
