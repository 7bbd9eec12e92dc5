"""Essentially one-dimensional periodic graphs.

A graph in this class is built from copies ``G_n`` (``n`` in Z) of a finite
cell with ``K`` vertices and ``L`` internal edges.  Vertex ``i`` of level
``n`` is joined to vertex ``j`` of level ``n + 1`` for every ordered pair
``(i, j)`` of the connection set ``J``.  Vertex indices are 1-based in every
public structure, matching the cell JSON format.

Edge slots
----------
Each level ``n`` owns ``L + |J|`` edge slots: slot ``s < L`` is the internal
edge ``intra_edges[s]`` of ``G_n`` and slot ``L + r`` is the connection edge
from ``(n, J[r][0])`` to ``(n + 1, J[r][1])``.  An edge is therefore the pair
``(level, slot)``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, NamedTuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, maximum_flow

__all__ = [
    "VertexRef",
    "EdgeRef",
    "PeriodCell",
    "GraphSchemaError",
    "build_tube",
    "build_cylinder",
    "build_line",
    "cell_from_json",
    "cell_from_spec",
    "shortest_cell_path",
    "disjoint_path_count",
    "level_distance",
]


class GraphSchemaError(ValueError):
    """Raised for malformed or unsupported cell descriptions."""


class VertexRef(NamedTuple):
    """Vertex ``index`` (1-based) of level ``level``; orders by level first."""

    level: int
    index: int


class EdgeRef(NamedTuple):
    """Edge slot ``slot`` of level ``level`` (see module docstring)."""

    level: int
    slot: int


def _tuple_pairs(pairs) -> tuple[tuple[int, int], ...]:
    out = []
    for p in pairs:
        if len(p) != 2:
            raise GraphSchemaError(f"edge {p!r} is not a pair")
        a, b = p
        if not (isinstance(a, (int, np.integer)) and isinstance(b, (int, np.integer))):
            raise GraphSchemaError(f"edge {p!r} has non-integer endpoints")
        out.append((int(a), int(b)))
    return tuple(out)


@dataclass(frozen=True)
class PeriodCell:
    """Finite period cell of an essentially one-dimensional periodic graph.

    Parameters
    ----------
    K : int
        Number of vertices per level.
    intra_edges : tuple of (int, int)
        Undirected edges of the cell, 1-based, stored as ``(i, j)`` with
        ``i < j``.
    J : tuple of (int, int)
        Ordered connection pairs ``(i, j)`` joining ``(n, i)`` to
        ``(n + 1, j)``.
    coords : tuple of tuple of int, optional
        Lattice coordinates of the cell vertices.  Tubes carry them so that
        nested tubes of different widths share edge weights.
    name : str
        Human readable label.
    """

    K: int
    intra_edges: tuple[tuple[int, int], ...]
    J: tuple[tuple[int, int], ...]
    coords: tuple[tuple[int, ...], ...] | None = field(default=None, compare=True)
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        if not isinstance(self.K, (int, np.integer)) or self.K < 1:
            raise GraphSchemaError("K must be a positive integer")
        intra = _tuple_pairs(self.intra_edges)
        norm = []
        for i, j in intra:
            for x in (i, j):
                if not 1 <= x <= self.K:
                    raise GraphSchemaError(f"vertex index {x} outside 1..{self.K}")
            if i == j:
                raise GraphSchemaError(f"self-loop ({i}, {j}) in cell")
            norm.append((min(i, j), max(i, j)))
        if len(set(norm)) != len(norm):
            raise GraphSchemaError("duplicate internal edge")
        conn = _tuple_pairs(self.J)
        for i, j in conn:
            for x in (i, j):
                if not 1 <= x <= self.K:
                    raise GraphSchemaError(f"connection index {x} outside 1..{self.K}")
        if len(set(conn)) != len(conn):
            raise GraphSchemaError("duplicate connection pair")
        if not conn:
            raise GraphSchemaError("connection set J is empty")
        object.__setattr__(self, "K", int(self.K))
        object.__setattr__(self, "intra_edges", tuple(norm))
        object.__setattr__(self, "J", conn)
        if self.coords is not None:
            if len(self.coords) != self.K:
                raise GraphSchemaError("coords must list one coordinate per vertex")
            object.__setattr__(self, "coords", tuple(tuple(int(c) for c in p) for p in self.coords))
        if not self._infinite_graph_connected():
            raise GraphSchemaError("cell produces a disconnected infinite graph")

    # -- structure -----------------------------------------------------
    @property
    def L(self) -> int:
        """Number of internal edges per level."""
        return len(self.intra_edges)

    @property
    def n_slots(self) -> int:
        """Edge slots per level, ``L + |J|``."""
        return len(self.intra_edges) + len(self.J)

    def slot_endpoints(self, slot: int) -> tuple[tuple[int, int], tuple[int, int]]:
        """Endpoints ``((dlevel, i), (dlevel, j))`` of a slot relative to its level."""
        if slot < self.L:
            i, j = self.intra_edges[slot]
            return (0, i), (0, j)
        i, j = self.J[slot - self.L]
        return (0, i), (1, j)

    def edge_vertices(self, e: EdgeRef) -> tuple[VertexRef, VertexRef]:
        """Endpoints of an edge as vertex references."""
        (da, i), (db, j) = self.slot_endpoints(e.slot)
        return VertexRef(e.level + da, i), VertexRef(e.level + db, j)

    def edge_between(self, u: VertexRef, v: VertexRef) -> EdgeRef:
        """Edge joining two adjacent vertices.

        Raises
        ------
        KeyError
            If ``u`` and ``v`` are not adjacent.
        """
        return self._edge_lookup[self._edge_key(u, v)]

    def _edge_key(self, u, v):
        u, v = VertexRef(*u), VertexRef(*v)
        if u > v:
            u, v = v, u
        return (v.level - u.level, u.index, v.index, u.level)

    @cached_property
    def _edge_lookup(self):
        return _EdgeLookup(self)

    @cached_property
    def slot_keys(self) -> np.ndarray:
        """Stable 63-bit random-number keys of the edge slots.

        Lattice cells key slots by geometric position, so a tube of width
        ``K`` and one of width ``K + 1`` sharing a seed assign the same weight
        to every common edge.  Other cells key slots by their index.
        """
        keys = np.empty(self.n_slots, dtype=np.int64)
        if self.coords is not None and max((max(c) for c in self.coords), default=0) < 2**12 and len(self.coords[0]) <= 4:

            def pack(c):
                return sum(int(x) << (12 * a) for a, x in enumerate(c))

            for s in range(self.n_slots):
                (_, i), (dl, j) = self.slot_endpoints(s)
                ci, cj = self.coords[i - 1], self.coords[j - 1]
                if dl == 1:
                    if ci != cj:
                        keys[s] = (1 << 60) | (pack(ci) << 12) | pack(cj)
                    else:
                        keys[s] = pack(ci) << 4
                else:
                    diff = [b - a for a, b in zip(ci, cj)]
                    lo = min(ci, cj)
                    nz = [a for a, x in enumerate(diff) if x != 0]
                    if len(nz) == 1 and abs(diff[nz[0]]) == 1:
                        keys[s] = (pack(lo) << 4) | (nz[0] + 1)
                    else:
                        keys[s] = (1 << 61) | (pack(ci) << 24) | pack(cj)
        else:
            keys[:] = (1 << 62) + np.arange(self.n_slots)
        if len(set(keys.tolist())) != self.n_slots:  # pragma: no cover - defensive
            keys[:] = (1 << 62) + np.arange(self.n_slots)
        return keys

    def _infinite_graph_connected(self) -> bool:
        # voltage-graph test: the quotient must be connected and the level
        # shifts of its cycles must generate Z
        K = self.K
        adj: list[list[tuple[int, int]]] = [[] for _ in range(K)]
        for i, j in self.intra_edges:
            adj[i - 1].append((j - 1, 0))
            adj[j - 1].append((i - 1, 0))
        for i, j in self.J:
            adj[i - 1].append((j - 1, 1))
            adj[j - 1].append((i - 1, -1))
        pot = [None] * K
        pot[0] = 0
        stack = [0]
        g = 0
        while stack:
            u = stack.pop()
            for v, s in adj[u]:
                if pot[v] is None:
                    pot[v] = pot[u] + s
                    stack.append(v)
                else:
                    g = math.gcd(g, abs(pot[u] + s - pot[v]))
        return all(p is not None for p in pot) and g == 1

    # -- serialisation -------------------------------------------------
    def to_json(self) -> dict:
        """Cell JSON with 1-based indices."""
        return {"K": self.K, "intra_edges": [list(e) for e in self.intra_edges], "J": [list(p) for p in self.J]}

    def reflected(self) -> "PeriodCell":
        """Cell of the graph with levels negated (connection pairs reversed)."""
        return PeriodCell(self.K, self.intra_edges, tuple((j, i) for i, j in self.J), self.coords, self.name + "-reflected")


class _EdgeLookup:
    def __init__(self, cell: PeriodCell):
        self.cell = cell
        self.table = {}
        for s in range(cell.n_slots):
            (_, i), (dl, j) = cell.slot_endpoints(s)
            if dl == 0:
                self.table[(0, min(i, j), max(i, j))] = s
            else:
                self.table[(1, i, j)] = s

    def __getitem__(self, key):
        dl, i, j, lev = key
        if dl == 0:
            s = self.table[(0, min(i, j), max(i, j))]
        elif dl == 1:
            s = self.table[(1, i, j)]
        else:
            raise KeyError(key)
        return EdgeRef(lev, s)


def build_tube(K: int, d: int) -> PeriodCell:
    """The ``(K, d)``-tube ``Z x {0..K-1}^(d-1)``.

    The cell is the grid graph on ``{0..K-1}^(d-1)``, vertices enumerated in
    lexicographic order of their coordinates, and ``J`` is the identity.
    """
    if K < 1 or d < 1:
        raise GraphSchemaError("tube needs K >= 1 and d >= 1")
    pts = list(itertools.product(range(K), repeat=d - 1))
    idx = {p: k + 1 for k, p in enumerate(pts)}
    intra = []
    for p in pts:
        for a in range(d - 1):
            if p[a] + 1 < K:
                q = p[:a] + (p[a] + 1,) + p[a + 1 :]
                intra.append((idx[p], idx[q]))
    J = tuple((k, k) for k in range(1, len(pts) + 1))
    return PeriodCell(len(pts), tuple(intra), J, coords=tuple(pts) if d > 1 else ((0,),), name=f"tube({K},{d})")


def build_cylinder(K: int, d: int) -> PeriodCell:
    """The ``(K, d)``-cylinder ``Z x (Z/KZ)^(d-1)``.

    Vertex-transitive; for ``K = 2`` the wrap edge coincides with the grid
    edge and is not duplicated.
    """
    if K < 1 or d < 1:
        raise GraphSchemaError("cylinder needs K >= 1 and d >= 1")
    pts = list(itertools.product(range(K), repeat=d - 1))
    idx = {p: k + 1 for k, p in enumerate(pts)}
    intra = set()
    for p in pts:
        for a in range(d - 1):
            q = p[:a] + ((p[a] + 1) % K,) + p[a + 1 :]
            if q != p:
                intra.add((min(idx[p], idx[q]), max(idx[p], idx[q])))
    J = tuple((k, k) for k in range(1, len(pts) + 1))
    return PeriodCell(len(pts), tuple(sorted(intra)), J, name=f"cylinder({K},{d})")


def build_line() -> PeriodCell:
    """The integer line Z, the (1, 1)-tube."""
    return PeriodCell(1, (), ((1, 1),), coords=((0,),), name="line")


def cell_from_json(obj) -> PeriodCell:
    """Build a cell from a JSON string, path-free mapping, or parsed dict.

    Raises
    ------
    GraphSchemaError
        On missing keys, non-integer data or invalid indices.
    """
    if isinstance(obj, (str, bytes)):
        try:
            obj = json.loads(obj)
        except json.JSONDecodeError as exc:
            raise GraphSchemaError(f"invalid cell JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise GraphSchemaError("cell JSON must be an object")
    missing = {"K", "intra_edges", "J"} - set(obj)
    if missing:
        raise GraphSchemaError(f"cell JSON missing keys {sorted(missing)}")
    K = obj["K"]
    if isinstance(K, bool) or not isinstance(K, int):
        raise GraphSchemaError("K must be an integer")
    if not isinstance(obj["intra_edges"], list) or not isinstance(obj["J"], list):
        raise GraphSchemaError("intra_edges and J must be lists")
    return PeriodCell(K, tuple(tuple(e) for e in obj["intra_edges"]), tuple(tuple(p) for p in obj["J"]), name="custom")


def cell_from_spec(spec: str) -> PeriodCell:
    """Parse a short graph specification.

    Accepted forms are ``tube:K,d``, ``cylinder:K,d``, ``line`` and a path to
    a cell JSON file.
    """
    s = spec.strip()
    if s == "line":
        return build_line()
    for prefix, fn in (("tube:", build_tube), ("cylinder:", build_cylinder)):
        if s.startswith(prefix):
            try:
                K, d = (int(x) for x in s[len(prefix) :].split(","))
            except ValueError as exc:
                raise GraphSchemaError(f"cannot parse {spec!r}") from exc
            return fn(K, d)
    try:
        with open(s) as fh:
            return cell_from_json(fh.read())
    except OSError as exc:
        raise GraphSchemaError(f"unknown graph specification {spec!r}") from exc


# -- finite level-window graphs ------------------------------------------


def _window_adjacency(cell: PeriodCell, nlev: int, exclude_slots=None) -> csr_matrix:
    """Unit-capacity undirected adjacency of levels ``0..nlev-1``."""
    K, L = cell.K, cell.L
    rows, cols = [], []
    for r in range(nlev):
        for s in range(cell.n_slots):
            if exclude_slots is not None and (r, s) in exclude_slots:
                continue
            (_, i), (dl, j) = cell.slot_endpoints(s)
            if r + dl >= nlev:
                continue
            a, b = r * K + i - 1, (r + dl) * K + j - 1
            rows += [a, b]
            cols += [b, a]
    n = nlev * K
    return csr_matrix((np.ones(len(rows), dtype=np.int32), (rows, cols)), shape=(n, n))


def shortest_cell_path(cell: PeriodCell, span: int) -> list[VertexRef]:
    """A path from level 0 to level ``span`` using the fewest edges.

    The path touches level 0 only at its first vertex and level ``span`` only
    at its last vertex, stays within levels ``0..span`` and is chosen
    lexicographically smallest among shortest ones, which makes it
    deterministic.  Paths leaving the slab are never shorter, so the result
    is a shortest path in the infinite graph.
    """
    if span < 1:
        raise ValueError("span must be at least 1")
    K = cell.K
    nlev = span + 1
    adj = _window_adjacency(cell, nlev).tolil().rows
    n = nlev * K
    # BFS distances from level 0 and to level span
    src = list(range(K))
    dst = set(range(span * K, n))

    def bfs(starts):
        dist = np.full(n, -1)
        q = list(starts)
        for s in q:
            dist[s] = 0
        h = 0
        while h < len(q):
            u = q[h]
            h += 1
            for v in adj[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    q.append(v)
        return dist

    d_to = bfs(sorted(dst))
    best = min(d_to[s] for s in src)
    # lexicographic greedy on the shortest-path DAG
    start = min(s for s in src if d_to[s] == best)
    path = [start]
    u = start
    while d_to[u] > 0:
        u = min(v for v in adj[u] if d_to[v] == d_to[u] - 1)
        path.append(u)
    return [VertexRef(p // K, p % K + 1) for p in path]


def level_distance(cell: PeriodCell, u: VertexRef, v: VertexRef) -> int:
    """Graph distance between two vertices (fewest edges)."""
    u, v = VertexRef(*u), VertexRef(*v)
    lo = min(u.level, v.level) - cell.K - 1
    hi = max(u.level, v.level) + cell.K + 1
    nlev = hi - lo + 1
    from scipy.sparse.csgraph import shortest_path

    adj = _window_adjacency(cell, nlev)
    a = (u.level - lo) * cell.K + u.index - 1
    b = (v.level - lo) * cell.K + v.index - 1
    d = shortest_path(adj, unweighted=True, indices=[a])[0, b]
    return int(d)


def disjoint_path_count(cell: PeriodCell, span: int | None = None) -> int:
    """Maximum number of edge-disjoint paths between two distant levels.

    Computed by unit-capacity max-flow from level 0 to level ``span`` in the
    slab between them; by Menger this equals the minimum edge cut separating
    the levels, which for large ``span`` is attained by a single level of
    connection edges or one cell.
    """
    if span is None:
        span = 2 * cell.K + 2
    nlev = span + 1
    K = cell.K
    adj = _window_adjacency(cell, nlev).tocoo()
    n = nlev * K
    big = 10**6
    rows = list(adj.row) + [n] * K + list(range(span * K, n))
    cols = list(adj.col) + list(range(K)) + [n + 1] * K
    caps = list(adj.data) + [big] * (2 * K)
    g = csr_matrix((np.array(caps, dtype=np.int32), (rows, cols)), shape=(n + 2, n + 2))
    g.sum_duplicates()
    return int(maximum_flow(g, n, n + 1).flow_value)


def component_count(cell: PeriodCell, nlev: int) -> int:
    """Connected components of the finite slab of ``nlev`` levels."""
    return int(connected_components(_window_adjacency(cell, nlev), directed=False)[0])


def vertices_of(cell: PeriodCell, levels: Iterable[int]) -> list[VertexRef]:
    """All vertices of the given levels, in ``VertexRef`` order."""
    return [VertexRef(n, i) for n in sorted(set(levels)) for i in range(1, cell.K + 1)]
