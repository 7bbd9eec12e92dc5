"""Passage times, geodesics and infected sets with certified windows.

All computations run Dijkstra on a finite slab of levels ``[lo, hi]``.  The
slab value is promoted to the infinite-graph value by a *boundary-cut
certificate*: a path that leaves the slab must touch a boundary level, so
its cost is bounded below by combinations of slab distances to and from the
two boundary levels (see :func:`_boundary_bound`).  When the slab distance
does not exceed that bound, no outside path can be shorter and the value is
exact.  Otherwise the slab is widened geometrically.

Geodesic tie-break
------------------
Among optimal paths the geodesic has the fewest edges; among those it is
the lexicographically smallest vertex sequence under ``VertexRef`` order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .passage_times import WeightField
from .periodic_graph import EdgeRef, PeriodCell, VertexRef

__all__ = [
    "CertificationError",
    "TravelTime",
    "Geodesic",
    "InfectedSet",
    "Profile",
    "Window",
    "travel_time",
    "window_travel_time",
    "geodesic",
    "infected_set",
    "travel_profile",
    "time_and_length",
    "brute_force_travel_time",
    "path_weight",
]

TIE_RTOL = 1e-10
DEFAULT_MAX_LEVELS = 1 << 20


class CertificationError(RuntimeError):
    """Raised in strict mode when no window up to the budget certifies."""

    def __init__(self, msg, window):
        super().__init__(f"{msg} (last window {window})")
        self.window = window


@dataclass(frozen=True)
class _Topology:
    K: int
    nlev: int
    eu: np.ndarray
    ev: np.ndarray
    elev: np.ndarray
    eslot: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    perm: np.ndarray  # edge id of each CSR entry


@lru_cache(maxsize=32)
def _topology(cell: PeriodCell, nlev: int) -> _Topology:
    K = cell.K
    eu, ev, el, es = [], [], [], []
    for s in range(cell.n_slots):
        (_, i), (dl, j) = cell.slot_endpoints(s)
        r = np.arange(nlev - dl)
        eu.append(r * K + i - 1)
        ev.append((r + dl) * K + j - 1)
        el.append(r)
        es.append(np.full(len(r), s))
    eu = np.concatenate(eu).astype(np.int64)
    ev = np.concatenate(ev).astype(np.int64)
    el = np.concatenate(el).astype(np.int64)
    es = np.concatenate(es).astype(np.int64)
    m = len(eu)
    rows = np.concatenate([eu, ev])
    cols = np.concatenate([ev, eu])
    eid = np.concatenate([np.arange(m), np.arange(m)])
    order = np.lexsort((cols, rows))
    rows, cols, eid = rows[order], cols[order], eid[order]
    n = nlev * K
    indptr = np.zeros(n + 1, dtype=np.int32)
    np.add.at(indptr, rows + 1, 1)
    indptr = np.cumsum(indptr).astype(np.int32)
    return _Topology(K, nlev, eu, ev, el, es, indptr, cols.astype(np.int32), eid)


class Window:
    """Weighted slab of levels ``lo..hi`` ready for shortest-path queries."""

    def __init__(self, cell: PeriodCell, wfield: WeightField, lo: int, hi: int, weights: np.ndarray | None = None):
        if hi < lo:
            raise ValueError("empty window")
        self.cell, self.field, self.lo, self.hi = cell, wfield, int(lo), int(hi)
        self.K = cell.K
        self.topo = _topology(cell, hi - lo + 1)
        W = wfield.level_weights(cell, lo, hi) if weights is None else weights
        self.w = W[self.topo.elev, self.topo.eslot]
        n = self.topo.nlev * self.K
        self.graph = csr_matrix((self.w[self.topo.perm], self.topo.indices, self.topo.indptr), shape=(n, n))
        self._bd: dict[str, np.ndarray] = {}

    @property
    def n_vertices(self) -> int:
        return self.topo.nlev * self.K

    def vid(self, v) -> int:
        v = VertexRef(*v)
        if not (self.lo <= v.level <= self.hi and 1 <= v.index <= self.K):
            raise ValueError(f"{v} outside window [{self.lo}, {self.hi}]")
        return (v.level - self.lo) * self.K + v.index - 1

    def vref(self, k: int) -> VertexRef:
        return VertexRef(self.lo + int(k) // self.K, int(k) % self.K + 1)

    def level_ids(self, level: int) -> np.ndarray:
        r = level - self.lo
        return np.arange(r * self.K, (r + 1) * self.K)

    def dist_from(self, ids) -> np.ndarray:
        ids = np.atleast_1d(np.asarray(ids, dtype=np.int64))
        return dijkstra(self.graph, directed=True, indices=ids, min_only=True)

    def boundary_dist(self, side: str) -> np.ndarray:
        """Slab distances from the ``"lo"`` or ``"hi"`` boundary level."""
        if side not in self._bd:
            lev = self.lo if side == "lo" else self.hi
            self._bd[side] = self.dist_from(self.level_ids(lev))
        return self._bd[side]

    def edge_ref(self, k: int) -> EdgeRef:
        return EdgeRef(self.lo + int(self.topo.elev[k]), int(self.topo.eslot[k]))

    def tight_graph(self, dU: np.ndarray) -> csr_matrix:
        """Directed graph of edges lying on some optimal path from the sources."""
        eu, ev, w = self.topo.eu, self.topo.ev, self.w
        tol_v = TIE_RTOL * np.maximum(1.0, dU[ev])
        tol_u = TIE_RTOL * np.maximum(1.0, dU[eu])
        fwd = np.isfinite(dU[eu]) & (np.abs(dU[eu] + w - dU[ev]) <= tol_v)
        bwd = np.isfinite(dU[ev]) & (np.abs(dU[ev] + w - dU[eu]) <= tol_u)
        rows = np.concatenate([eu[fwd], ev[bwd]])
        cols = np.concatenate([ev[fwd], eu[bwd]])
        n = self.n_vertices
        return csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))


def _boundary_bound(win: Window, dU: np.ndarray, target_ids: np.ndarray) -> np.ndarray:
    """Lower bound on the cost of any source-target path leaving the slab.

    With ``f`` the first and ``g`` the last boundary vertex of such a path,
    the cost is at least ``D(U, f) + [cost f -> g] + D(g, v)`` where the
    middle term vanishes when both lie on the same side and is at least the
    slab crossing cost ``C`` otherwise.
    """
    dL, dR = win.boundary_dist("lo"), win.boundary_dist("hi")
    Lids, Rids = win.level_ids(win.lo), win.level_ids(win.hi)
    aL, aR = dU[Lids].min(), dU[Rids].min()
    C = dL[Rids].min()
    vL, vR = dL[target_ids], dR[target_ids]
    return np.minimum.reduce([aR + vR, aL + vL, aL + C + vR, aR + C + vL])


@dataclass(frozen=True)
class TravelTime:
    """Passage time ``T(U, V)`` with its certificate."""

    value: float
    window: tuple[int, int]
    certified: bool
    method: str = "boundary"
    margin: float = math.nan

    def __float__(self):
        return float(self.value)


def _as_vrefs(X) -> list[VertexRef]:
    if isinstance(X, tuple) and len(X) == 2 and all(isinstance(x, (int, np.integer)) for x in X):
        return [VertexRef(int(X[0]), int(X[1]))]
    return [VertexRef(int(a), int(b)) for a, b in X]


def _grow(lo0: int, hi0: int, margin: int, max_levels: int):
    m = max(1, margin)
    while True:
        lo, hi = lo0 - m, hi0 + m
        yield lo, hi, (hi - lo + 1) > max_levels
        m *= 2


def _initial_margin(cell: PeriodCell) -> int:
    return max(4, 2 * cell.K)


def window_travel_time(cell: PeriodCell, wfield: WeightField, U, V, lo: int, hi: int) -> float:
    """Passage time restricted to paths inside the slab ``[lo, hi]``."""
    win = Window(cell, wfield, lo, hi)
    dU = win.dist_from([win.vid(u) for u in _as_vrefs(U)])
    return float(dU[[win.vid(v) for v in _as_vrefs(V)]].min())


def travel_time(
    cell: PeriodCell,
    wfield: WeightField,
    U,
    V,
    *,
    margin: int | None = None,
    max_levels: int = DEFAULT_MAX_LEVELS,
    strict: bool = False,
    window: tuple[int, int] | None = None,
) -> TravelTime:
    """First-passage time between vertex sets in the infinite graph.

    Parameters
    ----------
    cell, wfield : PeriodCell, WeightField
    U, V : VertexRef or iterable of VertexRef
        Source and target sets (finite).
    margin : int, optional
        Initial number of extra levels on each side of the query span.
    max_levels : int
        Largest slab tried before reporting a non-certified result.
    strict : bool
        Raise :class:`CertificationError` instead of returning a
        non-certified value.
    window : (int, int), optional
        Initial slab; widened if it does not certify.

    Returns
    -------
    TravelTime
        ``certified`` is true when the boundary-cut bound proves that no
        path outside the reported window is shorter.
    """
    Us, Vs = _as_vrefs(U), _as_vrefs(V)
    if not Us or not Vs:
        raise ValueError("U and V must be nonempty")
    if set(Us) & set(Vs):
        return TravelTime(0.0, (min(u.level for u in Us), max(u.level for u in Us)), True, "trivial", math.inf)
    span_lo = min(x.level for x in Us + Vs)
    span_hi = max(x.level for x in Us + Vs)
    if window is not None:
        span_lo, span_hi = min(span_lo, window[0] + 1), max(span_hi, window[1] - 1)
        margin = 1 if margin is None else margin
    m0 = _initial_margin(cell) if margin is None else margin
    last = None
    for lo, hi, over in _grow(span_lo, span_hi, m0, max_levels):
        win = Window(cell, wfield, lo, hi)
        dU = win.dist_from([win.vid(u) for u in Us])
        tid = np.array([win.vid(v) for v in Vs])
        T = float(dU[tid].min())
        B = float(_boundary_bound(win, dU, tid).min())
        last = TravelTime(T, (lo, hi), T <= B, "boundary", B - T)
        if last.certified:
            return last
        if over:
            break
    if strict:
        raise CertificationError("travel time not certified", last.window)
    return last


def time_and_length(
    cell: PeriodCell,
    wfield: WeightField,
    U,
    V,
    *,
    window: tuple[int, int] | None = None,
    margin: int | None = None,
    max_levels: int = DEFAULT_MAX_LEVELS,
) -> tuple[float, int, bool]:
    """``(T(U, V), N(U, V), certified)`` without reconstructing the path.

    The length is the fewest edges over optimal paths; certification is
    strict so that both numbers are exact.
    """
    Us, Vs = _as_vrefs(U), _as_vrefs(V)
    span_lo = min(x.level for x in Us + Vs)
    span_hi = max(x.level for x in Us + Vs)
    if window is not None:
        span_lo, span_hi = min(span_lo, window[0] + 1), max(span_hi, window[1] - 1)
        margin = 1 if margin is None else margin
    m0 = _initial_margin(cell) if margin is None else margin
    for lo, hi, over in _grow(span_lo, span_hi, m0, max_levels):
        win = Window(cell, wfield, lo, hi)
        src = np.array([win.vid(u) for u in Us])
        tgt = np.array([win.vid(v) for v in Vs])
        dU = win.dist_from(src)
        T = float(dU[tgt].min())
        B = float(_boundary_bound(win, dU, tgt).min())
        if T < B or over:
            N = dijkstra(win.tight_graph(dU), directed=True, indices=src, min_only=True, unweighted=True)
            tol = TIE_RTOL * max(1.0, T)
            best = tgt[np.abs(dU[tgt] - T) <= tol]
            return T, int(N[best].min()), bool(T < B)


@dataclass(frozen=True)
class Geodesic:
    """Optimal path under the (time, length, lexicographic) rule."""

    vertices: tuple[VertexRef, ...]
    T: float
    window: tuple[int, int]
    certified: bool

    @property
    def N(self) -> int:
        """Number of edges."""
        return len(self.vertices) - 1

    def edges(self, cell: PeriodCell) -> list[EdgeRef]:
        return [cell.edge_between(a, b) for a, b in zip(self.vertices[:-1], self.vertices[1:])]

    def to_json(self) -> dict:
        return {
            "vertices": [list(v) for v in self.vertices],
            "T": self.T,
            "N": self.N,
            "certificate_window": list(self.window),
            "certified": self.certified,
        }


def _lex_path(win: Window, dU: np.ndarray, src: np.ndarray, tgt: np.ndarray) -> list[int]:
    tight = win.tight_graph(dU)
    N = dijkstra(tight, directed=True, indices=src, min_only=True, unweighted=True)
    Tmin = dU[tgt].min()
    tol = TIE_RTOL * max(1.0, Tmin)
    cand = tgt[np.abs(dU[tgt] - Tmin) <= tol]
    Nmin = N[cand].min()
    cand = cand[N[cand] == Nmin]
    # restrict to tight edges raising N by one, then walk greedily forward
    coo = tight.tocoo()
    keep = N[coo.col] == N[coo.row] + 1
    r, c = coo.row[keep], coo.col[keep]
    n = win.n_vertices
    rev = csr_matrix((np.ones(len(r)), (c, r)), shape=(n, n))
    fwd = csr_matrix((np.ones(len(r)), (r, c)), shape=(n, n))
    reach = np.isfinite(dijkstra(rev, directed=True, indices=cand, min_only=True, unweighted=True))
    starts = [s for s in sorted(src.tolist()) if reach[s] and N[s] == 0]
    u = starts[0]
    path = [u]
    cand_set = set(cand.tolist())
    while u not in cand_set:
        nb = fwd.indices[fwd.indptr[u] : fwd.indptr[u + 1]]
        u = int(min(x for x in nb if reach[x]))
        path.append(u)
    return path


def geodesic(
    cell: PeriodCell,
    wfield: WeightField,
    U,
    V,
    *,
    margin: int | None = None,
    max_levels: int = DEFAULT_MAX_LEVELS,
    strict: bool = False,
) -> Geodesic:
    """The geodesic ``gamma(U, V)`` with deterministic tie-breaking.

    Certification requires the slab optimum to beat every outside path
    strictly, so that the edge count and vertex order are also exact.
    """
    Us, Vs = _as_vrefs(U), _as_vrefs(V)
    span_lo = min(x.level for x in Us + Vs)
    span_hi = max(x.level for x in Us + Vs)
    m0 = _initial_margin(cell) if margin is None else margin
    last = None
    for lo, hi, over in _grow(span_lo, span_hi, m0, max_levels):
        win = Window(cell, wfield, lo, hi)
        src = np.array(sorted(win.vid(u) for u in Us))
        tgt = np.array(sorted(win.vid(v) for v in Vs))
        dU = win.dist_from(src)
        T = float(dU[tgt].min())
        B = float(_boundary_bound(win, dU, tgt).min()) if set(Us).isdisjoint(Vs) else math.inf
        ok = T < B
        if ok or over:
            path = _lex_path(win, dU, src, tgt)
            last = Geodesic(tuple(win.vref(k) for k in path), T, (lo, hi), ok)
            break
    if strict and not last.certified:
        raise CertificationError("geodesic not certified", last.window)
    return last


@dataclass(frozen=True)
class InfectedSet:
    """``B_t``: vertices reached by time ``t``, exact within ``window``."""

    t: float
    vertices: tuple[VertexRef, ...]
    times: np.ndarray = field(repr=False)
    window: tuple[int, int]
    certified: bool

    def as_set(self) -> frozenset:
        return frozenset(self.vertices)


def infected_set(
    cell: PeriodCell,
    wfield: WeightField,
    I,
    t: float,
    *,
    margin: int | None = None,
    max_levels: int = DEFAULT_MAX_LEVELS,
    strict: bool = False,
) -> InfectedSet:
    """All vertices ``v`` with ``T(I, v) <= t``.

    The slab is exact once its boundary is reached strictly after ``t``,
    since every vertex outside is then infected strictly after ``t`` too.
    """
    Is = _as_vrefs(I)
    if t < 0:
        return InfectedSet(t, (), np.empty(0), (0, 0), True)
    span_lo = min(x.level for x in Is)
    span_hi = max(x.level for x in Is)
    m0 = _initial_margin(cell) if margin is None else margin
    for lo, hi, over in _grow(span_lo, span_hi, m0, max_levels):
        win = Window(cell, wfield, lo, hi)
        dU = win.dist_from([win.vid(u) for u in Is])
        edge = min(dU[win.level_ids(lo)].min(), dU[win.level_ids(hi)].min())
        ok = edge > t
        if ok or over:
            ids = np.flatnonzero(dU <= t)
            res = InfectedSet(t, tuple(win.vref(k) for k in ids), dU[ids], (lo, hi), bool(ok))
            if strict and not ok:
                raise CertificationError("infected set not certified", (lo, hi))
            return res


@dataclass(frozen=True)
class Profile:
    """Passage times and geodesic lengths from ``I`` to whole levels.

    ``T[k, i - 1]`` is ``T(I, (levels[k], i))``; ``N`` likewise holds the
    geodesic edge counts when requested.
    """

    levels: np.ndarray
    T: np.ndarray
    N: np.ndarray | None
    window: tuple[int, int]
    certified: bool


def travel_profile(
    cell: PeriodCell,
    wfield: WeightField,
    I,
    levels: Sequence[int],
    *,
    lengths: bool = False,
    margin: int | None = None,
    max_levels: int = DEFAULT_MAX_LEVELS,
) -> Profile:
    """Passage times from ``I`` to every vertex of the given levels.

    One slab serves all targets; it is widened until every target is
    certified (strictly, when ``lengths`` is requested).
    """
    Is = _as_vrefs(I)
    levels = np.asarray(levels, dtype=np.int64)
    span_lo = min(int(levels.min()), min(x.level for x in Is))
    span_hi = max(int(levels.max()), max(x.level for x in Is))
    m0 = _initial_margin(cell) if margin is None else margin
    K = cell.K
    src_set = set(Is)
    for lo, hi, over in _grow(span_lo, span_hi, m0, max_levels):
        win = Window(cell, wfield, lo, hi)
        src = np.array([win.vid(u) for u in Is])
        dU = win.dist_from(src)
        tid = ((levels - lo)[:, None] * K + np.arange(K)[None, :]).ravel()
        B = _boundary_bound(win, dU, tid)
        is_src = np.array([win.vref(k) in src_set for k in tid])
        ok_arr = (dU[tid] < B) if lengths else (dU[tid] <= B)
        ok = bool(np.all(ok_arr | is_src))
        if ok or over:
            T = dU[tid].reshape(len(levels), K)
            N = None
            if lengths:
                tight = win.tight_graph(dU)
                N = dijkstra(tight, directed=True, indices=src, min_only=True, unweighted=True)[tid]
                N = N.reshape(len(levels), K).astype(np.int64)
            return Profile(levels, T, N, (lo, hi), ok)


def path_weight(cell: PeriodCell, wfield: WeightField, vertices: Sequence[VertexRef]) -> float:
    """Total weight of a vertex path."""
    edges = [cell.edge_between(a, b) for a, b in zip(vertices[:-1], vertices[1:])]
    return float(np.sum(wfield.weights_of(cell, edges)))


def brute_force_travel_time(
    cell: PeriodCell, wfield: WeightField, U, V, lo: int, hi: int, max_expansions: int = 20_000_000
) -> float:
    """Minimum weight over all simple slab paths, by exhaustive search.

    Independent of the Dijkstra machinery; used as a test oracle.  The
    search is depth-first with branch-and-bound pruning, so it enumerates
    every simple path that could still improve the incumbent.
    """
    Us, Vs = _as_vrefs(U), _as_vrefs(V)
    W = wfield.level_weights(cell, lo, hi)
    adj: dict[VertexRef, list[tuple[VertexRef, float]]] = {}
    for n in range(lo, hi + 1):
        for s in range(cell.n_slots):
            (_, i), (dl, j) = cell.slot_endpoints(s)
            if n + dl > hi:
                continue
            a, b = VertexRef(n, i), VertexRef(n + dl, j)
            w = float(W[n - lo, s])
            adj.setdefault(a, []).append((b, w))
            adj.setdefault(b, []).append((a, w))
    for v in adj:
        adj[v].sort(key=lambda p: p[1])
    targets = set(Vs)
    best = math.inf
    count = 0
    for u in Us:
        if u in targets:
            return 0.0
        stack = [(u, 0.0, iter(adj[u]))]
        on_path = {u}
        while stack:
            v, c, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                on_path.discard(v)
                continue
            x, w = nxt
            cx = c + w
            count += 1
            if count > max_expansions:
                raise RuntimeError("brute-force search exceeded its expansion budget")
            if cx >= best or x in on_path:
                continue
            if x in targets:
                best = cx
                continue
            on_path.add(x)
            stack.append((x, cx, iter(adj[x])))
    return best
