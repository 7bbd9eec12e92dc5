"""Regenerative blocks, pivots and the increment decomposition.

For thresholds ``m_tau < t' < t'' < M_tau`` put
``M = floor(t' L / (t'' - t')) + 1``.  The block of level ``n`` consists of
the edges ``E_n`` between levels ``n`` and ``n + 2M`` (all internal edges of
``G_n .. G_{n+2M}`` and the connection edges between them).  Its cheap part
``Ehat_n`` is a fixed shortest path ``gamma_n`` from level ``n`` to level
``n + 2M`` together with the internal edges of the two end levels.  The event
``A_n`` asks for every cheap edge to be at most ``t'`` and every other edge
of ``E_n`` to be at least ``t''``.  On ``A_n`` every path from level ``<= n``
to level ``>= n + 2M`` passes the *pivot* ``vhat_{n+M}``, the first vertex of
``gamma_n`` on level ``n + M``, and passage times split there.

Scanning the grid ``n_k = rho_I + Delta + k (2M + 1)`` for these i.i.d.
events yields the pivots ``rho_0 < rho_1 < ...`` and the i.i.d. increments
``(S_k, tau_{S_k})``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .fpp_core import geodesic, time_and_length, travel_time
from .passage_times import Distribution, Truncated, WeightField
from .periodic_graph import EdgeRef, PeriodCell, VertexRef, shortest_cell_path
from .rng import STREAM_DELTA, counter_uniforms

__all__ = [
    "ParameterError",
    "RegenParams",
    "choose_params",
    "optimize_params",
    "BlockTemplate",
    "block_template",
    "detect_A",
    "scan_A",
    "force_A",
    "RegenDecomposition",
    "scan_regenerations",
    "stopping_time_nu",
    "SplitCheck",
    "verify_splitting",
]


class ParameterError(ValueError):
    """Raised when regeneration thresholds are infeasible for a law."""


@dataclass(frozen=True)
class RegenParams:
    """Thresholds ``t' < t''`` and the block half-length ``M``."""

    t_lo: float
    t_hi: float
    M: int
    p_A: float = math.nan

    @property
    def period(self) -> int:
        """Grid spacing ``2M + 1``."""
        return 2 * self.M + 1

    def to_dict(self) -> dict:
        return {"t_lo": self.t_lo, "t_hi": self.t_hi, "M": self.M, "p_A": self.p_A}


def block_half_length(t_lo: float, t_hi: float, L: int) -> int:
    """``M = floor(t' L / (t'' - t')) + 1``."""
    return int(math.floor(t_lo * L / (t_hi - t_lo))) + 1


def _validate(dist: Distribution, t_lo: float, t_hi: float):
    m, Mx = dist.support()
    if not (m < t_lo < t_hi < Mx):
        raise ParameterError(f"need m_tau < t' < t'' < M_tau, got {m} < {t_lo} < {t_hi} < {Mx}")


def choose_params(dist: Distribution, cell: PeriodCell, q: float = 0.25) -> RegenParams:
    """Quantile thresholds ``t' = F^-1(q)``, ``t'' = F^-1(1 - q)``.

    A quantile landing on an end of the support is moved a third of the way
    towards the nearest other support point, so for atoms ``{1, 2}`` the
    thresholds become ``4/3`` and ``5/3``.

    Raises
    ------
    ParameterError
        For degenerate laws (a single support point).
    """
    if not 0 < q < 0.5:
        raise ValueError("q must lie in (0, 1/2)")
    m, Mx = dist.support()
    if not Mx > m:
        raise ParameterError("degenerate passage-time law: no thresholds exist")
    t_lo = float(dist.ppf(q))
    t_hi = float(dist.ppf(1 - q))
    if t_lo <= m:
        above = float(dist.ppf(min(1.0, (float(dist.cdf(m)) + 1.0) / 2)))
        t_lo = m + (above - m) / 3
    if t_hi >= Mx:
        below = float(dist.ppf(max(1e-300, float(dist.cdf_left(Mx)) / 2)))
        t_hi = Mx - (Mx - below) / 3
    if t_hi <= t_lo:
        raise ParameterError("quantile thresholds collapse; choose a smaller q")
    _validate(dist, t_lo, t_hi)
    M = block_half_length(t_lo, t_hi, cell.L)
    p = p_A_closed_form(dist, cell, t_lo, t_hi, M)
    return RegenParams(t_lo, t_hi, M, p)


def block_sizes(cell: PeriodCell, M: int) -> tuple[int, int]:
    """``(|Ehat_n|, |E_n|)`` for half-length ``M``."""
    gamma = shortest_cell_path(cell, 2 * M)
    n_hat = (len(gamma) - 1) + 2 * cell.L
    n_all = (2 * M + 1) * cell.L + 2 * M * len(cell.J)
    return n_hat, n_all


def p_A_closed_form(dist: Distribution, cell: PeriodCell, t_lo: float, t_hi: float, M: int) -> float:
    """``P(A_n) = F(t')^|Ehat| P(tau >= t'')^(|E| - |Ehat|)``."""
    n_hat, n_all = block_sizes(cell, M)
    a = float(dist.cdf(t_lo))
    b = 1.0 - float(dist.cdf_left(t_hi))
    return a**n_hat * b ** (n_all - n_hat)


def optimize_params(dist: Distribution, cell: PeriodCell, max_M: int = 40, grid: int = 600, bounds=None) -> RegenParams:
    """Thresholds maximising the closed-form ``P(A_n)``.

    For each target ``M`` the smallest admissible ``t''`` is
    ``t' (1 + L / M)``; ``t'`` runs over a quantile grid plus the atoms.
    ``bounds`` optionally restricts both thresholds to an interval.
    """
    m, Mx = dist.support()
    lo_b, hi_b = (m, Mx) if bounds is None else bounds
    qs = (np.arange(1, grid) / grid).tolist()
    cands = {float(dist.ppf(q)) for q in qs}
    for t, _ in dist.atoms():
        cands.add(t)
        cands.add(t + 1e-9 * max(1.0, t))
    cands = sorted(c for c in cands if max(m, lo_b) < c < min(Mx, hi_b) or (c > max(m, lo_b) and c < min(Mx, hi_b)))
    L = cell.L
    sizes = {M: block_sizes(cell, M) for M in range(1, max_M + 1)}
    best = None
    for t_lo in cands:
        a = float(dist.cdf(t_lo))
        if a <= 0:
            continue
        for M in range(1, max_M + 1):
            if L == 0:
                t_hi = t_lo + 0.5 * (min(Mx, hi_b) - t_lo) if math.isfinite(min(Mx, hi_b)) else t_lo + 1.0
            else:
                t_hi = t_lo * (1 + L / M) * (1 + 1e-9) + 1e-12
            if not t_lo < t_hi < min(Mx, hi_b):
                continue
            if block_half_length(t_lo, t_hi, L) != M:
                continue
            n_hat, n_all = sizes[M]
            b = 1.0 - float(dist.cdf_left(t_hi))
            if b <= 0:
                continue
            lp = n_hat * math.log(a) + (n_all - n_hat) * math.log(b)
            if best is None or lp > best[0]:
                best = (lp, t_lo, t_hi, M)
            if L == 0:
                break
    if best is None:
        raise ParameterError("no admissible thresholds")
    _, t_lo, t_hi, M = best
    return RegenParams(t_lo, t_hi, M, math.exp(best[0]))


@dataclass(frozen=True)
class BlockTemplate:
    """Edge masks of a block relative to its first level.

    ``cheap[r, s]`` marks ``Ehat`` edges and ``costly[r, s]`` the rest of
    ``E_n`` at relative level ``r``; ``gamma`` is the block path and
    ``pivot_up`` / ``pivot_down`` index the first / last vertex of ``gamma``
    on the middle level.
    """

    M: int
    gamma: tuple[VertexRef, ...]
    cheap: np.ndarray
    costly: np.ndarray
    pivot_up: int
    pivot_down: int
    gamma_edges: tuple[EdgeRef, ...]

    def pivot(self, n: int, direction: int = 1) -> VertexRef:
        """Pivot vertex of the block at level ``n``."""
        v = self.gamma[self.pivot_up if direction > 0 else self.pivot_down]
        return VertexRef(v.level + n, v.index)

    def special_edge(self, n: int, direction: int = 1) -> EdgeRef:
        """Edge of ``gamma_n`` leaving the pivot in the travel direction."""
        if direction > 0:
            e = self.gamma_edges[self.pivot_up]
        else:
            e = self.gamma_edges[self.pivot_down - 1]
        return EdgeRef(e.level + n, e.slot)


def block_template(cell: PeriodCell, M: int) -> BlockTemplate:
    gamma = shortest_cell_path(cell, 2 * M)
    S = cell.n_slots
    in_E = np.zeros((2 * M + 1, S), dtype=bool)
    in_E[:, : cell.L] = True
    in_E[: 2 * M, cell.L :] = True
    cheap = np.zeros_like(in_E)
    cheap[0, : cell.L] = True
    cheap[2 * M, : cell.L] = True
    gedges = tuple(cell.edge_between(a, b) for a, b in zip(gamma[:-1], gamma[1:]))
    for e in gedges:
        cheap[e.level, e.slot] = True
    mids = [k for k, v in enumerate(gamma) if v.level == M]
    return BlockTemplate(M, tuple(gamma), cheap, in_E & ~cheap, mids[0], mids[-1], gedges)


def _block_ok(W: np.ndarray, tmpl: BlockTemplate, params: RegenParams, skip=None) -> np.ndarray:
    """``A`` indicator for block starts ``0 .. len(W) - 2M - 1`` of ``W``."""
    c = W <= params.t_lo
    x = W >= params.t_hi
    if skip is not None:
        c = c.copy()
        x = x.copy()
        r, s = skip
        c[:, s] = True  # the flagged slot is only constrained at relative row r
        x[:, s] = True
    n_blocks = W.shape[0] - 2 * tmpl.M
    ok = np.ones(n_blocks, dtype=bool)
    for r in range(2 * tmpl.M + 1):
        hat = tmpl.cheap[r]
        rest = tmpl.costly[r]
        if skip is not None and r != skip[0]:
            # restore the constraint on the skipped slot for other rows
            row = np.all(np.where(hat, W <= params.t_lo, True), axis=1) & np.all(np.where(rest, W >= params.t_hi, True), axis=1)
        else:
            row = np.all(np.where(hat, c, True), axis=1) & np.all(np.where(rest, x, True), axis=1)
        ok &= row[r : r + n_blocks]
    return ok


def scan_A(
    cell: PeriodCell,
    wfield: WeightField,
    params: RegenParams,
    starts: np.ndarray,
    *,
    exclude_special: int = 0,
    template: BlockTemplate | None = None,
    chunk: int = 1 << 18,
) -> np.ndarray:
    """Vectorised ``A_n`` indicators for many block starts.

    ``exclude_special`` set to ``+1`` or ``-1`` drops the constraint on the
    special edge of that direction (the event ``A*_n``).  ``template``
    replaces the standard block masks (same ``M`` as ``params``).
    """
    starts = np.asarray(starts, dtype=np.int64)
    out = np.zeros(len(starts), dtype=bool)
    if len(starts) == 0:
        return out
    tmpl = block_template(cell, params.M) if template is None else template
    skip = None
    if exclude_special:
        e = tmpl.special_edge(0, exclude_special)
        skip = (e.level, e.slot)
    order = np.argsort(starts)
    s_sorted = starts[order]
    i = 0
    while i < len(s_sorted):
        j = np.searchsorted(s_sorted, s_sorted[i] + chunk, side="left")
        j = max(j, i + 1)
        lo = int(s_sorted[i])
        hi = int(s_sorted[j - 1]) + 2 * params.M
        W = wfield.level_weights(cell, lo, hi)
        ok = _block_ok(W, tmpl, params, skip)
        out[order[i:j]] = ok[s_sorted[i:j] - lo]
        i = j
    return out


def detect_A(cell: PeriodCell, wfield: WeightField, params: RegenParams, n: int) -> bool:
    """Whether ``A_n`` occurs (boundary values count as occurring)."""
    return bool(scan_A(cell, wfield, params, np.array([n]))[0])


def force_A(
    cell: PeriodCell, dist: Distribution, params: RegenParams, n: int, seed: int, base: WeightField | None = None
) -> WeightField:
    """Field conditioned on ``A_n``: block weights drawn from the conditional laws."""
    tmpl = block_template(cell, params.M)
    base = WeightField(dist, seed) if base is None else base
    lo_law = Truncated(dist, 0.0, float(dist.cdf(params.t_lo)))
    hi_law = Truncated(dist, float(dist.cdf_left(params.t_hi)), 1.0)
    U = counter_uniforms(seed ^ 0x0F0F0F, cell.slot_keys[None, :], np.arange(n, n + 2 * params.M + 1)[:, None], 7)
    ov = {}
    for r, s in zip(*np.nonzero(tmpl.cheap)):
        ov[EdgeRef(n + int(r), int(s))] = float(lo_law.ppf(U[r, s]))
    for r, s in zip(*np.nonzero(tmpl.costly)):
        ov[EdgeRef(n + int(r), int(s))] = float(hi_law.ppf(U[r, s]))
    return base.with_overrides(ov)


def draw_delta(seed: int, M: int) -> int:
    """``Delta`` uniform on ``{0, .., 2M}`` from an auxiliary stream."""
    u = float(counter_uniforms(seed, 0x4445, 0, STREAM_DELTA))
    return int(u * (2 * M + 1))


@dataclass
class RegenDecomposition:
    """Pivots and increments of one realisation.

    Attributes
    ----------
    rho : ndarray
        Pivot levels ``rho_0 < rho_1 < ...``.
    pivots : list of VertexRef
    S : ndarray
        ``S_k = rho_k - rho_{k-1}`` for ``k >= 1``.
    tau : ndarray or None
        ``tau_{S_k} = T(vhat_{rho_{k-1}}, vhat_{rho_k})``.
    N : ndarray or None
        Geodesic edge counts between consecutive pivots.
    T_first, N_first : float
        ``T(I, vhat_{rho_0})`` and its geodesic length.
    blocks_scanned, blocks_hit : int
        Grid blocks examined and those where ``A`` occurred.
    """

    params: RegenParams
    delta: int
    grid_start: int
    rho: np.ndarray
    pivots: list[VertexRef]
    S: np.ndarray
    tau: np.ndarray | None
    N: np.ndarray | None
    T_first: float
    N_first: float
    blocks_scanned: int
    blocks_hit: int
    all_certified: bool = True

    @property
    def p_hat(self) -> float:
        """Empirical ``P(A)`` over the scanned grid blocks."""
        return self.blocks_hit / self.blocks_scanned if self.blocks_scanned else math.nan

    def nu(self, n: int) -> int:
        """``nu(n) = min{m : rho_m >= n + M}``."""
        return stopping_time_nu(self, n)

    def to_csv(self, path) -> None:
        """Write ``k, rho_k, S_k, tau_S_k`` (``k = 0`` has empty increments)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            cols = ["k", "rho_k", "S_k", "tau_S_k"] + (["N_S_k"] if self.N is not None else [])
            w.writerow(cols)
            for k, r in enumerate(self.rho):
                row = [k, int(r)]
                if k == 0:
                    row += ["", ""] + ([""] if self.N is not None else [])
                else:
                    row += [int(self.S[k - 1]), "" if self.tau is None else repr(float(self.tau[k - 1]))]
                    if self.N is not None:
                        row.append(int(self.N[k - 1]))
                w.writerow(row)


def scan_regenerations(
    cell: PeriodCell,
    wfield: WeightField,
    params: RegenParams,
    I,
    up_to_level: int,
    *,
    delta: int | str | None = None,
    times: bool = True,
    lengths: bool = False,
    max_increments: int | None = None,
) -> RegenDecomposition:
    """Scan the grid above ``I`` for regenerations up to a level.

    Parameters
    ----------
    delta : int, "uniform" or None
        Grid offset ``Delta``; ``"uniform"`` draws it from the auxiliary
        stream, ``None`` means 0.
    times : bool
        Compute ``tau_{S_k}`` (one certified passage time per increment).
    lengths : bool
        Also compute geodesic lengths between pivots.
    max_increments : int, optional
        Stop after this many increments.
    """
    Is = [VertexRef(*v) for v in ([I] if isinstance(I, tuple) and isinstance(I[0], (int, np.integer)) else I)]
    M = params.M
    if delta is None:
        delta = 0
    elif delta == "uniform":
        delta = draw_delta(wfield.seed, M)
    rho_I = max(v.level for v in Is)
    g0 = rho_I + int(delta)
    starts = np.arange(g0, up_to_level - 2 * M + 1, 2 * M + 1)
    tmpl = block_template(cell, M)
    hits = starts[scan_A(cell, wfield, params, starts)]
    if max_increments is not None:
        hits = hits[: max_increments + 1]
        scanned = int(np.searchsorted(starts, hits[-1]) + 1) if len(hits) else len(starts)
    else:
        scanned = len(starts)
    rho = hits + M
    pivots = [tmpl.pivot(int(n)) for n in hits]
    S = np.diff(rho)
    tau = N = None
    Tf = Nf = math.nan
    cert = True
    if (times or lengths) and len(rho):
        if lengths:
            Tf, Nf, cert = time_and_length(cell, wfield, Is, pivots[0])
        else:
            tt = travel_time(cell, wfield, Is, pivots[0])
            Tf, cert = tt.value, tt.certified
        tau = np.empty(len(S))
        N = np.empty(len(S), dtype=np.int64) if lengths else None
        for k in range(len(S)):
            win = (int(rho[k]) - M, int(rho[k + 1]) + M)
            if lengths:
                tau[k], N[k], ok = time_and_length(cell, wfield, pivots[k], pivots[k + 1], window=win)
            else:
                r = travel_time(cell, wfield, pivots[k], pivots[k + 1], window=win)
                tau[k], ok = r.value, r.certified
            cert &= ok
    return RegenDecomposition(params, int(delta), int(g0), rho, pivots, S, tau, N, Tf, Nf, scanned, len(hits), bool(cert))


def stopping_time_nu(dec: RegenDecomposition, n: int) -> int:
    """Index of the first pivot at or beyond level ``n + M``.

    Raises
    ------
    ValueError
        If the scan did not reach that far.
    """
    k = int(np.searchsorted(dec.rho, n + dec.params.M, side="left"))
    if k >= len(dec.rho):
        raise ValueError("scan too short for nu(n)")
    return k


@dataclass(frozen=True)
class SplitCheck:
    """Outcome of a splitting check at a block."""

    occurred: bool
    T_uv: float
    T_split: float
    through_pivot: bool
    certified: bool

    @property
    def ok(self) -> bool:
        tol = 1e-9 * max(1.0, abs(self.T_uv))
        return self.occurred and abs(self.T_uv - self.T_split) <= tol and self.through_pivot


def verify_splitting(cell: PeriodCell, wfield: WeightField, params: RegenParams, n: int, u, v) -> SplitCheck:
    """Check ``T(u, v) = T(u, vhat) + T(vhat, v)`` and that the geodesic visits ``vhat``.

    ``u`` must lie at level ``<= n`` and ``v`` at level ``>= n + 2M``.
    """
    u, v = VertexRef(*u), VertexRef(*v)
    if not (u.level <= n and v.level >= n + 2 * params.M):
        raise ValueError("u must be at level <= n and v at level >= n + 2M")
    tmpl = block_template(cell, params.M)
    piv = tmpl.pivot(n)
    occ = detect_A(cell, wfield, params, n)
    a = travel_time(cell, wfield, u, v)
    b = travel_time(cell, wfield, u, piv)
    c = travel_time(cell, wfield, piv, v)
    g = geodesic(cell, wfield, u, v)
    return SplitCheck(occ, a.value, b.value + c.value, piv in g.vertices, a.certified and b.certified and c.certified and g.certified)
