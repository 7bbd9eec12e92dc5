"""Estimators of the time and length constants and related studies.

The constants are ratio estimators over the i.i.d. regeneration increments
``(S_k, tau_{S_k}, N_k)``:

* ``mu = E[tau_S] / E[S]`` and ``sigma^2 = Var(tau_S - mu S) / E[S]``;
* ``alpha`` and ``sigma_N^2`` likewise with the geodesic lengths ``N_k``.

Standard errors come from a block bootstrap over increments.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .fpp_core import Window, _boundary_bound, geodesic, travel_time
from .passage_times import Distribution, WeightField
from .periodic_graph import PeriodCell, VertexRef, build_tube
from .regeneration import (
    RegenDecomposition,
    RegenParams,
    block_template,
    optimize_params,
    scan_A,
    scan_regenerations,
)
from .rng import derive_seeds

__all__ = [
    "EstimationError",
    "ConstantsEstimate",
    "estimate_constants",
    "estimate_from_field",
    "InfiniteGeodesic",
    "build_gamma_star",
    "FrequencyResult",
    "visit_frequencies",
    "mu_vs_K_study",
    "continuity_study",
    "worker_count",
]


class EstimationError(RuntimeError):
    """Raised when there is too little data for an estimate."""


def worker_count() -> int:
    """Parallelism cap from ``FPP_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("FPP_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class ConstantsEstimate:
    """Plug-in constants with bootstrap standard errors."""

    mu: float
    sigma2: float
    alpha: float
    sigmaN2: float
    se_mu: float
    se_sigma2: float
    se_alpha: float
    se_sigmaN2: float
    mu_S: float
    se_mu_S: float
    n_increments: int

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def sigmaN(self) -> float:
        return math.sqrt(self.sigmaN2) if math.isfinite(self.sigmaN2) else math.nan

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio_and_var(S: np.ndarray, X: np.ndarray) -> tuple[float, float]:
    r = X.sum(axis=-1) / S.sum(axis=-1)
    resid = X - r[..., None] * S
    v = resid.var(axis=-1) / S.mean(axis=-1)
    return r, v


def estimate_constants(
    S: Sequence[float],
    tau: Sequence[float],
    N: Sequence[float] | None = None,
    *,
    n_boot: int = 400,
    block: int = 1,
    seed: int = 0,
    min_increments: int = 30,
) -> ConstantsEstimate:
    """Ratio estimators of ``mu, sigma^2`` (and ``alpha, sigma_N^2``).

    Parameters
    ----------
    S, tau : sequences
        Level gaps and passage times between consecutive pivots.
    N : sequence, optional
        Geodesic edge counts between consecutive pivots.
    n_boot : int
        Bootstrap resamples for standard errors.
    block : int
        Bootstrap block length; increments are i.i.d. so 1 is exact.
    min_increments : int
        Minimum sample size.

    Examples
    --------
    >>> e = estimate_constants([3] * 40, [3, 9] * 20)
    >>> round(e.mu, 12), round(e.sigma2, 12)
    (2.0, 3.0)
    """
    S = np.asarray(S, dtype=float)
    tau = np.asarray(tau, dtype=float)
    n = len(S)
    if n < min_increments:
        raise EstimationError(f"need at least {min_increments} increments, got {n}")
    if len(tau) != n or (N is not None and len(N) != n):
        raise ValueError("increment arrays differ in length")
    mu, s2 = _ratio_and_var(S, tau)
    rng = np.random.default_rng(seed)
    nb = math.ceil(n / block)
    starts = rng.integers(0, n - block + 1, size=(n_boot, nb))
    idx = (starts[:, :, None] + np.arange(block)[None, None, :]).reshape(n_boot, -1)[:, :n]
    Sb = S[idx]
    mub, s2b = _ratio_and_var(Sb, tau[idx])
    if N is not None:
        N = np.asarray(N, dtype=float)
        al, sN2 = _ratio_and_var(S, N)
        alb, sN2b = _ratio_and_var(Sb, N[idx])
        se_al, se_sN2 = float(alb.std(ddof=1)), float(sN2b.std(ddof=1))
    else:
        al = sN2 = se_al = se_sN2 = math.nan
    return ConstantsEstimate(
        float(mu),
        float(s2),
        float(al),
        float(sN2),
        float(mub.std(ddof=1)),
        float(s2b.std(ddof=1)),
        se_al,
        se_sN2,
        float(S.mean()),
        float(S.std(ddof=1) / math.sqrt(n)),
        n,
    )


def estimate_from_field(
    cell: PeriodCell,
    dist: Distribution,
    seed: int,
    n_increments: int,
    *,
    params: RegenParams | None = None,
    lengths: bool = True,
    max_levels: int = 10**9,
) -> tuple[RegenDecomposition, ConstantsEstimate]:
    """Scan one long field until ``n_increments`` increments are collected."""
    params = optimize_params(dist, cell) if params is None else params
    wf = WeightField(dist, seed)
    expected = (n_increments + 2) * params.period / max(params.p_A, 1e-300)
    upto = int(min(max_levels, max(expected * 1.15, 10 * params.period)))
    while True:
        dec = scan_regenerations(cell, wf, params, [VertexRef(0, 1)], upto, times=False)
        if len(dec.S) >= n_increments or upto >= max_levels:
            break
        upto = int(min(max_levels, upto * 1.5))
    if len(dec.S) < n_increments:
        raise EstimationError(f"only {len(dec.S)} increments within {upto} levels (p_A ~ {dec.p_hat:.3g})")
    dec = scan_regenerations(cell, wf, params, [VertexRef(0, 1)], upto, times=True, lengths=lengths, max_increments=n_increments)
    return dec, estimate_constants(dec.S, dec.tau, dec.N if lengths else None, seed=seed)


# -- the infinite geodesic -------------------------------------------------


@dataclass
class InfiniteGeodesic:
    """Finite stretch of ``gamma*`` between the outermost pivots found.

    Attributes
    ----------
    rho : ndarray
        Pivot levels (all grid regenerations between the bracketing ones).
    pivots : list of VertexRef
    segments : list of tuple of VertexRef
        Per-block geodesics ``gamma(vhat_{rho_{k-1}}, vhat_{rho_k})``.
    tau, S : ndarray
        Block passage times (from Dijkstra) and level gaps.
    certified : bool
    """

    cell: PeriodCell
    params: RegenParams
    rho: np.ndarray
    pivots: list
    segments: list
    tau: np.ndarray
    S: np.ndarray
    seg_weights: list
    certified: bool

    @property
    def vertices(self) -> list[VertexRef]:
        out = list(self.segments[0])
        for seg in self.segments[1:]:
            if seg[0] != out[-1]:
                raise AssertionError("consecutive blocks do not share their pivot")
            out.extend(seg[1:])
        return out


def _find_blocks(cell, wf, params, lo, hi, direction, budget, chunk=1 << 16):
    """First grid block with ``A`` beyond ``lo``/``hi`` in a direction."""
    P = params.period
    scanned = 0
    if direction > 0:
        k0 = math.ceil(hi / P)
    else:
        k0 = math.floor((lo - 2 * params.M) / P)
    while scanned < budget:
        ks = k0 + direction * np.arange(scanned, scanned + chunk)
        hit = scan_A(cell, wf, params, ks * P)
        if hit.any():
            return int(ks[np.argmax(hit)] * P)
        scanned += chunk
    return None


def build_gamma_star(
    cell: PeriodCell,
    wfield: WeightField,
    params: RegenParams,
    lo: int,
    hi: int,
    *,
    budget_blocks: int = 10**7,
) -> InfiniteGeodesic:
    """Stitch ``gamma*`` over levels ``[lo, hi]`` from block geodesics.

    The grid is ``n_k = k (2M + 1)`` in both directions (the negative
    direction is the same grid read downwards).  Regenerations bracketing
    ``[lo, hi]`` are searched outwards within ``budget_blocks`` grid blocks
    per side.

    Raises
    ------
    EstimationError
        If no bracketing regeneration is found within the budget.
    """
    P, M = params.period, params.M
    up = _find_blocks(cell, wfield, params, lo, hi, +1, budget_blocks)
    down = _find_blocks(cell, wfield, params, lo, hi, -1, budget_blocks)
    if up is None or down is None:
        raise EstimationError("no bracketing regeneration within the scan budget")
    ks = np.arange(down // P, up // P + 1)
    hits = ks[scan_A(cell, wfield, params, ks * P)] * P
    tmpl = block_template(cell, M)
    pivots = [tmpl.pivot(int(n)) for n in hits]
    rho = hits + M
    segs, taus, wts = [], [], []
    cert = True
    for a, b in zip(pivots[:-1], pivots[1:]):
        g = geodesic(cell, wfield, a, b, margin=M + 1)
        t = travel_time(cell, wfield, a, b, window=(a.level - M, b.level + M))
        cert &= g.certified and t.certified
        segs.append(g.vertices)
        taus.append(t.value)
        wts.append(wfield.weights_of(cell, g.edges(cell)))
    return InfiniteGeodesic(cell, params, rho, pivots, segs, np.array(taus), np.diff(rho), wts, bool(cert))


@dataclass(frozen=True)
class FrequencyResult:
    """Visit frequencies of ``gamma*`` per cell position.

    ``freq[i - 1]`` estimates ``P((n, i) in gamma*)``; ``alpha`` is their
    sum and ``mu`` the mean weight of ``gamma*`` edges per level.
    """

    freq: np.ndarray
    se_freq: np.ndarray
    alpha: float
    se_alpha: float
    mu: float
    se_mu: float
    n_levels: int
    n_blocks: int


def _ratio_se(X: np.ndarray, S: np.ndarray) -> float:
    """Delta-method standard error of ``sum X / sum S`` for i.i.d. blocks."""
    n = len(S)
    r = X.sum() / S.sum()
    d = X - r * S
    return float(math.sqrt(np.sum(d**2) / (n - 1) / n) / S.mean()) if n > 1 else math.nan


def visit_frequencies(gs: InfiniteGeodesic, min_levels: int = 100) -> FrequencyResult:
    """Per-position visit frequencies and edge-weight density of ``gamma*``.

    Each block contributes the vertices of its geodesic after its first
    pivot, so the blocks tile ``gamma*`` without overlap; standard errors
    treat blocks as i.i.d. units (they are, by regeneration).
    """
    K = gs.cell.K
    S = gs.S.astype(float)
    if S.sum() < min_levels:
        raise EstimationError("gamma* stretch shorter than the minimum span")
    counts = np.zeros((len(gs.segments), K))
    wsum = np.zeros(len(gs.segments))
    for k, seg in enumerate(gs.segments):
        idx = np.array([v.index for v in seg[1:]])
        counts[k] = np.bincount(idx - 1, minlength=K)
        wsum[k] = gs.seg_weights[k].sum()
    tot = S.sum()
    freq = counts.sum(axis=0) / tot
    se_f = np.array([_ratio_se(counts[:, i], S) for i in range(K)])
    nvis = counts.sum(axis=1)
    return FrequencyResult(
        freq,
        se_f,
        float(nvis.sum() / tot),
        _ratio_se(nvis, S),
        float(wsum.sum() / tot),
        _ratio_se(wsum, S),
        int(tot),
        len(S),
    )


# -- comparison studies ------------------------------------------------------


def _mu_K_job(args):
    d, Ks, dist, seed, n = args
    wf = WeightField(dist, int(seed))
    out = []
    for K in Ks:
        cell = build_tube(K, d)
        r = travel_time(cell, wf, VertexRef(0, 1), VertexRef(n, 1))
        out.append((r.value, r.certified))
    return out


def _pool_map(fn, jobs, workers):
    if workers <= 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def mu_vs_K_study(
    d: int,
    Ks: Sequence[int],
    dist: Distribution,
    replicas: int,
    n: int,
    seed: int,
    workers: int | None = None,
) -> dict:
    """Compare ``mu_K`` across nested tubes sharing one weight field.

    Tube cells key edges by lattice position, so for a fixed seed the
    ``(K, d)``-tube is a subgraph of the ``(K + 1, d)``-tube carrying the
    same weights, and ``T_K >= T_{K+1}`` pointwise.

    Returns
    -------
    dict
        ``rows`` (one per ``K`` with ``mu_hat``, ``ci_lo``, ``ci_hi``,
        ``se``), ``T`` (replicas x len(Ks) array), ``min_diffs`` and
        ``all_certified``.
    """
    if d < 2:
        raise ValueError("d must be at least 2")
    Ks = list(Ks)
    seeds = derive_seeds(seed, replicas)
    res = _pool_map(_mu_K_job, [(d, tuple(Ks), dist, s, n) for s in seeds], workers or worker_count())
    T = np.array([[v for v, _ in r] for r in res])
    cert = all(c for r in res for _, c in r)
    rows = []
    tq = stats.t.ppf(0.975, replicas - 1)
    for j, K in enumerate(Ks):
        x = T[:, j] / n
        se = x.std(ddof=1) / math.sqrt(replicas)
        rows.append({"K": K, "mu_hat": float(x.mean()), "se": float(se), "ci_lo": float(x.mean() - tq * se), "ci_hi": float(x.mean() + tq * se)})
    diffs = T[:, :-1] - T[:, 1:]
    return {"rows": rows, "T": T, "min_diffs": diffs.min(axis=0) if len(Ks) > 1 else np.array([]), "all_certified": cert}


def _continuity_job(args):
    cell, dists, seed, n = args
    out = []
    for dist in dists:
        wf = WeightField(dist, int(seed))
        r = travel_time(cell, wf, VertexRef(0, 1), VertexRef(n, 1))
        out.append(r.value)
    return out


def continuity_study(
    cell: PeriodCell,
    dists: Sequence[tuple[str, Distribution]],
    limit: tuple[str, Distribution],
    n: int,
    replicas: int,
    seed: int,
    workers: int | None = None,
) -> dict:
    """Convergence table of ``mu_hat(F_m)`` under inverse-CDF coupling.

    Every field uses the same uniforms ``U_e``, so weight ``e`` equals
    ``F_m^-1(U_e)`` for each law in the sequence.

    Returns
    -------
    dict
        ``rows`` with ``label``, ``mu_hat``, ``se``, ``ci_lo``, ``ci_hi`` and
        ``max_weight_gap`` (largest ``|F_m^-1(U) - F_inf^-1(U)|`` on a probe
        set of uniforms), the limit row under ``limit``.
    """
    labels = [l for l, _ in dists] + [limit[0]]
    laws = [d for _, d in dists] + [limit[1]]
    seeds = derive_seeds(seed, replicas)
    res = np.array(_pool_map(_continuity_job, [(cell, tuple(laws), s, n) for s in seeds], workers or worker_count()))
    probe = (np.arange(10_000) + 0.5) / 10_000
    lim_q = limit[1].ppf(probe)
    tq = stats.t.ppf(0.975, replicas - 1)
    rows = []
    for j, (lab, law) in enumerate(zip(labels, laws)):
        x = res[:, j] / n
        se = x.std(ddof=1) / math.sqrt(replicas)
        rows.append(
            {
                "label": lab,
                "mu_hat": float(x.mean()),
                "se": float(se),
                "ci_lo": float(x.mean() - tq * se),
                "ci_hi": float(x.mean() + tq * se),
                "max_weight_gap": float(np.max(np.abs(law.ppf(probe) - lim_q))),
            }
        )
    return {"rows": rows[:-1], "limit": rows[-1], "T": res}


def write_rows_csv(rows: list[dict], path) -> None:
    """Write a list of flat dicts as CSV."""
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
