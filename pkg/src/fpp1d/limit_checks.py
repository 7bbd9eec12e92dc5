"""Desk-scale checks of the limit theorems for passage times.

Every check reduces a :class:`SampleEnsemble` (passage times and geodesic
lengths from ``I`` to ``v_{n,i}`` over independent fields) to a
:class:`Verdict`.  Each hypothesis test also has a calibration mode
(:func:`calibrate`) that feeds it synthetic data for which the null is true,
so that its rejection rate can be compared with the nominal level.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .fpp_core import travel_profile
from .passage_times import Distribution, WeightField
from .periodic_graph import PeriodCell, VertexRef
from .rng import derive_seeds

__all__ = [
    "Verdict",
    "SampleEnsemble",
    "generate_ensemble",
    "lln_check",
    "clt_check",
    "lil_control",
    "lil_check",
    "donsker_paths",
    "donsker_check",
    "drift_check",
    "chi2_geometric",
    "lag1_check",
    "z_check",
    "calibrate",
    "CALIBRATED_TESTS",
    "standard_levels",
    "ks2_check",
]

Z_1PCT = float(stats.norm.ppf(0.995))
Z_1PCT_ONE_SIDED = float(stats.norm.ppf(0.99))


@dataclass
class Verdict:
    """Outcome of one check; serialises to ``{check, statistic, threshold, pass}``."""

    check: str
    statistic: float
    threshold: float
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"check": self.check, "statistic": _clean(self.statistic), "threshold": _clean(self.threshold), "pass": bool(self.passed)}
        out.update({k: _clean(v) for k, v in self.details.items()})
        return out


def _clean(v):
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, np.ndarray):
        return [_clean(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


# -- ensembles -------------------------------------------------------------------


@dataclass
class SampleEnsemble:
    """Passage times (and lengths) from ``I`` to ``(n, index)`` for stored levels.

    ``T[r, j]`` belongs to replica ``r`` and level ``levels[j]``.
    """

    levels: np.ndarray
    T: np.ndarray
    N: np.ndarray | None
    seeds: np.ndarray
    index: int
    certified: np.ndarray

    @property
    def R(self) -> int:
        return self.T.shape[0]

    def col(self, n: int, lengths: bool = False) -> np.ndarray:
        j = int(np.searchsorted(self.levels, n))
        if j >= len(self.levels) or self.levels[j] != n:
            raise KeyError(f"level {n} not stored in the ensemble")
        return (self.N if lengths else self.T)[:, j]

    def subset(self, R: int) -> "SampleEnsemble":
        return SampleEnsemble(self.levels, self.T[:R], None if self.N is None else self.N[:R], self.seeds[:R], self.index, self.certified[:R])

    def to_csv(self, path, levels: Sequence[int] | None = None) -> None:
        """Raw samples in long format ``replica, level, T[, N]``."""
        levels = self.levels if levels is None else levels
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replica", "level", "T"] + (["N"] if self.N is not None else []))
            for n in levels:
                t = self.col(n)
                nn = self.col(n, True) if self.N is not None else None
                for r in range(self.R):
                    w.writerow([r, int(n), repr(float(t[r]))] + ([int(nn[r])] if nn is not None else []))


def _ensemble_job(args):
    cell, dist, I, index, levels, seed, lengths = args
    prof = travel_profile(cell, WeightField(dist, int(seed)), I, levels, lengths=lengths)
    T = prof.T[:, index - 1].copy()
    N = prof.N[:, index - 1].copy() if lengths else None
    return T, N, prof.certified


def generate_ensemble(
    cell: PeriodCell,
    dist: Distribution,
    levels: Sequence[int],
    replicas: int,
    seed: int,
    *,
    I=(VertexRef(0, 1),),
    index: int = 1,
    lengths: bool = True,
    workers: int = 1,
    progress: Callable[[int], None] | None = None,
) -> SampleEnsemble:
    """Independent replicas of ``T(I, v_{n,index})`` for the given levels.

    Replica ``r`` uses the ``r``-th seed derived from ``seed``; results are
    ordered by replica index regardless of the worker count.
    """
    levels = np.unique(np.asarray(levels, dtype=np.int64))
    seeds = derive_seeds(seed, replicas)
    jobs = [(cell, dist, tuple(VertexRef(*v) for v in I), index, levels, int(s), lengths) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(_ensemble_job, jobs, chunksize=max(1, replicas // (8 * workers))))
    else:
        res = []
        for k, j in enumerate(jobs):
            res.append(_ensemble_job(j))
            if progress is not None:
                progress(k)
    T = np.array([r[0] for r in res])
    N = np.array([r[1] for r in res]) if lengths else None
    cert = np.array([r[2] for r in res])
    return SampleEnsemble(levels, T, N, seeds, index, cert)


# -- generic tests ---------------------------------------------------------------


def z_check(name: str, estimate: float, target: float, se: float, z: float = 3.0, **details) -> Verdict:
    """``|estimate - target| <= z * se``."""
    stat = abs(estimate - target)
    thr = z * se
    return Verdict(name, stat, thr, bool(stat <= thr), {"estimate": estimate, "target": target, "se": se, **details})


def var_se(x: np.ndarray) -> float:
    """Asymptotic standard error of the sample variance."""
    x = np.asarray(x, dtype=float)
    c = x - x.mean()
    m2 = np.mean(c**2)
    m4 = np.mean(c**4)
    return float(math.sqrt(max(m4 - m2**2, 0.0) / len(x)))


def cov_se(x: np.ndarray, y: np.ndarray) -> float:
    """Asymptotic standard error of the sample covariance."""
    p = (x - x.mean()) * (y - y.mean())
    return float(p.std(ddof=1) / math.sqrt(len(x)))


def lag1_check(x: Sequence[float], name: str = "lag1", z: float = 3.0) -> Verdict:
    """Lag-one sample autocorrelation within ``z / sqrt(n)``."""
    x = np.asarray(x, dtype=float)
    r = float(np.corrcoef(x[:-1], x[1:])[0, 1])
    thr = z / math.sqrt(len(x))
    return Verdict(name, abs(r), thr, abs(r) <= thr, {"correlation": r, "n": len(x)})


def chi2_geometric(k: Sequence[int], p: float | None = None, alpha: float = 0.01, bins: int = 20) -> Verdict:
    """Chi-square goodness of fit of positive integers to a geometric law.

    ``p`` defaults to the maximum-likelihood estimate ``1 / mean``; one
    degree of freedom is removed for it either way, since the scan estimate
    of ``P(A)`` is computed from the same realisation.
    """
    k = np.asarray(k, dtype=np.int64)
    if np.any(k < 1):
        raise ValueError("geometric samples must be positive integers")
    n = len(k)
    if p is None:
        p = 1.0 / k.mean()
    geo = stats.geom(p)
    qs = np.unique(np.ceil(geo.ppf(np.arange(1, bins) / bins)).astype(np.int64))
    edges = np.concatenate([[0], qs, [np.iinfo(np.int64).max]])
    probs = np.diff(np.concatenate([[0.0], geo.cdf(qs), [1.0]]))
    obs = np.array([np.sum((k > a) & (k <= b)) for a, b in zip(edges[:-1], edges[1:])])
    keep = probs > 0
    exp = probs[keep] * n
    obs = obs[keep]
    chi2 = float(np.sum((obs - exp) ** 2 / exp))
    dof = len(exp) - 2
    pval = float(stats.chi2.sf(chi2, dof))
    return Verdict("chi2_geometric", pval, alpha, pval > alpha, {"chi2": chi2, "dof": dof, "p_hat": p, "n": n})


def ks2_check(x: Sequence[float], y: Sequence[float], alpha: float = 0.01, name: str = "ks_two_sample") -> Verdict:
    """Two-sample KS test (stationarity diagnostics)."""
    r = stats.ks_2samp(x, y)
    return Verdict(name, float(r.pvalue), alpha, r.pvalue > alpha, {"ks": float(r.statistic)})


# -- LLN / CLT / LIL ---------------------------------------------------------------


def lln_check(ens: SampleEnsemble, mu_hat: float, levels: Sequence[int] = (500, 1000, 2000), lengths: bool = False) -> Verdict:
    """Deviations ``|T/n - mu_hat|``; passes when the 95th percentile shrinks in ``n``."""
    rows = []
    for n in levels:
        d = np.abs(ens.col(n, lengths) / n - mu_hat)
        rows.append({"n": int(n), "max": float(d.max()), "p95": float(np.quantile(d, 0.95))})
    p95 = [r["p95"] for r in rows]
    ok = all(b < a for a, b in zip(p95[:-1], p95[1:]))
    return Verdict("lln" + ("_N" if lengths else ""), p95[-1], p95[0], ok, {"table": rows})


def clt_check(
    values: Sequence[float],
    n: int,
    mu_hat: float | None = None,
    sigma_hat: float | None = None,
    *,
    alpha: float = 0.01,
    max_ks: float = 0.02,
    lattice: bool = False,
    seed: int = 0,
    name: str = "clt",
) -> Verdict:
    """Normality of ``(T - mu n) / (sigma sqrt(n))``.

    With ``mu_hat`` and ``sigma_hat`` given the standardisation uses them and
    the KS p-value is the classical one.  Without them the sample mean and
    standard deviation are used and the p-value is Lilliefors', which is the
    correct null distribution for estimated parameters.  Passing requires
    ``p > alpha`` and KS distance below ``max_ks``.

    ``lattice=True`` treats the sample as integer valued: its span ``h``
    (gcd of the pairwise differences; 2 for lengths on bipartite graphs) is
    detected and independent uniform(-h/2, h/2) noise is added before the
    test.  This randomised continuity correction adds variance ``h^2/12``,
    negligible against ``sigma^2 n``.
    """
    x = np.asarray(values, dtype=float)
    h = 0
    if lattice:
        xi = np.asarray(values, dtype=np.int64)
        h = int(np.gcd.reduce(np.abs(xi - xi[0]))) or 1
        x = x + np.random.default_rng(seed).uniform(-h / 2, h / 2, size=x.shape)
    if mu_hat is not None and sigma_hat is not None:
        if not sigma_hat > 0:
            raise ValueError("degenerate sigma_hat")
        z = (x - mu_hat * n) / (sigma_hat * math.sqrt(n))
        r = stats.kstest(z, "norm")
        d, p, mode = float(r.statistic), float(r.pvalue), "plug-in"
    else:
        from statsmodels.stats.diagnostic import lilliefors

        sd = x.std(ddof=1)
        if not sd > 0:
            raise ValueError("degenerate sample")
        z = (x - x.mean()) / sd
        d, p = lilliefors(z, dist="norm", pvalmethod="table")
        d, p, mode = float(d), float(p), "in-sample"
    ok = p > alpha and d < max_ks
    return Verdict(
        name,
        d,
        max_ks,
        ok,
        {"p_value": p, "alpha": alpha, "mode": mode, "skewness": float(stats.skew(z)), "excess_kurtosis": float(stats.kurtosis(z)), "R": len(x), "n": n, "lattice_span": h},
    )


def lil_statistics(paths: np.ndarray, levels: np.ndarray, mu_hat: float, sigma_hat: float, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Running max and min over ``n in [N/2, N]`` of the LIL-normalised deviation."""
    sel = (levels >= N // 2) & (levels <= N) & (levels >= 3)
    lv = levels[sel].astype(float)
    scale = sigma_hat * np.sqrt(2 * lv * np.log(np.log(lv)))
    z = (paths[:, sel] - mu_hat * lv) / scale
    return z.max(axis=1), z.min(axis=1)


def lil_control(levels: np.ndarray, N: int, R: int, eps: float = 0.5, seed: int = 0) -> float:
    """Envelope fraction for Gaussian random walks observed on the same levels."""
    levels = np.asarray(levels)
    rng = np.random.default_rng([seed, 0x11])
    top = int(levels.max())
    out = 0
    for lo in range(0, R, 1000):
        k = min(1000, R - lo)
        walks = np.cumsum(rng.standard_normal((k, top)), axis=1)
        paths = walks[:, levels - 1]
        mx, mn = lil_statistics(paths, levels, 0.0, 1.0, N)
        out += int(np.sum((mx <= 1 + eps) & (mn >= -1 - eps)))
    return out / R


def lil_check(paths: np.ndarray, levels: np.ndarray, mu_hat: float, sigma_hat: float, N: int, eps: float = 0.5, z: float = 3.0, seed: int = 0) -> Verdict:
    """Envelope sanity check on the running extremes over ``[N/2, N]``.

    The statistic is the fraction of replicas whose extremes stay inside
    ``[-1 - eps, 1 + eps]``.  The same fraction for i.i.d. standard normal
    partial sums on the same levels and replica count is the control; the
    check passes unless the data fall short of it by more than ``z``
    standard errors of the difference.  Levels must be ``>= 1``.
    """
    levels = np.asarray(levels)
    R = len(paths)
    mx, mn = lil_statistics(paths, levels, mu_hat, sigma_hat, N)
    inside = float(np.mean((mx <= 1 + eps) & (mn >= -1 - eps)))
    ctrl = lil_control(levels, N, R, eps, seed)
    pbar = (inside + ctrl) / 2
    se = math.sqrt(max(2 * pbar * (1 - pbar) / R, 1 / R**2))
    thr = ctrl - z * se
    return Verdict(
        "lil",
        inside,
        thr,
        bool(inside >= thr),
        {"envelope": [-1 - eps, 1 + eps], "control_fraction": ctrl, "median_max": float(np.median(mx)), "median_min": float(np.median(mn)), "N": N, "R": R},
    )


# -- Donsker ----------------------------------------------------------------------


def donsker_paths(ens: SampleEnsemble, n: int, mu_hat: float, sigma_hat: float, points: int = 100, lengths: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Scaled paths ``t -> (T_{floor(nt)} - mu floor(nt)) / (sigma sqrt(n))``.

    Returns the time grid ``j / points`` and an array ``(R, points + 1)``.
    """
    t = np.arange(points + 1) / points
    lv = np.floor(n * t + 1e-9).astype(np.int64)
    cols = np.stack([ens.col(int(m), lengths) for m in lv], axis=1)
    return t, (cols - mu_hat * lv[None, :]) / (sigma_hat * math.sqrt(n))


def donsker_check(
    ens: SampleEnsemble,
    n: int,
    mu_hat: float,
    sigma_hat: float,
    *,
    rel_se_sigma2: float = 0.0,
    times=(0.25, 0.5, 1.0),
    cov_pair=(0.3, 0.7),
    z: float = 3.0,
    lengths: bool = False,
) -> list[Verdict]:
    """Brownian finite-dimensional marginals of the scaled paths.

    ``rel_se_sigma2`` is the relative standard error of ``sigma_hat^2``; it
    is propagated into the standard error of every variance and covariance
    (all scale as ``1 / sigma^2``).
    """
    t, P = donsker_paths(ens, n, mu_hat, sigma_hat, lengths=lengths)
    tag = "_N" if lengths else ""
    out = []
    zero = np.max(np.abs(P[:, 0]))
    out.append(Verdict("donsker_origin" + tag, float(zero), 1e-12, bool(zero <= 1e-12)))
    for s in times:
        j = int(round(s * 100))
        v = float(P[:, j].var(ddof=1))
        se = math.hypot(var_se(P[:, j]), v * rel_se_sigma2)
        out.append(z_check(f"donsker_var{tag}_t={s}", v, s, se, z))
    a, b = (int(round(s * 100)) for s in cov_pair)
    c = float(np.cov(P[:, a], P[:, b])[0, 1])
    se = math.hypot(cov_se(P[:, a], P[:, b]), c * rel_se_sigma2)
    out.append(z_check(f"donsker_cov{tag}_{cov_pair[0]}_{cov_pair[1]}", c, cov_pair[0], se, z))
    inc1 = P[:, 50] - P[:, 0]
    inc2 = P[:, 100] - P[:, 50]
    r = float(np.corrcoef(inc1, inc2)[0, 1])
    thr = z / math.sqrt(len(inc1))
    out.append(Verdict("donsker_increment_independence" + tag, abs(r), thr, abs(r) <= thr, {"correlation": r}))
    return out


# -- drift ----------------------------------------------------------------------


def _boot_var_diff(a: np.ndarray, b: np.ndarray, n_boot: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    R = len(a)
    idx = rng.integers(0, R, size=(n_boot, R))
    d = b[idx].var(axis=1, ddof=1) - a[idx].var(axis=1, ddof=1)
    return float(d.std(ddof=1))


def drift_check(
    ens: SampleEnsemble,
    mu_hat: float,
    sigma2_hat: float,
    *,
    se_mu: float = 0.0,
    se_sigma2: float = 0.0,
    grid=(250, 500, 1000, 2000),
    pair=(1000, 2000),
    step_levels=(500, 1000, 1500, 2000),
    z: float = 3.0,
    lengths: bool = False,
    n_boot: int = 300,
) -> list[Verdict]:
    """Flattening of ``E[T] - mu n`` and ``Var T - sigma^2 n`` and step means.

    Differences between the two levels of ``pair`` are computed on the same
    replicas, so their standard errors are paired; the uncertainty of the
    plug-in constants enters through ``(n2 - n1) * se``.
    """
    tag = "_N" if lengths else ""
    table = []
    for n in grid:
        x = ens.col(n, lengths).astype(float)
        table.append({"n": int(n), "mean_drift": float(x.mean() - mu_hat * n), "var_drift": float(x.var(ddof=1) - sigma2_hat * n)})
    n1, n2 = pair
    a = ens.col(n1, lengths).astype(float)
    b = ens.col(n2, lengths).astype(float)
    gap = n2 - n1
    dm = float((b - a).mean() - mu_hat * gap)
    se_m = math.hypot((b - a).std(ddof=1) / math.sqrt(len(a)), gap * se_mu)
    dv = float(b.var(ddof=1) - a.var(ddof=1) - sigma2_hat * gap)
    se_v = math.hypot(_boot_var_diff(a, b, n_boot, 1), gap * se_sigma2)
    out = [
        z_check(f"drift_mean{tag}", dm, 0.0, se_m, z, table=table),
        z_check(f"drift_var{tag}", dv, 0.0, se_v, z),
    ]
    for n in step_levels:
        try:
            d = ens.col(n + 1, lengths).astype(float) - ens.col(n, lengths).astype(float)
        except KeyError:
            continue
        se = math.hypot(d.std(ddof=1) / math.sqrt(len(d)), se_mu)
        out.append(z_check(f"step_mean{tag}_n={n}", float(d.mean()), mu_hat, se, z))
    return out


# -- calibration --------------------------------------------------------------------


def _cal_clt_insample(rng, R=10_000):
    return not clt_check(rng.standard_normal(R), 1, max_ks=1.0).passed


def _cal_clt_plugin(rng, R=10_000):
    return not clt_check(rng.standard_normal(R), 1, 0.0, 1.0, max_ks=1.0).passed


def _cal_chi2(rng, n=5000, p=0.01):
    return not chi2_geometric(rng.geometric(p, size=n)).passed


def _cal_mean_z(rng, R=10_000):
    x = rng.standard_normal(R)
    return not z_check("m", x.mean(), 0.0, x.std(ddof=1) / math.sqrt(R), Z_1PCT).passed


def _cal_var_z(rng, R=5000, t=0.5):
    x = rng.standard_normal(R) * math.sqrt(t)
    return not z_check("v", x.var(ddof=1), t, var_se(x), Z_1PCT).passed


def _cal_cov_z(rng, R=5000):
    # Brownian motion at times 0.3 and 0.7
    w3 = rng.standard_normal(R) * math.sqrt(0.3)
    w7 = w3 + rng.standard_normal(R) * math.sqrt(0.4)
    return not z_check("c", float(np.cov(w3, w7)[0, 1]), 0.3, cov_se(w3, w7), Z_1PCT).passed


def _cal_var_diff(rng, R=10_000):
    # random-walk variance growth: Var(B) - Var(A) equals the variance of the added part
    a = rng.standard_normal(R) * math.sqrt(1.0)
    b = a + rng.standard_normal(R) * math.sqrt(1.0)
    dv = b.var(ddof=1) - a.var(ddof=1) - 1.0
    se = _boot_var_diff(a, b, 200, int(rng.integers(2**31)))
    return not z_check("vd", dv, 0.0, se, Z_1PCT).passed


def _cal_lag1(rng, n=5000):
    return not lag1_check(rng.standard_normal(n), z=Z_1PCT).passed


def _cal_ks2(rng, n=2500):
    return not ks2_check(rng.standard_normal(n), rng.standard_normal(n)).passed


def _cal_clt_lattice(rng, R=10_000):
    # even-valued sums: span 2 is detected and smoothed out
    x = 2 * rng.binomial(4000, 0.5, size=R)
    return not clt_check(x, 1, lattice=True, max_ks=1.0, seed=int(rng.integers(2**31))).passed


def _cal_lil(rng, R=2000, N=200):
    lv = np.arange(1, N + 1)
    paths = np.cumsum(rng.standard_normal((R, N)), axis=1)
    return not lil_check(paths, lv, 0.0, 1.0, N, z=Z_1PCT_ONE_SIDED, seed=int(rng.integers(2**31))).passed


CALIBRATED_TESTS: dict[str, Callable] = {
    "clt_lattice_lilliefors": _cal_clt_lattice,
    "lil_envelope": _cal_lil,
    "clt_in_sample_lilliefors": _cal_clt_insample,
    "clt_plug_in_ks": _cal_clt_plugin,
    "chi2_geometric": _cal_chi2,
    "z_mean": _cal_mean_z,
    "z_variance": _cal_var_z,
    "z_covariance": _cal_cov_z,
    "z_variance_difference": _cal_var_diff,
    "lag1_correlation": _cal_lag1,
    "ks_two_sample": _cal_ks2,
}


def calibrate(name: str, meta: int = 1000, seed: int = 0, band=(0.005, 0.02)) -> Verdict:
    """Rejection rate of a test on synthetic null data at nominal level 1%."""
    fn = CALIBRATED_TESTS[name]
    rng = np.random.default_rng([seed, sorted(CALIBRATED_TESTS).index(name)])
    rej = sum(bool(fn(rng)) for _ in range(meta))
    rate = rej / meta
    return Verdict(f"calibration_{name}", rate, 0.01, band[0] <= rate <= band[1], {"rejections": rej, "meta_replicas": meta, "band": list(band)})


def standard_levels(n: int = 4000, grid=(250, 500, 1000, 2000), step_levels=(500, 1000, 1500, 2000), points: int = 100) -> np.ndarray:
    """Levels needed by the LLN, CLT, drift and Donsker checks."""
    t = np.arange(points + 1) / points
    lv = set(np.floor(n * t + 1e-9).astype(int).tolist())
    lv.update(grid)
    lv.update(step_levels)
    lv.update(s + 1 for s in step_levels)
    lv.add(n)
    return np.array(sorted(lv), dtype=np.int64)
