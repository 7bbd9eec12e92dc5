"""Command-line entry point ``fpp``.

Every subcommand builds an :class:`ExperimentConfig`, validates it and hands
it to :func:`run`.  Outputs go to ``--out``: CSV for raw samples, JSON for
verdicts and SVG line plots for paths and drift curves.  All outputs are a
function of the configuration and master seed alone (no timestamps, replica
order fixed by index), so two runs produce identical files whatever
``FPP_THREADS`` is.

Exit status: 0 all checks pass, 1 a statistical check failed, 2 invalid
configuration, 3 a travel time could not be certified.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Sequence

import numpy as np

from .coupling import CouplingError, couple_infections_continuous, couple_infections_discrete, tree_branching_demo
from .estimation import EstimationError, continuity_study, estimate_from_field, mu_vs_K_study, worker_count, write_rows_csv
from .fpp_core import CertificationError
from .limit_checks import (
    Verdict,
    clt_check,
    donsker_check,
    donsker_paths,
    drift_check,
    generate_ensemble,
    lil_check,
    lln_check,
    standard_levels,
)
from .passage_times import Distribution, DistributionSchemaError, Scaled, distribution_from_config, distribution_from_spec
from .periodic_graph import GraphSchemaError, PeriodCell, VertexRef, cell_from_json, cell_from_spec
from .regeneration import ParameterError, RegenParams, block_half_length, optimize_params, p_A_closed_form
from .rng import derive_seeds

__all__ = ["ConfigError", "ExperimentConfig", "run", "main", "EXIT_OK", "EXIT_STAT", "EXIT_SCHEMA", "EXIT_CERT"]

EXIT_OK, EXIT_STAT, EXIT_SCHEMA, EXIT_CERT = 0, 1, 2, 3

KINDS = {
    "estimate": (None,),
    "verify": ("lln", "clt", "lil", "donsker", "drift", "geodesic"),
    "couple": ("continuous", "discrete"),
    "tree-demo": (None,),
    "mu-vs-k": (None,),
    "continuity": (None,),
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


class _Uncertified(RuntimeError):
    pass


def _vertex_set(spec) -> tuple[VertexRef, ...]:
    """``"0,1;1,2"`` or ``[[0, 1], [1, 2]]`` to vertex references."""
    if isinstance(spec, str):
        spec = [p.split(",") for p in spec.split(";") if p.strip()]
    try:
        out = tuple(VertexRef(int(a), int(b)) for a, b in spec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cannot parse vertex set {spec!r}") from exc
    if not out:
        raise ConfigError("empty vertex set")
    return out


def _int_list(spec) -> list[int]:
    if isinstance(spec, str):
        spec = spec.split(",")
    try:
        return [int(x) for x in spec]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cannot parse integer list {spec!r}") from exc


@dataclass
class ExperimentConfig:
    """Full description of one run.

    ``graph`` and ``dist`` accept either the short string forms
    (``tube:2,2``, ``exp:1``) or the JSON objects of the graph and
    distribution schemas.  ``params`` is ``"auto"`` or an object with
    ``t_lo`` and ``t_hi`` (``M`` is derived).
    """

    kind: str
    check: str | None = None
    graph: Any = "tube:2,2"
    dist: Any = "exp:1"
    params: Any = "auto"
    seed: int = 0
    replicas: int | None = None
    n: int | None = None
    increments: int = 2000
    levels: list | None = None
    out: str = "."
    svg: bool = True
    # coupling
    I: Any = "0,1"
    I_prime: Any = "1,2"
    budget: float = 300_000
    condition: str = "b"
    # tree demo
    rate: float = 1.0
    tmax: float | None = None
    # studies
    d: int = 2
    Ks: Any = "1,2,3,4"
    ms: Any = "1,2,4,8,16"

    DEFAULT_REPLICAS = {"estimate": 200, "verify": 1000, "couple": 1, "tree-demo": 2000, "mu-vs-k": 100, "continuity": 100}
    DEFAULT_N = {"estimate": 2000, "verify": 2000, "couple": 0, "tree-demo": 0, "mu-vs-k": 2000, "continuity": 2000}

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigError("configuration must be a JSON object")
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
        if "kind" not in obj:
            raise ConfigError("configuration needs a 'kind'")
        cfg = cls(**obj)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.check not in KINDS[self.kind]:
            raise ConfigError(f"kind {self.kind!r} takes one of {KINDS[self.kind]}, got {self.check!r}")
        if self.replicas is None:
            self.replicas = self.DEFAULT_REPLICAS[self.kind]
        if self.n is None:
            self.n = self.DEFAULT_N[self.kind]
        for name in ("seed", "replicas", "n", "increments", "d"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {v!r}")
        if self.replicas < 1:
            raise ConfigError("replicas must be positive")
        if self.kind in ("estimate", "verify", "mu-vs-k", "continuity") and self.n < 2:
            raise ConfigError("n must be at least 2")
        if self.condition not in ("a", "b"):
            raise ConfigError("condition must be 'a' or 'b'")
        if not (isinstance(self.rate, (int, float)) and self.rate > 0):
            raise ConfigError("rate must be positive")
        if self.tmax is not None and not self.tmax > 0:
            raise ConfigError("tmax must be positive")
        # parse eagerly so schema errors surface before any work
        self.cell()
        self.distribution()
        self.regen_params()

    def cell(self) -> PeriodCell:
        if isinstance(self.graph, dict):
            return cell_from_json(self.graph)
        return cell_from_spec(str(self.graph))

    def distribution(self) -> Distribution:
        if isinstance(self.dist, dict):
            return distribution_from_config(self.dist)
        return distribution_from_spec(str(self.dist))

    def regen_params(self) -> RegenParams | None:
        if self.params in (None, "auto"):
            return None
        if not isinstance(self.params, dict) or not {"t_lo", "t_hi"} <= set(self.params):
            raise ConfigError("params must be 'auto' or an object with t_lo and t_hi")
        cell, dist = self.cell(), self.distribution()
        t_lo, t_hi = float(self.params["t_lo"]), float(self.params["t_hi"])
        if not 0 <= t_lo < t_hi:
            raise ConfigError("params need 0 <= t_lo < t_hi")
        M = int(self.params.get("M", block_half_length(t_lo, t_hi, cell.L)))
        return RegenParams(t_lo, t_hi, M, p_A_closed_form(dist, cell, t_lo, t_hi, M))

    def to_dict(self) -> dict:
        """Configuration as recorded in outputs (the output path is left out)."""
        d = asdict(self)
        d.pop("out")
        return d


# -- output helpers -----------------------------------------------------------------


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serialisable: {type(o)}")


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default, allow_nan=True)
        fh.write("\n")


def svg_lines(path: str, series: Sequence[tuple[np.ndarray, np.ndarray, str]], title: str, xlabel: str = "", ylabel: str = "") -> None:
    """Minimal static SVG line plot.

    Parameters
    ----------
    series : sequence of (x, y, colour)
        One polyline each; non-finite points are dropped.
    """
    W, H, pad = 640, 400, 50
    xs = np.concatenate([np.asarray(s[0], float) for s in series])
    ys = np.concatenate([np.asarray(s[1], float) for s in series])
    ok = np.isfinite(xs) & np.isfinite(ys)
    x0, x1 = (float(xs[ok].min()), float(xs[ok].max())) if ok.any() else (0.0, 1.0)
    y0, y1 = (float(ys[ok].min()), float(ys[ok].max())) if ok.any() else (0.0, 1.0)
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (W - 2 * pad)

    def py(y):
        return H - pad - (y - y0) / (y1 - y0) * (H - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{H - pad}" x2="{W - pad}" y2="{H - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{H - pad}" stroke="black"/>',
        f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-family="sans-serif" font-size="12">{xlabel}</text>',
        f'<text x="12" y="{H / 2}" transform="rotate(-90 12 {H / 2})" text-anchor="middle" font-family="sans-serif" font-size="12">{ylabel}</text>',
        f'<text x="{pad}" y="{H - pad + 15}" font-family="sans-serif" font-size="10">{x0:.4g}</text>',
        f'<text x="{W - pad}" y="{H - pad + 15}" text-anchor="end" font-family="sans-serif" font-size="10">{x1:.4g}</text>',
        f'<text x="{pad - 4}" y="{H - pad}" text-anchor="end" font-family="sans-serif" font-size="10">{y0:.4g}</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" text-anchor="end" font-family="sans-serif" font-size="10">{y1:.4g}</text>',
    ]
    for x, y, colour in series:
        x, y = np.asarray(x, float), np.asarray(y, float)
        m = np.isfinite(x) & np.isfinite(y)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[m], y[m]))
        parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1" stroke-opacity="0.7" points="{pts}"/>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


_PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _summary(cfg: ExperimentConfig, verdicts: list[dict], extra: dict | None = None) -> dict:
    out = {"config": cfg.to_dict(), "verdicts": verdicts, "pass": all(v.get("pass", False) for v in verdicts)}
    if extra:
        out.update(extra)
    return out


# -- experiments ---------------------------------------------------------------------


def _constants(cfg: ExperimentConfig, cell, dist, lengths=True):
    params = cfg.regen_params() or optimize_params(dist, cell)
    _, est = estimate_from_field(cell, dist, cfg.seed, cfg.increments, params=params, lengths=lengths)
    return params, est


def _run_estimate(cfg: ExperimentConfig) -> int:
    cell, dist = cfg.cell(), cfg.distribution()
    params, est = _constants(cfg, cell, dist)
    ens = generate_ensemble(cell, dist, [cfg.n], cfg.replicas, cfg.seed, workers=worker_count())
    T, N = ens.col(cfg.n), ens.col(cfg.n, lengths=True)
    with open(os.path.join(cfg.out, "estimate_samples.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replica", "seed", "level", "T", "N", "certified"])
        for r in range(ens.R):
            w.writerow([r, int(ens.seeds[r]), cfg.n, repr(float(T[r])), int(N[r]), int(ens.certified[r])])
    x = T / cfg.n
    summary = {
        "config": cfg.to_dict(),
        "params": params.to_dict(),
        "constants": est.to_dict(),
        "mu_from_replicas": float(x.mean()),
        "se_mu_from_replicas": float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else None,
        "alpha_from_replicas": float(N.mean() / cfg.n),
        "all_certified": bool(ens.certified.all()),
    }
    _write_json(os.path.join(cfg.out, "estimate.json"), summary)
    if not ens.certified.all():
        raise _Uncertified(f"{int((~ens.certified).sum())} replicas uncertified")
    return EXIT_OK


def _verify_levels(cfg: ExperimentConfig) -> np.ndarray:
    if cfg.levels is not None:
        return np.asarray(_int_list(cfg.levels), dtype=np.int64)
    n = cfg.n
    if cfg.check == "lln":
        return np.array([n // 4, n // 2, n])
    if cfg.check == "clt":
        return np.array([n])
    if cfg.check == "lil":
        return np.arange(1, n + 1)
    grid = tuple(sorted({n // 8, n // 4, n // 2, n}))
    steps = tuple(sorted({n // 4, n // 2, 3 * n // 4, n}))
    return standard_levels(n, grid=grid, step_levels=steps)


def _run_verify(cfg: ExperimentConfig) -> int:
    cell, dist = cfg.cell(), cfg.distribution()
    geo = cfg.check == "geodesic"
    params, est = _constants(cfg, cell, dist)
    levels = _verify_levels(cfg)
    ens = generate_ensemble(cell, dist, levels, cfg.replicas, cfg.seed, workers=worker_count())
    ens.to_csv(os.path.join(cfg.out, f"verify_{cfg.check}_samples.csv"))
    if not ens.certified.all():
        raise _Uncertified(f"{int((~ens.certified).sum())} replicas uncertified")
    n = cfg.n
    tags = [True] if geo else [False]
    verdicts: list[Verdict] = []
    for lengths in tags:
        mu = est.alpha if lengths else est.mu
        s2 = est.sigmaN2 if lengths else est.sigma2
        se_mu = est.se_alpha if lengths else est.se_mu
        se_s2 = est.se_sigmaN2 if lengths else est.se_sigma2
        if cfg.check == "lln":
            verdicts.append(lln_check(ens, mu, levels=[int(l) for l in levels], lengths=lengths))
        if cfg.check in ("clt", "geodesic"):
            verdicts.append(clt_check(ens.col(n, lengths), n, lattice=lengths, name="clt_N" if lengths else "clt"))
        if cfg.check == "lil":
            verdicts.append(lil_check(ens.T if not lengths else ens.N, levels, mu, math.sqrt(s2), n))
        if cfg.check in ("donsker", "geodesic"):
            verdicts += donsker_check(ens, n, mu, math.sqrt(s2), rel_se_sigma2=se_s2 / s2, lengths=lengths)
            if cfg.svg:
                t, P = donsker_paths(ens, n, mu, math.sqrt(s2), lengths=lengths)
                k = min(10, len(P))
                svg_lines(
                    os.path.join(cfg.out, f"donsker{'_N' if lengths else ''}.svg"),
                    [(t, P[i], _PALETTE[i % len(_PALETTE)]) for i in range(k)],
                    "scaled paths",
                    "t",
                    "path(t)",
                )
        if cfg.check in ("drift", "geodesic"):
            grid = tuple(sorted({n // 8, n // 4, n // 2, n}))
            steps = tuple(sorted({n // 4, n // 2, 3 * n // 4, n}))
            dv = drift_check(ens, mu, s2, se_mu=se_mu, se_sigma2=se_s2, grid=grid, pair=(n // 2, n), step_levels=steps, lengths=lengths)
            verdicts += dv
            if cfg.svg:
                tab = dv[0].details["table"]
                xs = np.array([r["n"] for r in tab], float)
                svg_lines(
                    os.path.join(cfg.out, f"drift{'_N' if lengths else ''}.svg"),
                    [(xs, np.array([r["mean_drift"] for r in tab]), _PALETTE[0]), (xs, np.array([r["var_drift"] for r in tab]), _PALETTE[3])],
                    "mean drift (blue) and variance drift (red)",
                    "n",
                    "drift",
                )
    vd = [v.to_dict() for v in verdicts]
    summary = _summary(cfg, vd, {"params": params.to_dict(), "constants": est.to_dict()})
    _write_json(os.path.join(cfg.out, f"verify_{cfg.check}.json"), summary)
    return EXIT_OK if summary["pass"] else EXIT_STAT


def _run_couple(cfg: ExperimentConfig) -> int:
    cell, dist = cfg.cell(), cfg.distribution()
    I, Ip = _vertex_set(cfg.I), _vertex_set(cfg.I_prime)
    seeds = [cfg.seed] if cfg.replicas == 1 else [int(s) for s in derive_seeds(cfg.seed, cfg.replicas)]
    reports = []
    for k, s in enumerate(seeds):
        sub = os.path.join(cfg.out, f"couple_{k:04d}")
        os.makedirs(sub, exist_ok=True)
        kw = dict(seed=s, params=cfg.regen_params(), budget_levels=cfg.budget, out_dir=sub)
        if cfg.check == "continuous":
            rep, _ = couple_infections_continuous(cell, dist, I, Ip, **kw)
        else:
            rep, _ = couple_infections_discrete(cell, dist, I, Ip, condition=cfg.condition, **kw)
        d = rep.to_dict()
        d["seed"] = s
        reports.append(d)
    summary = _summary(cfg, reports, {"runs": len(reports), "coupled_runs": sum(bool(r.get("coupled")) for r in reports)})
    _write_json(os.path.join(cfg.out, f"couple_{cfg.check}.json"), summary)
    return EXIT_OK if summary["pass"] else EXIT_STAT


def _run_tree(cfg: ExperimentConfig) -> int:
    demo = tree_branching_demo(rate=cfg.rate, t_max=cfg.tmax, replicas=cfg.replicas, seed=cfg.seed)
    v = demo.verdict()
    with open(os.path.join(cfg.out, "tree_demo_W.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replica", "W"])
        for r, x in enumerate(demo.W):
            w.writerow([r, repr(float(x))])
    _write_json(os.path.join(cfg.out, "tree_demo.json"), _summary(cfg, [v], {"mean_W": v["mean_W"], "lambda_hat": v["lambda_hat"]}))
    return EXIT_OK if v["pass"] else EXIT_STAT


def _run_mu_vs_k(cfg: ExperimentConfig) -> int:
    dist = cfg.distribution()
    Ks = _int_list(cfg.Ks)
    res = mu_vs_K_study(cfg.d, Ks, dist, cfg.replicas, cfg.n, cfg.seed)
    write_rows_csv(res["rows"], os.path.join(cfg.out, "mu_vs_k.csv"))
    mus = [r["mu_hat"] for r in res["rows"]]
    mono = bool(np.all(res["min_diffs"] >= 0)) if len(Ks) > 1 else True
    dec = all(b < a for a, b in zip(mus[:-1], mus[1:]))
    v = [
        {"check": "pointwise_monotone", "statistic": float(np.min(res["min_diffs"])) if len(Ks) > 1 else 0.0, "threshold": 0.0, "pass": mono},
        {"check": "mu_strictly_decreasing", "statistic": mus, "threshold": None, "pass": dec},
    ]
    _write_json(os.path.join(cfg.out, "mu_vs_k.json"), _summary(cfg, v, {"rows": res["rows"], "all_certified": res["all_certified"]}))
    if cfg.svg:
        svg_lines(os.path.join(cfg.out, "mu_vs_k.svg"), [(np.array(Ks, float), np.array(mus), _PALETTE[0])], "mu_hat against K", "K", "mu_hat")
    if not res["all_certified"]:
        raise _Uncertified("some travel times uncertified")
    return EXIT_OK if mono and dec else EXIT_STAT


def _run_continuity(cfg: ExperimentConfig) -> int:
    cell, dist = cfg.cell(), cfg.distribution()
    ms = _int_list(cfg.ms)
    seq = [(f"m={m}", Scaled(dist, 1 + 1 / m)) for m in ms]
    res = continuity_study(cell, seq, ("limit", dist), cfg.n, cfg.replicas, cfg.seed)
    rows = res["rows"] + [res["limit"]]
    write_rows_csv(rows, os.path.join(cfg.out, "continuity.csv"))
    mus = [r["mu_hat"] for r in res["rows"]]
    last, lim = res["rows"][-1], res["limit"]
    dec = all(b < a for a, b in zip(mus[:-1], mus[1:]))
    inside = lim["ci_lo"] <= last["mu_hat"] <= lim["ci_hi"]
    v = [
        {"check": "continuity_monotone", "statistic": mus, "threshold": None, "pass": dec},
        {"check": "continuity_last_in_limit_ci", "statistic": last["mu_hat"], "threshold": [lim["ci_lo"], lim["ci_hi"]], "pass": inside},
    ]
    _write_json(os.path.join(cfg.out, "continuity.json"), _summary(cfg, v, {"rows": rows}))
    return EXIT_OK if dec and inside else EXIT_STAT


_RUNNERS = {
    "estimate": _run_estimate,
    "verify": _run_verify,
    "couple": _run_couple,
    "tree-demo": _run_tree,
    "mu-vs-k": _run_mu_vs_k,
    "continuity": _run_continuity,
}


def run(config: ExperimentConfig | dict) -> int:
    """Execute one experiment and return the exit status."""
    try:
        cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
        cfg.validate()
        os.makedirs(cfg.out, exist_ok=True)
        return _RUNNERS[cfg.kind](cfg)
    except (ConfigError, GraphSchemaError, DistributionSchemaError, ParameterError, CouplingError, TypeError) as exc:
        print(f"fpp: configuration error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (CertificationError, _Uncertified) as exc:
        print(f"fpp: certification failure: {exc}", file=sys.stderr)
        return EXIT_CERT
    except EstimationError as exc:
        print(f"fpp: {exc}", file=sys.stderr)
        return EXIT_STAT


# -- argument parsing -------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with configuration keys; command-line flags override it")
    common.add_argument("--graph", help="tube:K,d, cylinder:K,d, line or a cell JSON file")
    common.add_argument("--dist", help="exp:RATE, unif:A,B, disc:T@P,... or distribution JSON")
    common.add_argument("--params", help="'auto' or JSON with t_lo, t_hi")
    common.add_argument("--seed", type=int)
    common.add_argument("--replicas", type=int)
    common.add_argument("--n", type=int, help="target level")
    common.add_argument("--increments", type=int, help="regeneration increments for the constants")
    common.add_argument("--levels", help="comma-separated level list")
    common.add_argument("--out", help="output directory")
    common.add_argument("--no-svg", dest="svg", action="store_const", const=False)

    p = argparse.ArgumentParser(prog="fpp", description="First-passage percolation on periodic tubes.")
    sub = p.add_subparsers(dest="kind", required=True)
    sub.add_parser("estimate", parents=[common], help="estimate mu, sigma^2, alpha, sigma_N^2")
    v = sub.add_parser("verify", parents=[common], help="limit-theorem checks")
    v.add_argument("check", choices=KINDS["verify"])
    c = sub.add_parser("couple", parents=[common], help="exact coupling of two infections")
    c.add_argument("check", choices=KINDS["couple"])
    c.add_argument("--I", dest="I", help="initial set, e.g. '0,1' or '0,1;0,2'")
    c.add_argument("--I-prime", dest="I_prime")
    c.add_argument("--budget", type=float, help="level budget per direction")
    c.add_argument("--condition", choices=("a", "b"))
    t = sub.add_parser("tree-demo", parents=[common], help="branching-tree counterexample")
    t.add_argument("--rate", type=float)
    t.add_argument("--tmax", type=float)
    k = sub.add_parser("mu-vs-k", parents=[common], help="mu_K across nested tubes")
    k.add_argument("--d", type=int)
    k.add_argument("--Ks")
    q = sub.add_parser("continuity", parents=[common], help="mu under F_m -> F with F_m = F scaled by 1 + 1/m")
    q.add_argument("--ms")
    return p


def _config_from_args(ns: argparse.Namespace) -> dict:
    obj: dict = {}
    if ns.config:
        try:
            with open(ns.config) as fh:
                obj = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {ns.config!r}: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConfigError("configuration must be a JSON object")
        if obj.get("kind", ns.kind) != ns.kind:
            raise ConfigError(f"config kind {obj['kind']!r} does not match subcommand {ns.kind!r}")
    for key, val in vars(ns).items():
        if key == "config" or val is None:
            continue
        obj[key] = val
    if isinstance(obj.get("params"), str) and obj["params"] != "auto":
        try:
            obj["params"] = json.loads(obj["params"])
        except json.JSONDecodeError as exc:
            raise ConfigError(f"params must be 'auto' or JSON: {exc}") from exc
    return obj


def main(argv: Sequence[str] | None = None) -> int:
    ns = _parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.from_dict(_config_from_args(ns))
    except (ConfigError, GraphSchemaError, DistributionSchemaError, ParameterError, TypeError) as exc:
        print(f"fpp: configuration error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
