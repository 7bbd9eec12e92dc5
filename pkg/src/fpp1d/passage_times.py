"""Passage-time distributions and reproducible weight fields.

Distributions are small frozen dataclasses exposing a vectorised
``cdf`` and ``ppf`` (the generalised inverse ``inf{x : F(x) >= u}``).
Weights are produced by inverse-CDF sampling from counter-based uniforms,
so the weight of an edge depends only on ``(seed, edge)``.  Two fields with
the same seed and different distributions are therefore coupled through the
same ``U_e``, which is the coupling used for continuity studies.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .periodic_graph import EdgeRef, PeriodCell
from .rng import STREAM_WEIGHT, counter_uniforms

__all__ = [
    "Distribution",
    "Exponential",
    "Uniform",
    "Discrete",
    "Mixture",
    "Scaled",
    "Truncated",
    "DistributionSchemaError",
    "inverse_cdf",
    "support_bounds",
    "distribution_from_config",
    "distribution_from_spec",
    "WeightField",
]


class DistributionSchemaError(ValueError):
    """Raised for invalid distribution descriptions."""


class Distribution(ABC):
    """Law of a nonnegative passage time."""

    @abstractmethod
    def cdf(self, x):
        """``P(tau <= x)``."""

    @abstractmethod
    def ppf(self, u):
        """Generalised inverse ``inf{x : F(x) >= u}`` for ``u`` in (0, 1]."""

    @abstractmethod
    def support(self) -> tuple[float, float]:
        """Essential infimum and supremum ``(m, M)``; ``M`` may be ``inf``."""

    def atoms(self) -> list[tuple[float, float]]:
        """Point masses ``(value, probability)``."""
        return []

    def pdf(self, x):
        """Density of the absolutely continuous part."""
        return np.zeros_like(np.asarray(x, dtype=float))

    def mean(self) -> float:
        u = (np.arange(200_000) + 0.5) / 200_000
        return float(np.mean(self.ppf(u)))

    def cdf_left(self, x):
        """``P(tau < x)``."""
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.cdf(x), dtype=float).copy()
        for t, p in self.atoms():
            out = out - p * (x == t)
        return out

    def density_interval(self) -> tuple[float, float, float] | None:
        """An interval ``[a, b]`` and ``c > 0`` with density at least ``c`` on it."""
        return None

    @property
    def is_continuous(self) -> bool:
        return not self.atoms()

    def to_config(self) -> dict:
        raise NotImplementedError


def _as_float_array(x):
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class Exponential(Distribution):
    """Exponential law with the given rate."""

    rate: float = 1.0

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise DistributionSchemaError("exponential rate must be positive")

    def cdf(self, x):
        x = _as_float_array(x)
        return np.where(x < 0, 0.0, -np.expm1(-self.rate * np.maximum(x, 0.0)))

    def ppf(self, u):
        return -np.log1p(-_as_float_array(u)) / self.rate

    def pdf(self, x):
        x = _as_float_array(x)
        return np.where(x < 0, 0.0, self.rate * np.exp(-self.rate * np.maximum(x, 0.0)))

    def support(self):
        return 0.0, math.inf

    def mean(self):
        return 1.0 / self.rate

    def density_interval(self):
        b = 1.0 / self.rate
        return 0.0, b, self.rate * math.exp(-1.0)

    def to_config(self):
        return {"type": "exponential", "rate": self.rate}


@dataclass(frozen=True)
class Uniform(Distribution):
    """Uniform law on ``[a, b]``."""

    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not (0 <= self.a < self.b < math.inf):
            raise DistributionSchemaError("uniform needs 0 <= a < b < inf")

    def cdf(self, x):
        return np.clip((_as_float_array(x) - self.a) / (self.b - self.a), 0.0, 1.0)

    def ppf(self, u):
        return self.a + (self.b - self.a) * _as_float_array(u)

    def pdf(self, x):
        x = _as_float_array(x)
        return np.where((x >= self.a) & (x <= self.b), 1.0 / (self.b - self.a), 0.0)

    def support(self):
        return float(self.a), float(self.b)

    def mean(self):
        return 0.5 * (self.a + self.b)

    def density_interval(self):
        return float(self.a), float(self.b), 1.0 / (self.b - self.a)

    def to_config(self):
        return {"type": "uniform", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Discrete(Distribution):
    """Finitely supported law; ``atoms`` holds ``(value, probability)``."""

    atoms_: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.atoms_:
            raise DistributionSchemaError("discrete law needs at least one atom")
        pairs = sorted((float(t), float(p)) for t, p in self.atoms_)
        vals = [t for t, _ in pairs]
        if len(set(vals)) != len(vals):
            raise DistributionSchemaError("repeated atom value")
        if any(t < 0 or not math.isfinite(t) for t in vals):
            raise DistributionSchemaError("atoms must be finite and nonnegative")
        if any(p <= 0 for _, p in pairs):
            raise DistributionSchemaError("atom probabilities must be positive")
        tot = sum(p for _, p in pairs)
        if abs(tot - 1.0) > 1e-9:
            raise DistributionSchemaError(f"atom probabilities sum to {tot}, not 1")
        object.__setattr__(self, "atoms_", tuple((t, p / tot) for t, p in pairs))

    @property
    def values(self) -> np.ndarray:
        return np.array([t for t, _ in self.atoms_])

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms_])

    def atoms(self):
        return list(self.atoms_)

    def cdf(self, x):
        x = _as_float_array(x)
        cp = np.cumsum(self.probs)
        idx = np.searchsorted(self.values, x, side="right")
        return np.where(idx == 0, 0.0, cp[np.maximum(idx - 1, 0)])

    def ppf(self, u):
        u = _as_float_array(u)
        cp = np.cumsum(self.probs)
        cp[-1] = 1.0
        idx = np.searchsorted(cp, u, side="left")
        return self.values[np.clip(idx, 0, len(cp) - 1)]

    def support(self):
        return float(self.values[0]), float(self.values[-1])

    def mean(self):
        return float(self.values @ self.probs)

    def to_config(self):
        return {"type": "discrete", "atoms": [[t, p] for t, p in self.atoms_]}


@dataclass(frozen=True)
class Scaled(Distribution):
    """Law of ``c * tau`` for ``tau`` drawn from ``base``."""

    base: Distribution
    c: float

    def __post_init__(self):
        if not self.c > 0:
            raise DistributionSchemaError("scale must be positive")

    def cdf(self, x):
        return self.base.cdf(_as_float_array(x) / self.c)

    def ppf(self, u):
        return self.c * self.base.ppf(u)

    def pdf(self, x):
        return self.base.pdf(_as_float_array(x) / self.c) / self.c

    def atoms(self):
        return [(self.c * t, p) for t, p in self.base.atoms()]

    def support(self):
        m, M = self.base.support()
        return self.c * m, self.c * M

    def mean(self):
        return self.c * self.base.mean()

    def density_interval(self):
        di = self.base.density_interval()
        if di is None:
            return None
        return self.c * di[0], self.c * di[1], di[2] / self.c

    def to_config(self):
        return {"type": "scaled", "c": self.c, "base": self.base.to_config()}


def _bisect_ppf(dist: Distribution, u: np.ndarray, lo: float, hi: float) -> np.ndarray:
    u = _as_float_array(u)
    a = np.full(u.shape, lo)
    b = np.full(u.shape, hi)
    # a < answer <= b invariant, in the sense F(a) < u <= F(b)
    for _ in range(80):
        mid = 0.5 * (a + b)
        ok = dist.cdf(mid) >= u
        b = np.where(ok, mid, b)
        a = np.where(ok, a, mid)
    out = b
    for t, _ in dist.atoms():
        near = np.abs(out - t) <= 1e-12 * max(1.0, abs(t))
        out = np.where(near, t, out)
    return out


@dataclass(frozen=True)
class Mixture(Distribution):
    """Finite mixture; ``components`` holds ``(weight, distribution)``."""

    components: tuple[tuple[float, Distribution], ...]

    def __post_init__(self):
        if not self.components:
            raise DistributionSchemaError("mixture needs components")
        tot = sum(w for w, _ in self.components)
        if any(w <= 0 for w, _ in self.components) or abs(tot - 1) > 1e-9:
            raise DistributionSchemaError("mixture weights must be positive and sum to 1")
        object.__setattr__(self, "components", tuple((float(w) / tot, d) for w, d in self.components))

    def cdf(self, x):
        x = _as_float_array(x)
        return sum(w * d.cdf(x) for w, d in self.components)

    def pdf(self, x):
        x = _as_float_array(x)
        return sum(w * d.pdf(x) for w, d in self.components)

    def atoms(self):
        acc: dict[float, float] = {}
        for w, d in self.components:
            for t, p in d.atoms():
                acc[t] = acc.get(t, 0.0) + w * p
        return sorted(acc.items())

    def support(self):
        sup = [d.support() for _, d in self.components]
        return min(s[0] for s in sup), max(s[1] for s in sup)

    def mean(self):
        return sum(w * d.mean() for w, d in self.components)

    def ppf(self, u):
        m, M = self.support()
        if not math.isfinite(M):
            M = max(d.ppf(1 - 1e-17) if math.isfinite(d.support()[1]) else d.ppf(1 - 2.0**-54) for _, d in self.components)
        u = _as_float_array(u)
        return _bisect_ppf(self, u, m - 1e-300 - 1e-12 * max(1.0, abs(m)), float(M))

    def density_interval(self):
        best = None
        for w, d in self.components:
            di = d.density_interval()
            if di is not None and (best is None or w * di[2] * (di[1] - di[0]) > best[2] * (best[1] - best[0])):
                best = (di[0], di[1], w * di[2])
        return best

    def to_config(self):
        return {"type": "mixture", "components": [{"weight": w, "dist": d.to_config()} for w, d in self.components]}


@dataclass(frozen=True)
class Truncated(Distribution):
    """Quantile window ``(p_lo, p_hi]`` of ``base``.

    With ``p_lo = 0`` and ``p_hi = F(t)`` this is the law of ``tau`` given
    ``tau <= t``; with ``p_lo = F(t)`` and ``p_hi = 1`` it is the law given
    ``tau > t``, and ``p_lo = P(tau < t)`` gives the law given ``tau >= t``.
    These identities hold for laws with atoms as well.
    """

    base: Distribution
    p_lo: float
    p_hi: float

    def __post_init__(self):
        if not (0 <= self.p_lo < self.p_hi <= 1):
            raise DistributionSchemaError("need 0 <= p_lo < p_hi <= 1")

    @property
    def mass(self) -> float:
        return self.p_hi - self.p_lo

    def cdf(self, x):
        return np.clip((self.base.cdf(x) - self.p_lo) / self.mass, 0.0, 1.0)

    def ppf(self, u):
        return self.base.ppf(self.p_lo + _as_float_array(u) * self.mass)

    def pdf(self, x):
        x = _as_float_array(x)
        lo, hi = self.support()
        return np.where((x >= lo) & (x <= hi), self.base.pdf(x) / self.mass, 0.0)

    def atoms(self):
        lo, hi = self.support()
        out = []
        for t, p in self.base.atoms():
            if lo <= t <= hi:
                left = float(self.base.cdf_left(t))
                right = float(self.base.cdf(t))
                q = min(right, self.p_hi) - max(left, self.p_lo)
                if q > 1e-15:
                    out.append((t, q / self.mass))
        return out

    def support(self):
        if self.p_lo == 0:
            lo = self.base.support()[0]
        else:
            lo = float(self.base.ppf(min(1.0, self.p_lo + 1e-15)))
        hi = float(self.base.ppf(self.p_hi)) if self.p_hi < 1 else self.base.support()[1]
        return lo, hi

    def density_interval(self):
        di = self.base.density_interval()
        if di is None:
            return None
        lo, hi = self.support()
        a, b = max(di[0], lo), min(di[1], hi)
        if b <= a:
            return None
        return a, b, di[2] / self.mass

    def to_config(self):
        return {"type": "truncated", "p_lo": self.p_lo, "p_hi": self.p_hi, "base": self.base.to_config()}


def inverse_cdf(dist: Distribution, u) -> np.ndarray:
    """Generalised inverse of the CDF, ``inf{x : F(x) >= u}``.

    Parameters
    ----------
    dist : Distribution
    u : array_like
        Values in ``(0, 1]``.  ``u = 0`` maps to the lower support bound.

    Raises
    ------
    ValueError
        If any ``u`` lies outside ``[0, 1]``.
    """
    u = _as_float_array(u)
    if np.any((u < 0) | (u > 1)) or np.any(np.isnan(u)):
        raise ValueError("u must lie in [0, 1]")
    m, _ = dist.support()
    out = np.asarray(dist.ppf(np.where(u == 0, 0.5, u)), dtype=float)
    return np.where(u == 0, m, out)


def support_bounds(dist: Distribution) -> tuple[float, float]:
    """``(m_tau, M_tau)``, the essential infimum and supremum."""
    return dist.support()


def distribution_from_config(cfg) -> Distribution:
    """Parse the distribution JSON format.

    Examples
    --------
    >>> distribution_from_config({"type": "uniform", "a": 0, "b": 1})
    Uniform(a=0.0, b=1.0)
    """
    if isinstance(cfg, str):
        try:
            cfg = json.loads(cfg)
        except json.JSONDecodeError as exc:
            raise DistributionSchemaError(f"invalid distribution JSON: {exc}") from exc
    if not isinstance(cfg, dict) or "type" not in cfg:
        raise DistributionSchemaError("distribution must be an object with a 'type'")
    kind = cfg["type"]
    try:
        if kind == "exponential":
            return Exponential(float(cfg.get("rate", 1.0)))
        if kind == "uniform":
            return Uniform(float(cfg["a"]), float(cfg["b"]))
        if kind == "discrete":
            return Discrete(tuple((float(t), float(p)) for t, p in cfg["atoms"]))
        if kind == "mixture":
            comps = []
            for c in cfg["components"]:
                comps.append((float(c["weight"]), distribution_from_config(c["dist"])))
            return Mixture(tuple(comps))
        if kind == "scaled":
            return Scaled(distribution_from_config(cfg["base"]), float(cfg["c"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DistributionSchemaError):
            raise
        raise DistributionSchemaError(f"malformed {kind} distribution: {exc}") from exc
    raise DistributionSchemaError(f"unknown distribution type {kind!r}")


def distribution_from_spec(spec: str) -> Distribution:
    """Parse short forms ``exp:RATE``, ``unif:A,B``, ``disc:T@P,T@P`` or JSON."""
    s = spec.strip()
    if s.startswith("{"):
        return distribution_from_config(s)
    try:
        if s.startswith("exp:"):
            return Exponential(float(s[4:]))
        if s.startswith("unif:"):
            a, b = (float(x) for x in s[5:].split(","))
            return Uniform(a, b)
        if s.startswith("disc:"):
            atoms = []
            for part in s[5:].split(","):
                t, p = part.split("@")
                atoms.append((float(t), float(p)))
            return Discrete(tuple(atoms))
    except ValueError as exc:
        if isinstance(exc, DistributionSchemaError):
            raise
        raise DistributionSchemaError(f"cannot parse distribution {spec!r}") from exc
    raise DistributionSchemaError(f"unknown distribution specification {spec!r}")


@dataclass(frozen=True)
class WeightField:
    """I.i.d. passage times on a periodic graph, generated lazily.

    Parameters
    ----------
    dist : Distribution
        Marginal law of each weight.
    seed : int
        Master seed; the weight of edge ``(n, s)`` is
        ``dist.ppf(U(seed, key(s), n))``.
    overrides : mapping of EdgeRef to float, optional
        Explicit values replacing the generated ones.

    Notes
    -----
    The field is immutable; :meth:`with_overrides` returns a new field.
    """

    dist: Distribution
    seed: int
    overrides: Mapping[EdgeRef, float] = field(default_factory=dict)

    def __post_init__(self):
        ov = {EdgeRef(int(e[0]), int(e[1])): float(v) for e, v in dict(self.overrides).items()}
        if any(v < 0 or math.isnan(v) for v in ov.values()):
            raise ValueError("override values must be nonnegative")
        object.__setattr__(self, "overrides", MappingProxyType(ov))
        if ov:
            arr = np.array([(e.level, e.slot) for e in ov], dtype=np.int64)
            vals = np.fromiter(ov.values(), dtype=float, count=len(ov))
        else:
            arr = np.empty((0, 2), dtype=np.int64)
            vals = np.empty(0)
        order = np.argsort(arr[:, 0], kind="stable")
        object.__setattr__(self, "_ov_lev", arr[order, 0])
        object.__setattr__(self, "_ov_slot", arr[order, 1])
        object.__setattr__(self, "_ov_val", vals[order])

    def __hash__(self):
        return hash((self.dist, self.seed, tuple(sorted(self.overrides.items()))))

    def with_overrides(self, extra: Mapping[EdgeRef, float]) -> "WeightField":
        """Copy with additional (or replaced) override values."""
        ov = dict(self.overrides)
        ov.update(extra)
        return WeightField(self.dist, self.seed, ov)

    def with_dist(self, dist: Distribution) -> "WeightField":
        """Same uniforms pushed through another distribution (overrides dropped)."""
        return WeightField(dist, self.seed)

    def uniforms(self, cell: PeriodCell, lo: int, hi: int, stream: int = STREAM_WEIGHT) -> np.ndarray:
        """Uniforms of levels ``lo..hi``, shape ``(hi - lo + 1, n_slots)``."""
        levels = np.arange(lo, hi + 1)[:, None]
        return counter_uniforms(self.seed, cell.slot_keys[None, :], levels, stream)

    def level_weights(self, cell: PeriodCell, lo: int, hi: int) -> np.ndarray:
        """Weights of all slots of levels ``lo..hi``, shape ``(hi - lo + 1, n_slots)``."""
        w = np.asarray(self.dist.ppf(self.uniforms(cell, lo, hi)), dtype=float)
        if len(self._ov_lev):
            i0, i1 = np.searchsorted(self._ov_lev, [lo, hi + 1])
            if i1 > i0:
                lev = self._ov_lev[i0:i1]
                slot = self._ov_slot[i0:i1]
                ok = slot < cell.n_slots
                w[lev[ok] - lo, slot[ok]] = self._ov_val[i0:i1][ok]
        return w

    def weight(self, cell: PeriodCell, e: EdgeRef) -> float:
        """Weight of a single edge."""
        e = EdgeRef(*e)
        if e in self.overrides:
            return self.overrides[e]
        return float(self.level_weights(cell, e.level, e.level)[0, e.slot])

    def weights_of(self, cell: PeriodCell, edges) -> np.ndarray:
        """Weights of a list of edges."""
        edges = [EdgeRef(*e) for e in edges]
        if not edges:
            return np.empty(0)
        lev = np.array([e.level for e in edges])
        slot = np.array([e.slot for e in edges])
        u = counter_uniforms(self.seed, cell.slot_keys[slot], lev)
        w = np.asarray(self.dist.ppf(u), dtype=float)
        for k, e in enumerate(edges):
            if e in self.overrides:
                w[k] = self.overrides[e]
        return w
