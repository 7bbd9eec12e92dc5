import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpp1d.limit_checks import (
    CALIBRATED_TESTS,
    SampleEnsemble,
    Verdict,
    calibrate,
    chi2_geometric,
    clt_check,
    cov_se,
    donsker_check,
    donsker_paths,
    drift_check,
    generate_ensemble,
    ks2_check,
    lag1_check,
    lil_check,
    lln_check,
    standard_levels,
    var_se,
    z_check,
)
from fpp1d.passage_times import Exponential, Uniform
from fpp1d.periodic_graph import VertexRef, build_tube


def walk_ensemble(rng, R, levels, mu=0.7, sigma=0.6, bias=None):
    """Gaussian random-walk surrogate with ``T_n = mu n + sigma W_n (+ bias(n))``."""
    levels = np.asarray(sorted(set(int(x) for x in levels)))
    top = int(levels.max())
    W = np.cumsum(rng.standard_normal((R, top)), axis=1)
    T = mu * levels[None, :] + sigma * np.where(levels[None, :] > 0, W[:, np.maximum(levels - 1, 0)], 0.0)
    if bias is not None:
        T = T + bias(levels)[None, :]
    return SampleEnsemble(levels, T, None, np.arange(R), 1, np.ones(R, dtype=bool))


def test_verdict_serialises():
    v = Verdict("x", np.float64(0.5), 1.0, True, {"arr": np.arange(3), "inf": math.inf})
    d = v.to_dict()
    assert d == {"check": "x", "statistic": 0.5, "threshold": 1.0, "pass": True, "arr": [0, 1, 2], "inf": "inf"}
    json.dumps(d)


def test_z_check():
    assert z_check("a", 1.0, 1.2, 0.1).passed
    assert not z_check("a", 1.0, 1.4, 0.1).passed


def test_standard_errors_match_normal_theory(rng):
    x = rng.standard_normal(200_000) * 2
    assert var_se(x) == pytest.approx(math.sqrt(2 / len(x)) * 4, rel=0.03)
    y = x + rng.standard_normal(len(x))
    # Var(XY - cov) for jointly normal pairs: var_x var_y + cov^2
    assert cov_se(x, y) == pytest.approx(math.sqrt((4 * 5 + 16) / len(x)), rel=0.03)


def test_clt_modes(rng):
    x = rng.standard_normal(10_000)
    v = clt_check(x, 1)
    assert v.passed and v.details["mode"] == "in-sample"
    assert clt_check(3 + 2 * x, 1, 3.0, 2.0).details["mode"] == "plug-in"
    assert clt_check(3 + 2 * x, 1, 3.0, 2.0).passed
    # wrong centring is caught in plug-in mode only
    assert not clt_check(x + 0.1, 1, 0.0, 1.0).passed
    assert not clt_check(rng.exponential(size=10_000), 1).passed


def test_clt_lattice_span(rng):
    x = 2 * rng.binomial(2000, 0.5, size=10_000) + 7
    raw = clt_check(x, 1)
    v = clt_check(x, 1, lattice=True, seed=3)
    assert v.details["lattice_span"] == 2
    assert v.passed and v.statistic < raw.statistic


def test_chi2_geometric(rng):
    assert chi2_geometric(rng.geometric(0.05, 5000)).passed
    assert not chi2_geometric(rng.poisson(20, 5000) + 1).passed
    with pytest.raises(ValueError):
        chi2_geometric([0, 1, 2])


def test_lag1_and_ks2(rng):
    assert lag1_check(rng.standard_normal(5000)).passed
    ar = np.zeros(5000)
    e = rng.standard_normal(5000)
    for k in range(1, 5000):
        ar[k] = 0.3 * ar[k - 1] + e[k]
    assert not lag1_check(ar).passed
    assert ks2_check(rng.random(2000), rng.random(2000)).passed
    assert not ks2_check(rng.random(2000), rng.random(2000) + 0.2).passed


def test_lln(rng):
    ens = walk_ensemble(rng, 500, [100, 400, 1600])
    assert lln_check(ens, 0.7, levels=(100, 400, 1600)).passed
    # a wrong centre leaves a plateau at the bias
    assert lln_check(ens, 0.5, levels=(100, 400, 1600)).statistic > 0.19
    # superlinear growth of T makes deviations increase
    grow = walk_ensemble(rng, 500, [100, 400, 1600], bias=lambda n: 1e-4 * n**2.0)
    assert not lln_check(grow, 0.7, levels=(100, 400, 1600)).passed


def test_lil_envelope(rng):
    lv = np.arange(1, 501)
    ens = walk_ensemble(rng, 1000, lv)
    assert lil_check(ens.T, lv, 0.7, 0.6, 500).passed
    # underestimating sigma by a factor 3 pushes extremes out of the envelope
    assert not lil_check(ens.T, lv, 0.7, 0.2, 500).passed


def test_donsker_on_random_walks(rng):
    n = 1000
    ens = walk_ensemble(rng, 4000, standard_levels(n, grid=(250, 500), step_levels=(500,)))
    t, P = donsker_paths(ens, n, 0.7, 0.6)
    assert t[0] == 0 and t[-1] == 1 and P.shape == (4000, 101)
    vs = donsker_check(ens, n, 0.7, 0.6)
    assert all(v.passed for v in vs), [v.to_dict() for v in vs if not v.passed]
    # a wrong sigma breaks the variance checks
    bad = donsker_check(ens, n, 0.7, 0.5)
    assert not all(v.passed for v in bad)


def test_drift_detects_growing_bias(rng):
    lv = (250, 500, 1000, 1001, 2000, 2001)
    ens = walk_ensemble(rng, 4000, lv)
    ok = drift_check(ens, 0.7, 0.36, grid=(250, 500, 1000, 2000), pair=(1000, 2000), step_levels=(1000, 2000), n_boot=100)
    assert all(v.passed for v in ok), [v.to_dict() for v in ok if not v.passed]
    # mean drift that keeps growing like sqrt(n) is not a constant
    ens2 = walk_ensemble(rng, 4000, lv, bias=lambda n: 0.5 * np.sqrt(n))
    bad = drift_check(ens2, 0.7, 0.36, grid=(250, 500, 1000, 2000), pair=(1000, 2000), step_levels=(), n_boot=100)
    assert not bad[0].passed
    # missing step levels are skipped, not errors
    assert len(drift_check(ens, 0.7, 0.36, grid=(250,), pair=(1000, 2000), step_levels=(1500,), n_boot=50)) == 2


@given(st.integers(10, 5000))
@settings(max_examples=30, deadline=None)
def test_standard_levels(n):
    lv = standard_levels(n, grid=(), step_levels=())
    assert lv[0] == 0 and lv[-1] == n
    assert np.all(np.diff(lv) > 0)
    t = np.arange(101) / 100
    assert set(np.floor(n * t + 1e-9).astype(int)) <= set(lv.tolist())


def test_generate_ensemble_deterministic(tube22, exp1):
    lv = [0, 5, 20]
    a = generate_ensemble(tube22, exp1, lv, 6, 99, workers=1)
    b = generate_ensemble(tube22, exp1, lv, 6, 99, workers=3)
    np.testing.assert_array_equal(a.T, b.T)
    np.testing.assert_array_equal(a.N, b.N)
    assert a.certified.all()
    assert np.all(a.col(0) == 0) and np.all(a.col(0, True) == 0)
    with pytest.raises(KeyError):
        a.col(7)
    assert a.subset(2).R == 2


def test_ensemble_csv(tmp_path, tube22, exp1):
    ens = generate_ensemble(tube22, exp1, [3, 4], 3, 1)
    p = tmp_path / "e.csv"
    ens.to_csv(p)
    rows = p.read_text().strip().splitlines()
    assert rows[0] == "replica,level,T,N" and len(rows) == 7


def test_calibration_registry():
    assert len(CALIBRATED_TESTS) >= 11
    v = calibrate("z_mean", meta=200, band=(0.0, 0.05))
    assert v.details["meta_replicas"] == 200 and v.passed
