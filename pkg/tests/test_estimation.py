import math

import numpy as np
import pytest

from fpp1d.estimation import (
    EstimationError,
    build_gamma_star,
    continuity_study,
    estimate_constants,
    estimate_from_field,
    mu_vs_K_study,
    visit_frequencies,
    worker_count,
)
from fpp1d.passage_times import Scaled, Uniform, WeightField
from fpp1d.periodic_graph import VertexRef, build_cylinder, build_line, build_tube
from fpp1d.regeneration import RegenParams, optimize_params, p_A_closed_form


def test_ratio_estimator_on_synthetic_increments(rng):
    # tau = 0.7 S + noise with variance 2 S: mu = 0.7, sigma^2 = 2
    n = 20_000
    S = 5 * rng.geometric(0.2, n)
    tau = 0.7 * S + rng.standard_normal(n) * np.sqrt(2 * S)
    N = 1.5 * S + rng.standard_normal(n) * np.sqrt(0.3 * S)
    e = estimate_constants(S, tau, N, n_boot=300, seed=1)
    assert abs(e.mu - 0.7) < 4 * e.se_mu
    assert abs(e.sigma2 - 2.0) < 4 * e.se_sigma2
    assert abs(e.alpha - 1.5) < 4 * e.se_alpha
    assert abs(e.sigmaN2 - 0.3) < 4 * e.se_sigmaN2
    assert e.mu_S == pytest.approx(S.mean())
    # bootstrap SE close to the delta-method value
    d = tau - e.mu * S
    delta_se = math.sqrt(np.mean(d**2) / n) / S.mean()
    assert e.se_mu == pytest.approx(delta_se, rel=0.2)


def test_estimator_guards():
    with pytest.raises(EstimationError):
        estimate_constants([1] * 5, [1] * 5)
    with pytest.raises(ValueError):
        estimate_constants([1] * 40, [1] * 39)
    e = estimate_constants([3] * 40, [3, 9] * 20)
    assert math.isnan(e.alpha)


def test_line_constants_closed_form():
    # on Z: mu = E tau, sigma^2 = Var tau, alpha = 1, sigma_N^2 = 0
    cell = build_line()
    law = Uniform(0, 1)
    params = optimize_params(law, cell)
    _, e = estimate_from_field(cell, law, 3, 3000, params=params)
    assert abs(e.mu - 0.5) < 4 * e.se_mu
    assert abs(e.sigma2 - 1 / 12) < 4 * e.se_sigma2
    assert e.alpha == pytest.approx(1.0) and e.sigmaN2 == pytest.approx(0.0, abs=1e-12)


def test_estimate_from_field_agrees_with_direct_travel_times(tube22):
    law = Uniform(0, 1)
    params = RegenParams(0.4, 0.6, 1, p_A_closed_form(law, tube22, 0.4, 0.6, 1))
    dec, e = estimate_from_field(tube22, law, 17, 200, params=params, lengths=False)
    assert len(dec.S) == 200 and e.n_increments == 200
    from fpp1d.fpp_core import travel_time

    x = np.array([travel_time(tube22, WeightField(law, s), VertexRef(0, 1), VertexRef(400, 1)).value / 400 for s in range(60)])
    se = math.hypot(x.std(ddof=1) / math.sqrt(len(x)), e.se_mu)
    # E[T_n]/n exceeds mu by O(1/n); allow the drift on top of 4 SE
    assert abs(x.mean() - e.mu) < 4 * se + 2 / 400


def test_estimate_budget_error(tube22, exp1):
    params = RegenParams(0.1, 0.2, 1, 1e-12)
    with pytest.raises(EstimationError):
        estimate_from_field(tube22, exp1, 0, 50, params=params, max_levels=10_000)


def test_mu_vs_K_nested_monotone():
    res = mu_vs_K_study(2, [1, 2, 3], Uniform(0, 1), replicas=12, n=200, seed=5)
    assert res["all_certified"]
    assert np.all(res["min_diffs"] >= 0)
    assert res["T"].shape == (12, 3)
    # K = 1 is the line
    assert res["rows"][0]["mu_hat"] == pytest.approx(0.5, abs=4 * res["rows"][0]["se"] + 1e-9)


def test_mu_vs_K_parallel_is_deterministic(monkeypatch):
    a = mu_vs_K_study(2, [1, 2], Uniform(0, 1), replicas=6, n=50, seed=2, workers=1)
    b = mu_vs_K_study(2, [1, 2], Uniform(0, 1), replicas=6, n=50, seed=2, workers=3)
    np.testing.assert_array_equal(a["T"], b["T"])
    monkeypatch.setenv("FPP_THREADS", "4")
    assert worker_count() == 4
    monkeypatch.setenv("FPP_THREADS", "junk")
    assert worker_count() == 1


def test_continuity_inverse_cdf_coupling(tube22):
    law = Uniform(0, 1)
    seq = [(f"m={m}", Scaled(law, 1 + 1 / m)) for m in (1, 4)]
    res = continuity_study(tube22, seq, ("limit", law), n=100, replicas=8, seed=1, workers=1)
    T = res["T"]
    # scaling all weights by c scales every passage time by c exactly
    np.testing.assert_allclose(T[:, 0], 2.0 * T[:, 2], rtol=1e-12)
    np.testing.assert_allclose(T[:, 1], 1.25 * T[:, 2], rtol=1e-12)
    assert res["rows"][0]["max_weight_gap"] == pytest.approx(1.0, abs=1e-3)


def test_gamma_star_frequencies():
    cell = build_tube(2, 2)
    law = Uniform(0, 1)
    params = optimize_params(law, cell)
    gs = build_gamma_star(cell, WeightField(law, 4), params, 0, 3000)
    assert gs.certified
    assert gs.rho[0] <= 0 + params.M and gs.rho[-1] >= 3000
    vs = gs.vertices
    assert vs[0] == gs.pivots[0] and vs[-1] == gs.pivots[-1]
    fr = visit_frequencies(gs)
    assert fr.freq.sum() == pytest.approx(fr.alpha)
    assert fr.alpha >= 1.0
    # mean weight per level of gamma* equals the block passage times per level
    assert fr.mu == pytest.approx(gs.tau.sum() / gs.S.sum(), rel=1e-9)
