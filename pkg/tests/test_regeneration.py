import math

import numpy as np
import pytest
from scipy import stats

from fpp1d.fpp_core import travel_time
from fpp1d.passage_times import Discrete, Exponential, Uniform, WeightField
from fpp1d.periodic_graph import EdgeRef, VertexRef, build_line, build_tube
from fpp1d.regeneration import (
    ParameterError,
    RegenParams,
    block_half_length,
    block_sizes,
    block_template,
    choose_params,
    detect_A,
    draw_delta,
    force_A,
    optimize_params,
    p_A_closed_form,
    scan_A,
    scan_regenerations,
    stopping_time_nu,
    verify_splitting,
)


def a_event_reference(cell, wf, params, n):
    """``A_n`` straight from the definition, edge by edge."""
    tmpl = block_template(cell, params.M)
    for r, s in zip(*np.nonzero(tmpl.cheap)):
        if not wf.weight(cell, EdgeRef(n + int(r), int(s))) <= params.t_lo:
            return False
    for r, s in zip(*np.nonzero(tmpl.costly)):
        if not wf.weight(cell, EdgeRef(n + int(r), int(s))) >= params.t_hi:
            return False
    return True


def test_block_half_length():
    assert block_half_length(1.0, 2.0, 1) == 2
    assert block_half_length(0.25, 0.75, 1) == 1
    assert block_half_length(1.0, 1.5, 3) == 7
    # M is the smallest integer with t'L/M < t'' - t'
    for t_lo, t_hi, L in ((0.3, 0.9, 1), (1.0, 1.1, 2), (0.01, 5.0, 4)):
        M = block_half_length(t_lo, t_hi, L)
        assert t_lo * L / M < t_hi - t_lo <= t_lo * L / (M - 1) if M > 1 else True


def test_block_template_shape(tube22):
    for M in (1, 2, 5):
        t = block_template(tube22, M)
        assert t.cheap.shape == (2 * M + 1, tube22.n_slots)
        assert not np.any(t.cheap & t.costly)
        n_hat, n_all = block_sizes(tube22, M)
        assert t.cheap.sum() == n_hat and (t.cheap | t.costly).sum() == n_all
        assert t.gamma[0].level == 0 and t.gamma[-1].level == 2 * M
        assert t.pivot(10).level == 10 + M


def test_choose_params_atoms(tube22, atoms12):
    p = choose_params(atoms12, tube22)
    assert p.t_lo == pytest.approx(4 / 3) and p.t_hi == pytest.approx(5 / 3)
    with pytest.raises(ParameterError):
        choose_params(Discrete(((1.0, 1.0),)), tube22)


def test_optimized_params_admissible(tube22):
    for law in (Exponential(1.0), Uniform(0, 1), Discrete(((1.0, 0.5), (2.0, 0.5)))):
        p = optimize_params(law, tube22)
        assert p.t_lo < p.t_hi
        assert p.M == block_half_length(p.t_lo, p.t_hi, tube22.L)
        assert p.p_A == pytest.approx(p_A_closed_form(law, tube22, p.t_lo, p.t_hi, p.M))
        assert p.p_A >= choose_params(law, tube22).p_A * (1 - 1e-9)


def test_scan_matches_definition(tube22):
    law = Uniform(0, 1)
    params = RegenParams(0.4, 0.6, 1, 0.0)
    wf = force_A(tube22, law, params, 17, 5)
    starts = np.arange(-300, 300)
    fast = scan_A(tube22, wf, params, starts, chunk=64)
    slow = np.array([a_event_reference(tube22, wf, params, int(n)) for n in starts])
    np.testing.assert_array_equal(fast, slow)
    assert fast.any()


def test_scan_rate_matches_closed_form(tube22):
    law = Uniform(0, 1)
    params = RegenParams(0.4, 0.6, 1, 0.0)
    p = p_A_closed_form(law, tube22, 0.4, 0.6, 1)
    starts = np.arange(0, 3 * 400_000, 3)  # disjoint blocks
    hits = scan_A(tube22, WeightField(law, 9), params, starts).sum()
    se = math.sqrt(p * (1 - p) / len(starts))
    assert abs(hits / len(starts) - p) < 4 * se


def test_force_A_and_exclusion(tube22, exp1):
    params = optimize_params(exp1, tube22)
    for seed in range(20):
        wf = force_A(tube22, exp1, params, 40, seed)
        assert detect_A(tube22, wf, params, 40)
        assert a_event_reference(tube22, wf, params, 40)
    tmpl = block_template(tube22, params.M)
    e = tmpl.special_edge(40, 1)
    bad = wf.with_overrides({e: 100.0})
    assert not detect_A(tube22, bad, params, 40)
    assert scan_A(tube22, bad, params, np.array([40]), exclude_special=1)[0]


@pytest.mark.parametrize("seed", range(15))
def test_splitting_on_forced_blocks(tube22, exp1, seed):
    params = optimize_params(exp1, tube22)
    wf = force_A(tube22, exp1, params, 20, seed)
    rng = np.random.default_rng(seed)
    u = VertexRef(int(rng.integers(-10, 21)), int(rng.integers(1, 3)))
    v = VertexRef(20 + 2 * params.M + int(rng.integers(0, 20)), int(rng.integers(1, 3)))
    chk = verify_splitting(tube22, wf, params, 20, u, v)
    assert chk.certified and chk.ok


def test_splitting_needs_valid_levels(tube22, exp1):
    params = optimize_params(exp1, tube22)
    with pytest.raises(ValueError):
        verify_splitting(tube22, WeightField(exp1, 0), params, 10, VertexRef(11, 1), VertexRef(40, 1))


def test_decomposition_structure(tube22):
    law = Uniform(0, 1)
    params = RegenParams(0.4, 0.6, 1, p_A_closed_form(law, tube22, 0.4, 0.6, 1))
    wf = WeightField(law, 3)
    dec = scan_regenerations(tube22, wf, params, [VertexRef(0, 1)], 60_000, lengths=True)
    P = params.period
    assert len(dec.rho) > 20
    assert np.all(np.diff(dec.rho) > 0)
    np.testing.assert_array_equal(dec.S, np.diff(dec.rho))
    assert np.all(dec.S % P == 0)
    assert dec.all_certified
    # increments add up to the total passage time to the last pivot
    total = travel_time(tube22, wf, [VertexRef(0, 1)], dec.pivots[-1]).value
    assert dec.T_first + dec.tau.sum() == pytest.approx(total, rel=1e-12)
    for k in range(3):
        assert dec.tau[k] == pytest.approx(travel_time(tube22, wf, dec.pivots[k], dec.pivots[k + 1]).value)


def test_increments_are_geometric(tube22):
    law = Uniform(0, 1)
    params = RegenParams(0.4, 0.6, 1, p_A_closed_form(law, tube22, 0.4, 0.6, 1))
    dec = scan_regenerations(tube22, WeightField(law, 11), params, [VertexRef(0, 1)], 400_000, times=False)
    k = dec.S // params.period
    p = dec.p_hat
    # lag-one independence and the geometric mean
    assert abs(np.corrcoef(k[:-1], k[1:])[0, 1]) < 4 / math.sqrt(len(k))
    assert abs(k.mean() - 1 / p) < 4 * math.sqrt((1 - p) / p**2 / len(k))


def test_nu_and_delta(tube22):
    law = Uniform(0, 1)
    params = RegenParams(0.4, 0.6, 1, 0.0)
    dec = scan_regenerations(tube22, WeightField(law, 2), params, [VertexRef(0, 1)], 5000, times=False)
    for n in (10, 100, 1000):
        k = stopping_time_nu(dec, n)
        assert dec.rho[k] >= n + params.M
        assert k == 0 or dec.rho[k - 1] < n + params.M
    with pytest.raises(ValueError):
        stopping_time_nu(dec, 10**6)
    ds = [draw_delta(s, 3) for s in range(3000)]
    assert set(ds) == set(range(7))
    assert stats.chisquare(np.bincount(ds)).pvalue > 1e-3


def test_line_regenerates_everywhere():
    # on Z every level is a cut vertex; blocks still work with L = 0
    cell = build_line()
    law = Uniform(0, 1)
    p = optimize_params(law, cell)
    assert p.p_A > 0
    dec = scan_regenerations(cell, WeightField(law, 1), p, [VertexRef(0, 1)], 2000)
    assert len(dec.rho) > 1 and dec.all_certified
