import csv
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpp1d.coupling import (
    CertificateError,
    CouplingError,
    _block_end,
    _block_starts,
    _forced_params,
    _reduce_certificate,
    condition_a_certificate,
    couple_delayed_continuous,
    couple_delayed_discrete,
    couple_infections_continuous,
    couple_infections_discrete,
    detour_templates,
    tree_boundary_explicit,
    tree_branching_demo,
)
from fpp1d.fpp_core import time_and_length
from fpp1d.passage_times import Discrete, Exponential, Uniform, WeightField
from fpp1d.periodic_graph import EdgeRef, VertexRef, build_cylinder, build_tube
from fpp1d.regeneration import RegenParams, block_template


# -- delay walks -------------------------------------------------------------------


@given(st.floats(0.05, 3.0), st.integers(0, 2**31))
@settings(max_examples=15, deadline=None)
def test_continuous_delay_walk(T, seed):
    r = couple_delayed_continuous(Uniform(0, 1), T, seed=seed)
    s = r.state
    assert r.coupled and s.check_invariants()
    assert s.m * s.delta == pytest.approx(T)
    assert len(s.multipliers) >= s.N_c + 21
    assert r.identity_error() < 1e-9
    # after coupling the two sequences agree
    np.testing.assert_array_equal(r.tau[s.N_c :], r.tau_prime[s.N_c :])


def test_continuous_delay_doc_values():
    s = couple_delayed_continuous(Uniform(0, 1), 0.75, seed=1).state
    assert (s.delta, s.m) == (0.375, 2)


def test_continuous_delay_marginals():
    # both coordinates keep the law of tau
    r = couple_delayed_continuous(Exponential(1.0), 2.0, seed=5, extra=20_000)
    from scipy import stats

    assert stats.kstest(r.tau, "expon").pvalue > 1e-3
    assert stats.kstest(r.tau_prime, "expon").pvalue > 1e-3


@given(st.integers(0, 2**31))
@settings(max_examples=20, deadline=None)
def test_discrete_delay_walk(seed):
    dist = Discrete(((1.0, 0.5), (2.0, 0.5)))
    r = couple_delayed_discrete(dist, {2.0: 3}, {1.0: 3}, 3, seed=seed)
    s = r.state
    assert r.coupled and s.check_invariants()
    assert np.all(s.Z[s.N_c :] == 0)
    assert r.identity_error() == 0.0
    assert set(np.unique(np.concatenate([r.tau, r.tau_prime]))) <= {1.0, 2.0}


def test_reduce_certificate():
    a, b = _reduce_certificate([1.0, 2.0], {1.0: 1, 2.0: 2}, {1.0: 2, 2.0: 1}, 1)
    assert a.tolist() == [0, 1] and b.tolist() == [1, 0]
    with pytest.raises(CertificateError, match="sums differ"):
        _reduce_certificate([1.0, 2.0], {2.0: 1}, {1.0: 2}, 0)
    with pytest.raises(CertificateError, match="identity"):
        _reduce_certificate([1.0, 2.0], {2.0: 1}, {1.0: 1}, 2)
    with pytest.raises(CertificateError, match="not an atom"):
        _reduce_certificate([1.0, 2.0], {3.0: 1}, {1.0: 1}, 2)
    with pytest.raises(CertificateError, match="nonnegative"):
        _reduce_certificate([1.0, 2.0], {2.0: -1}, {1.0: -1}, -1)
    _reduce_certificate([0.1, 0.3], {0.3: 1}, {0.1: 1}, Fraction(0.3) - Fraction(0.1))


def test_condition_a_certificate():
    assert condition_a_certificate({1.0: 3, 1.5: -2}) == 1
    with pytest.raises(CertificateError, match="odd"):
        condition_a_certificate({1.0: 2, 2.0: -1, 3.0: -1} | {1.0: 2, 2.0: -1})
    with pytest.raises(CertificateError, match="not zero"):
        condition_a_certificate({1.0: 1})
    with pytest.raises(CertificateError, match="not atoms"):
        condition_a_certificate({1.0: 3, 1.5: -2}, atoms=[1.0, 2.0])


def test_delay_csv(tmp_path):
    r = couple_delayed_continuous(Uniform(0, 1), 0.75, seed=1)
    p = tmp_path / "w.csv"
    r.state.to_csv(p)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["step", "multiplier", "D"] and rows[1][1] == "2"


# -- infection couplings ----------------------------------------------------------


def test_identical_sets_are_trivially_coupled(tube22, exp1):
    rep, cf = couple_infections_continuous(tube22, exp1, [VertexRef(0, 1)], [VertexRef(0, 1)])
    assert rep.coupled and rep.N_c_level == 0 and rep.passed
    assert cf.differing_edges() == []


def test_coupling_errors(tube22):
    atoms = Discrete(((1.0, 0.5), (2.0, 0.5)))
    with pytest.raises(CouplingError):
        couple_infections_continuous(tube22, atoms, [VertexRef(0, 1)], [VertexRef(1, 2)])
    with pytest.raises(CouplingError):
        couple_infections_discrete(build_cylinder(3, 2), atoms, [VertexRef(0, 0)], [VertexRef(1, 0)])


def _plant(t, start, lo, hi):
    out = {}
    for r, s in zip(*np.nonzero(t.cheap)):
        out[EdgeRef(start + int(r), int(s))] = lo
    for r, s in zip(*np.nonzero(t.costly)):
        out[EdgeRef(start + int(r), int(s))] = hi
    return out


@pytest.mark.slow
def test_discrete_coupling_on_planted_field():
    """Regeneration and detour blocks planted by hand force the coupling to close.

    The planted field is not a sample of the product law, so only the
    deterministic parts of the report are checked.
    """
    cell = build_tube(2, 2)
    dist = Discrete(((1.0, 0.5), (2.0, 0.5)))
    params = _forced_params(cell, dist, RegenParams(1.0, 2.0, 1, 0.0))
    tmpl = block_template(cell, params.M)
    det, cdM = detour_templates(cell, params.t_lo, params.t_hi)
    B, Bcd = 2 * params.M + 1, 2 * cdM + 1
    I, I2 = (VertexRef(0, 1),), (VertexRef(1, 2),)
    base = WeightField(dist, 3)
    ov = {}
    for direction, origin in ((1, 1), (-1, -1)):
        s0 = int(_block_starts(origin, B, direction, 2, 3)[0])
        ov.update(_plant(tmpl, s0, 1.0, 2.0))
        f = base.with_overrides(ov)
        v = tmpl.pivot(s0, direction)
        dN = time_and_length(cell, f, I, [v])[1] - time_and_length(cell, f, I2, [v])[1]
        pos = _block_end(s0, params.M, direction) + direction
        for _ in range(abs(dN) // 2):
            s1 = int(_block_starts(pos, Bcd, direction, 1, 2)[0])
            ov.update(_plant(det.C if dN > 0 else det.D, s1, 1.0, 2.0))
            pos = _block_end(s1, cdM, direction) + direction
        for s1 in _block_starts(pos, B, direction, 0, 300):
            ov.update(_plant(tmpl, int(s1), 1.0, 2.0))
    rep, cf = couple_infections_discrete(
        cell, dist, I, I2, seed=3, base=base.with_overrides(ov), budget_levels=5000, n_marginal=2000
    )
    assert rep.coupled
    assert rep.equality_max_error == 0.0
    assert rep.bt_probes_equal and rep.walk_invariants_ok
    assert rep.details["positive"]["phase1_swaps"] + rep.details["negative"]["phase1_swaps"] >= 1
    assert len(cf.differing_edges()) > 0


# -- tree demo ----------------------------------------------------------------------


def test_tree_demo():
    d = tree_branching_demo(replicas=2000, seed=0, n_boot=200).verdict()
    assert d["pass"], d
    assert d["truncated_replicas"] == 0
    assert abs(d["lambda_hat_doubled_horizon"] - 1.0) < 0.05


def test_tree_explicit_matches_yule_mean():
    # E F_t = 3 e^t for the rate-one Yule process started at 3
    t = 2.0
    F = np.array([tree_boundary_explicit(t, seed=s) for s in range(3000)])
    se = F.std(ddof=1) / np.sqrt(len(F))
    assert abs(F.mean() - 3 * np.exp(t)) < 4 * se
    with pytest.raises(CouplingError):
        tree_boundary_explicit(20.0, max_nodes=1000)
