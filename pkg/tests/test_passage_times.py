import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from fpp1d.passage_times import (
    Discrete,
    DistributionSchemaError,
    Exponential,
    Mixture,
    Scaled,
    Truncated,
    Uniform,
    WeightField,
    distribution_from_config,
    distribution_from_spec,
    inverse_cdf,
)
from fpp1d.periodic_graph import EdgeRef, VertexRef, build_tube

unit = st.floats(1e-9, 1 - 1e-9)

LAWS = [
    Exponential(1.0),
    Exponential(2.5),
    Uniform(0.0, 1.0),
    Uniform(0.5, 3.0),
    Discrete(((1.0, 0.5), (2.0, 0.5))),
    Discrete(((0.5, 0.2), (1.0, 0.3), (4.0, 0.5))),
    Mixture(((0.5, Uniform(0, 1)), (0.5, Discrete(((2.0, 1.0),))))),
    Scaled(Uniform(0, 1), 1.5),
]


@pytest.mark.parametrize("law", LAWS, ids=repr)
@given(u=unit)
@settings(max_examples=60, deadline=None)
def test_ppf_is_generalised_inverse(law, u):
    x = float(law.ppf(u))
    # F(x) >= u and F(x-) <= u
    assert float(law.cdf(x)) >= u - 1e-9
    assert float(law.cdf_left(x)) <= u + 1e-9


@pytest.mark.parametrize("law", LAWS, ids=repr)
def test_sampling_matches_cdf(law):
    u = (np.arange(20_000) + 0.5) / 20_000
    x = np.asarray(law.ppf(u))
    lo, hi = law.support()
    assert x.min() >= lo - 1e-12 and x.max() <= hi + 1e-12
    assert abs(x.mean() - law.mean()) < 0.02 * max(1.0, abs(law.mean()))


def test_continuous_laws_ks():
    rng = np.random.default_rng(3)
    for law, ref in ((Exponential(2.0), stats.expon(scale=0.5)), (Uniform(1, 3), stats.uniform(1, 2))):
        x = inverse_cdf(law, rng.random(5000))
        assert stats.kstest(x, ref.cdf).pvalue > 1e-3


def test_density_interval():
    a, b, c = Uniform(0, 2).density_interval()
    assert (a, b) == (0, 2) and c == pytest.approx(0.5)
    assert Discrete(((1.0, 1.0),)).density_interval() is None
    a, b, c = Exponential(1).density_interval()
    assert c <= np.exp(-b) + 1e-12
    a, b, c = Scaled(Uniform(0, 1), 2.0).density_interval()
    assert (a, b, c) == pytest.approx((0, 2, 0.5))


def test_truncated_conditional_law():
    base = Uniform(0, 1)
    t = Truncated(base, 0.0, 0.25)
    assert t.mass == pytest.approx(0.25)
    assert float(t.cdf(0.125)) == pytest.approx(0.5)
    d = Truncated(Discrete(((1.0, 0.5), (2.0, 0.5))), 0.0, 0.5)
    assert d.atoms() == [(1.0, pytest.approx(1.0))]


def test_discrete_validation():
    with pytest.raises(DistributionSchemaError):
        Discrete(((1.0, 0.5), (2.0, 0.4)))
    with pytest.raises(DistributionSchemaError):
        Discrete(((1.0, -0.5), (2.0, 1.5)))
    with pytest.raises(DistributionSchemaError):
        Uniform(1.0, 1.0)
    with pytest.raises(DistributionSchemaError):
        Exponential(0.0)


def test_config_roundtrip():
    for law in LAWS:
        assert distribution_from_config(law.to_config()) == law


@pytest.mark.parametrize(
    "spec,expected",
    [("exp:2", Exponential(2.0)), ("unif:0,1", Uniform(0.0, 1.0)), ("disc:1@0.5,2@0.5", Discrete(((1.0, 0.5), (2.0, 0.5))))],
)
def test_spec_parser(spec, expected):
    assert distribution_from_spec(spec) == expected


@pytest.mark.parametrize("bad", ["exp:x", "gauss:0,1", "unif:1", '{"type": "nope"}', '{"type": "uniform"}', "{broken"])
def test_spec_errors(bad):
    with pytest.raises(DistributionSchemaError):
        distribution_from_spec(bad)


def test_weight_field_is_a_pure_function(tube22, exp1):
    wf = WeightField(exp1, 9)
    W = wf.level_weights(tube22, -50, 50)
    assert W.shape == (101, tube22.n_slots)
    np.testing.assert_array_equal(W[60:70], wf.level_weights(tube22, 10, 19))
    assert wf.weight(tube22, EdgeRef(3, 1)) == W[53, 1]
    assert not np.array_equal(W, WeightField(exp1, 10).level_weights(tube22, -50, 50))


def test_overrides(tube22, exp1):
    wf = WeightField(exp1, 1)
    e = EdgeRef(4, 2)
    w2 = wf.with_overrides({e: 123.0})
    assert w2.weight(tube22, e) == 123.0
    assert w2.level_weights(tube22, 4, 4)[0, 2] == 123.0
    assert wf.weight(tube22, e) != 123.0
    other = EdgeRef(4, 1)
    assert w2.weight(tube22, other) == wf.weight(tube22, other)


def test_inverse_cdf_coupling_monotone(tube22):
    # same uniforms, stochastically larger law gives pointwise larger weights
    a = WeightField(Uniform(0, 1), 5).level_weights(tube22, 0, 200)
    b = WeightField(Scaled(Uniform(0, 1), 1.25), 5).level_weights(tube22, 0, 200)
    assert np.all(b >= a)
    np.testing.assert_allclose(b, 1.25 * a)


def test_nested_tubes_share_weights():
    small, big = build_tube(2, 2), build_tube(3, 2)
    wf = WeightField(Uniform(0, 1), 77)
    for s in range(small.n_slots):
        a, b = small.edge_vertices(EdgeRef(0, s))
        t = big.edge_between(VertexRef(a.level, a.index), VertexRef(b.level, b.index))
        assert wf.weight(small, EdgeRef(12, s)) == wf.weight(big, EdgeRef(12, t.slot))
