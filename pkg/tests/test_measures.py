import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fricmot.errors import (ButterflyArbitrageError, ConvexOrderError,
                            ValidationError)
from fricmot.measures import (DiscreteMeasure, build_potential_pair,
                              call_potential, cdf, convex_order,
                              convex_order_report, from_call_prices, quantile,
                              quantile_discretize, read_measure_csv,
                              wasserstein1)

from oracles import call_potential_direct, delta_f_dense, w1_quantile


def unif_pair(n=16):
    mu = quantile_discretize(lambda u: 2 * u - 1, n)
    eta = quantile_discretize(lambda u: 4 * u - 2, n)
    return mu, eta


def test_from_atoms_sorts_and_merges():
    m = DiscreteMeasure.from_atoms(np.array([1.0, -1.0, 1.0]),
                                   np.array([0.25, 0.5, 0.25]),
                                   merge_tol=1e-12)
    assert m.n == 2
    assert m.locations[0] == -1.0
    assert m.weights[1] == pytest.approx(0.5)


def test_weight_validation():
    # strict constructor rejects a bad total, the lenient one renormalizes
    with pytest.raises(ValidationError):
        DiscreteMeasure(np.array([0.0, 1.0]), np.array([0.5, 0.4]))
    m = DiscreteMeasure.from_atoms(np.array([0.0, 1.0]),
                                   np.array([0.5, 0.4]))
    assert m.weights.sum() == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        DiscreteMeasure.from_atoms(np.array([0.0]), np.array([-1.0]))


def test_cdf_quantile_roundtrip():
    m = DiscreteMeasure.from_atoms(np.array([0.0, 1.0, 3.0]),
                                   np.array([0.2, 0.5, 0.3]))
    assert cdf(m, -0.5) == 0.0
    assert cdf(m, 0.0) == pytest.approx(0.2)
    assert cdf(m, 2.0) == pytest.approx(0.7)
    assert quantile(m, 0.1) == 0.0
    assert quantile(m, 0.69) == 1.0
    assert quantile(m, 0.71) == 3.0


@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_wasserstein_matches_quantile_oracle(n, seed):
    rng = np.random.default_rng(seed)
    m1 = DiscreteMeasure.from_atoms(np.sort(rng.normal(size=n)),
                                    rng.dirichlet(np.ones(n)))
    m2 = DiscreteMeasure.from_atoms(np.sort(rng.normal(size=n)),
                                    rng.dirichlet(np.ones(n)))
    assert wasserstein1(m1, m2) == pytest.approx(w1_quantile(m1, m2),
                                                 abs=1e-10)


def test_call_potential_matches_direct():
    mu, _ = unif_pair()
    ks = np.linspace(-2, 2, 41)
    got = np.array([call_potential(mu, k) for k in ks])
    want = np.array([call_potential_direct(mu, k) for k in ks])
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_convex_order_uniform_pair():
    mu, eta = unif_pair()
    assert convex_order(mu, eta)
    assert not convex_order(eta, mu)
    rep = convex_order_report(eta, mu)
    assert rep["min_potential_gap"] < 0


def test_potential_pair_components_and_delta_f():
    mu, eta = unif_pair(24)
    pp = build_potential_pair(mu, eta)
    grid = np.linspace(-2.5, 2.5, 201)
    dense = delta_f_dense(mu, eta, grid)
    got = np.array([pp.delta_f(k) for k in grid])
    np.testing.assert_allclose(got, dense, atol=1e-9)
    # single irreducible component for nested uniforms
    assert len(pp.components) == 1
    lo, hi = pp.components[0]
    assert lo < -1 and hi > 1


def test_potential_pair_rejects_reversed():
    mu, eta = unif_pair()
    with pytest.raises(ConvexOrderError) as exc:
        build_potential_pair(eta, mu)
    assert exc.value.deficit is not None


def test_separated_components():
    mu = DiscreteMeasure.from_atoms(np.array([-2.0, 2.0]),
                                    np.array([0.5, 0.5]))
    eta = DiscreteMeasure.from_atoms(np.array([-3.0, -1.0, 1.0, 3.0]),
                                     np.array([0.25, 0.25, 0.25, 0.25]))
    pp = build_potential_pair(mu, eta)
    assert len(pp.components) == 2
    assert pp.component_of(-2.0) == 0
    assert pp.component_of(2.0) == 1
    assert pp.component_of(0.0) == -1  # between components


def test_breeden_litzenberger_roundtrip():
    # price calls from a known measure, reconstruct, compare
    target = DiscreteMeasure.from_atoms(np.array([0.5, 1.0, 1.5]),
                                        np.array([0.25, 0.5, 0.25]))
    strikes = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
    prices = np.array([call_potential_direct(target, k) for k in strikes])
    meas, info = from_call_prices(strikes, prices)
    assert wasserstein1(meas, target) < 1e-9


def test_butterfly_arbitrage_detected():
    strikes = np.array([0.0, 1.0, 2.0])
    prices = np.array([1.0, 0.1, 0.9])  # convexity violated
    with pytest.raises(ButterflyArbitrageError):
        from_call_prices(strikes, prices)


def test_read_measure_csv(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("location,weight\n0.0,0.5\n2.0,0.5\n")
    m, info = read_measure_csv(p)
    assert info["kind"] == "atoms"
    assert m.mean() == pytest.approx(1.0)
    bad = tmp_path / "bad.csv"
    bad.write_text("foo,bar\n1,2\n")
    with pytest.raises(ValidationError):
        read_measure_csv(bad)


@given(st.integers(3, 10), st.floats(0.05, 0.95), st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_contraction_preserves_convex_order(n, shrink, seed):
    # pulling atoms toward the mean can only go down in convex order
    rng = np.random.default_rng(seed)
    locs = np.sort(rng.normal(size=n))
    w = rng.dirichlet(np.ones(n))
    eta = DiscreteMeasure.from_atoms(locs, w)
    mean = eta.mean()
    mu = DiscreteMeasure.from_atoms(mean + shrink * (locs - mean), w,
                                    merge_tol=1e-12)
    assert convex_order(mu, eta, tol=1e-9)
