import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fricmot.errors import UnboundedError, ValidationError
from fricmot.frictions import (Coefficient, FrictionSpec, argmax_displacement,
                               conjugate, friction_cost, growth_check,
                               in_band, subgradient)

from oracles import conjugate_grid

finite = dict(allow_nan=False, allow_infinity=False)


def test_coefficient_constant_and_piecewise():
    c = Coefficient.make(0.3)
    assert c(0.0) == 0.3 and c(100.0) == 0.3
    p = Coefficient.make(([-1.0, 1.0], [0.1, 0.5]))
    assert p(-1.0) == pytest.approx(0.1)
    assert p(0.0) == pytest.approx(0.3)
    assert p(5.0) == pytest.approx(0.5)   # flat extrapolation
    assert p.min_value() == 0.1 and p.max_value() == 0.5


def test_coefficient_validation():
    with pytest.raises(ValidationError):
        Coefficient.make(-0.1)
    with pytest.raises(ValidationError):
        Coefficient.make(([1.0, 0.0], [0.1, 0.2]))  # decreasing grid


def test_cost_closed_form():
    fs = FrictionSpec.make(0.25, 0.1)
    assert friction_cost(fs, 0.0, 0.0) == 0.0
    assert friction_cost(fs, 0.0, 2.0) == pytest.approx(0.25 * 2 + 0.1 * 4)
    assert friction_cost(fs, 0.0, -2.0) == pytest.approx(0.25 * 2 + 0.1 * 4)
    # state dependence picks up a(x)
    fs2 = FrictionSpec.make(([-1.0, 1.0], [0.0, 1.0]), 0.0)
    assert friction_cost(fs2, 1.0, 1.0) == pytest.approx(1.0)
    assert friction_cost(fs2, -1.0, 1.0) == pytest.approx(0.0)


@given(st.floats(0, 0.5, **finite), st.floats(0.01, 0.5, **finite),
       st.floats(-3, 3, **finite))
@settings(max_examples=60, deadline=None)
def test_conjugate_matches_grid_oracle(a, b, y):
    fs = FrictionSpec.make(a, b)
    # span must cover the maximizer (|y| - a) / (2b)
    assert conjugate(fs, 0.0, y) == pytest.approx(
        conjugate_grid(a, b, y, v_span=200.0), abs=1e-6)


def test_conjugate_zero_quadratic():
    fs = FrictionSpec.make(0.3, 0.0)
    assert fs.has_zero_quadratic
    assert conjugate(fs, 0.0, 0.2) == 0.0   # inside the band: sup at v=0
    assert conjugate(fs, 0.0, -0.3) == 0.0  # boundary still attained
    assert conjugate(fs, 0.0, 0.31) == np.inf
    with pytest.raises(UnboundedError):
        argmax_displacement(fs, 0.0, 0.31)


@given(st.floats(0, 0.5, **finite), st.floats(0.01, 0.5, **finite),
       st.floats(-3, 3, **finite), st.floats(-5, 5, **finite))
@settings(max_examples=80, deadline=None)
def test_fenchel_young_inequality(a, b, h, v):
    fs = FrictionSpec.make(a, b)
    lhs = h * v
    rhs = friction_cost(fs, 0.0, v) + conjugate(fs, 0.0, h)
    assert lhs <= rhs + 1e-10


@given(st.floats(0, 0.5, **finite), st.floats(0.01, 0.5, **finite),
       st.floats(-4, 4, **finite))
@settings(max_examples=60, deadline=None)
def test_fenchel_young_equality_at_argmax(a, b, h):
    fs = FrictionSpec.make(a, b)
    v = argmax_displacement(fs, 0.0, h)
    gap = friction_cost(fs, 0.0, v) + conjugate(fs, 0.0, h) - h * v
    assert abs(gap) < 1e-10


def test_biconjugacy_on_grid():
    # f** recovered from the closed-form conjugate by a second grid sup
    fs = FrictionSpec.make(0.2, 0.15)
    hs = np.linspace(-6, 6, 4001)
    fstar = np.array([conjugate(fs, 0.0, h) for h in hs])
    for v in np.linspace(-2, 2, 21):
        fcc = np.max(hs * v - fstar)
        assert fcc == pytest.approx(friction_cost(fs, 0.0, v), abs=5e-4)


def test_subgradient_interval():
    fs = FrictionSpec.make(0.3, 0.1)
    lo, hi = subgradient(fs, 0.0, 0.0)
    assert (lo, hi) == (-0.3, 0.3)
    lo, hi = subgradient(fs, 0.0, 1.0)
    assert lo == pytest.approx(0.3 + 0.2)
    assert hi == pytest.approx(lo)


def test_in_band_boundary():
    fs = FrictionSpec.make(0.3, 0.1)
    assert in_band(fs, 0.0, 0.3)
    assert in_band(fs, 0.0, -0.3)
    assert not in_band(fs, 0.0, 0.3 + 1e-9)
    assert in_band(fs, 0.0, 0.3 + 1e-9, tol=1e-8)


def test_growth_check():
    fs = FrictionSpec.make(0.1, 0.2)
    ok = growth_check(fs, m=0.1, p=2.0, c=0.0)
    assert ok["holds"]
    degenerate = FrictionSpec.make(0.0, 0.0)
    assert not growth_check(degenerate, m=0.1, p=2.0, c=0.0)["holds"]
