"""Independent reference computations used to cross-check the solvers.

Everything here is built from definitions (grids, sums, brute force), not
from the package's own fast paths, so a bug in an implementation cannot
hide inside its own test.
"""

import itertools

import numpy as np


def conjugate_grid(a: float, b: float, y: float,
                   v_span: float = 50.0, n: int = 200_001) -> float:
    """sup_v [y v - a|v| - b v^2] by brute grid search."""
    v = np.linspace(-v_span, v_span, n)
    return float(np.max(y * v - a * np.abs(v) - b * v * v))


def w1_quantile(m1, m2) -> float:
    """Wasserstein-1 as the exact quantile-function integral.

    Both step quantiles are constant between consecutive cumulative-weight
    breakpoints, so the integral is a finite sum over the merged breaks.
    """
    breaks = np.unique(np.concatenate([[0.0], np.cumsum(m1.weights),
                                       np.cumsum(m2.weights), [1.0]]))
    breaks = breaks[(breaks > 0) & (breaks <= 1)]
    total, prev = 0.0, 0.0
    for u in breaks:
        mid = 0.5 * (prev + u)
        q1 = quantile_steps(m1, mid)
        q2 = quantile_steps(m2, mid)
        total += (u - prev) * abs(float(q1) - float(q2))
        prev = u
    return total


def quantile_steps(m, u):
    """Right-continuous generalized inverse of the CDF, atom by atom."""
    cum = np.cumsum(m.weights)
    idx = np.searchsorted(cum, np.asarray(u), side="left")
    idx = np.clip(idx, 0, m.locations.size - 1)
    return m.locations[idx]


def call_potential_direct(m, k) -> float:
    return float(np.sum(m.weights * np.maximum(m.locations - k, 0.0)))


def delta_f_dense(mu, eta, grid) -> np.ndarray:
    return np.array([call_potential_direct(eta, k) - call_potential_direct(mu, k)
                     for k in grid])


def rectangle_increment(v_fn, fs, x1, x2, y1, y2) -> float:
    """Adjusted-cost increment over the rectangle (x1<x2, y1<y2)."""

    def c(x, y):
        return float(v_fn(y)) - float(v_fn(x)) - float(fs.cost(x, y - x))

    return c(x2, y2) + c(x1, y1) - c(x1, y2) - c(x2, y1)


def enumerate_paths(marginals):
    grids = [m.locations for m in marginals]
    return [tuple(float(v) for v in p) for p in itertools.product(*grids)]


def interp_cdf(m, y) -> float:
    """Piecewise-linear CDF through the atom cumulative weights."""
    return float(np.interp(y, m.locations, np.cumsum(m.weights)))


def mid_cdf(m, i: int) -> float:
    """CDF at the i-th atom, counting half of the atom's own mass."""
    cum = np.cumsum(m.weights)
    return float(cum[i] - 0.5 * m.weights[i])


def coupling_identity_residual(mu, eta, pp, x_idx: int,
                               t_down: float, t_up: float) -> float:
    """|F_eta(T_u) - F_mu(x) - DeltaF(T_d)| with interpolated CDFs."""
    lhs = interp_cdf(eta, t_up)
    rhs = mid_cdf(mu, x_idx) + float(pp.delta_f(t_down))
    return abs(lhs - rhs)


