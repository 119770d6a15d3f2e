"""Discrete marginals on the real line and their call-potential geometry.

A marginal is a finitely supported probability measure, stored as strictly
increasing atom locations with positive weights.  The call potential
``C(k) = sum_i w_i (x_i - k)^+`` is the piecewise-linear convex transform
that orders marginals: ``mu <= eta`` in convex order iff the means agree and
``C_eta >= C_mu`` everywhere.  The gap ``delta_f = C_eta - C_mu`` is
continuous, nonnegative under convex order, vanishes outside the convex hull
of the supports, and its strictly positive open intervals are the
irreducible components: mass starting inside a component stays inside it
under any martingale rearrangement, and atoms outside every component can
only stay put.

All call-potential bookkeeping here is exact (piecewise-linear arithmetic on
the merged support grid), since downstream solvers use these values as hard
constraints rather than approximations.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ButterflyArbitrageError,
    ConvexOrderError,
    ValidationError,
)

_WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely supported probability measure on the line.

    locations: strictly increasing 1-d array.
    weights:   positive, same length, summing to one within 1e-12.
    """

    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        locs = np.asarray(self.locations, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if locs.ndim != 1 or w.ndim != 1 or locs.size != w.size:
            raise ValidationError("locations and weights must be 1-d arrays of equal length")
        if locs.size == 0:
            raise ValidationError("measure needs at least one atom")
        if not np.all(np.isfinite(locs)) or not np.all(np.isfinite(w)):
            raise ValidationError("locations and weights must be finite")
        if np.any(np.diff(locs) <= 0):
            raise ValidationError("locations must be strictly increasing")
        if np.any(w <= 0):
            raise ValidationError("weights must be strictly positive")
        if abs(float(w.sum()) - 1.0) > _WEIGHT_TOL:
            raise ValidationError(
                f"weights sum to {w.sum():.17g}, off by more than {_WEIGHT_TOL}"
            )
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_atoms(cls, locations, weights, merge_tol: float = 0.0) -> "DiscreteMeasure":
        """Lenient constructor: sorts, merges duplicates, drops zero weights,
        and renormalizes away float drift in the total mass."""
        locs = np.asarray(locations, dtype=float).ravel()
        w = np.asarray(weights, dtype=float).ravel()
        if locs.size != w.size or locs.size == 0:
            raise ValidationError("need equally many locations and weights, at least one")
        if not np.all(np.isfinite(locs)) or not np.all(np.isfinite(w)):
            raise ValidationError("locations and weights must be finite")
        if np.any(w < -1e-14):
            raise ValidationError("weights must be nonnegative")
        order = np.argsort(locs, kind="stable")
        locs, w = locs[order], w[order]
        out_x, out_w = [], []
        for x, wi in zip(locs, w):
            if out_x and x - out_x[-1] <= merge_tol:
                # merge into the previous atom, weight-averaged location
                tot = out_w[-1] + wi
                if tot > 0:
                    out_x[-1] = (out_x[-1] * out_w[-1] + x * wi) / tot
                out_w[-1] = tot
            else:
                out_x.append(x)
                out_w.append(wi)
        x_arr = np.array(out_x)
        w_arr = np.array(out_w)
        keep = w_arr > 0
        x_arr, w_arr = x_arr[keep], w_arr[keep]
        total = w_arr.sum()
        if total <= 0:
            raise ValidationError("total mass must be positive")
        return cls(x_arr, w_arr / total)

    @classmethod
    def point_mass(cls, x: float) -> "DiscreteMeasure":
        return cls(np.array([float(x)]), np.array([1.0]))

    @property
    def n(self) -> int:
        return self.locations.size

    def mean(self) -> float:
        return float(self.weights @ self.locations)

    def second_moment(self) -> float:
        return float(self.weights @ self.locations**2)

    def cum_weights(self) -> np.ndarray:
        c = np.cumsum(self.weights)
        c[-1] = 1.0
        return c


def quantile_discretize(quantile_fn, n: int) -> DiscreteMeasure:
    """n-point midpoint quantile discretization of a continuous law.

    Atoms sit at Q((i - 1/2)/n) with uniform weights, which preserves the
    mean of symmetric laws exactly and keeps convex order between laws whose
    quantile functions are ordered in dispersion.
    """
    if n < 1:
        raise ValidationError("need n >= 1")
    u = (np.arange(n) + 0.5) / n
    locs = np.array([float(quantile_fn(ui)) for ui in u])
    return DiscreteMeasure.from_atoms(locs, np.full(n, 1.0 / n))


def cdf(m: DiscreteMeasure, x) -> np.ndarray | float:
    """Right-continuous distribution function F(x) = m((-inf, x])."""
    xs = np.asarray(x, dtype=float)
    idx = np.searchsorted(m.locations, xs, side="right")
    cum = np.concatenate([[0.0], m.cum_weights()])
    out = cum[idx]
    return float(out) if np.isscalar(x) or xs.ndim == 0 else out


def quantile(m: DiscreteMeasure, u) -> np.ndarray | float:
    """Left-continuous generalized inverse of the cdf, defined on (0, 1]."""
    us = np.asarray(u, dtype=float)
    if np.any(us <= 0.0) or np.any(us > 1.0):
        raise ValidationError("quantile argument must lie in (0, 1]")
    idx = np.searchsorted(m.cum_weights(), us, side="left")
    out = m.locations[idx]
    return float(out) if np.isscalar(u) or us.ndim == 0 else out


def call_potential(m: DiscreteMeasure, k) -> np.ndarray | float:
    """C(k) = E[(X - k)^+], exact via suffix sums; piecewise linear in k."""
    ks = np.atleast_1d(np.asarray(k, dtype=float))
    # suffix[i] = sum of weights (resp. weighted locations) for atoms >= i
    sw = np.concatenate([np.cumsum(m.weights[::-1])[::-1], [0.0]])
    sxw = np.concatenate([np.cumsum((m.weights * m.locations)[::-1])[::-1], [0.0]])
    idx = np.searchsorted(m.locations, ks, side="right")
    out = sxw[idx] - ks * sw[idx]
    out = np.maximum(out, 0.0)
    return float(out[0]) if np.isscalar(k) or np.asarray(k).ndim == 0 else out


def wasserstein1(m1: DiscreteMeasure, m2: DiscreteMeasure) -> float:
    """W1 distance, computed exactly as the area between the two cdfs.

    Both cdfs are constant between breakpoints of the merged support, so the
    integral is a finite sum; no quadrature error.
    """
    bps = np.union1d(m1.locations, m2.locations)
    if bps.size == 1:
        return 0.0
    f1 = cdf(m1, bps[:-1])
    f2 = cdf(m2, bps[:-1])
    return float(np.sum(np.abs(f1 - f2) * np.diff(bps)))


def convex_order_report(mu: DiscreteMeasure, eta: DiscreteMeasure) -> dict:
    """Worst-case diagnostics for the convex order check."""
    mean_gap = eta.mean() - mu.mean()
    bps = np.union1d(mu.locations, eta.locations)
    gap = call_potential(eta, bps) - call_potential(mu, bps)
    gap = np.atleast_1d(gap)
    i = int(np.argmin(gap))
    return {
        "mean_gap": float(mean_gap),
        "min_potential_gap": float(gap[i]),
        "worst_strike": float(bps[i]),
    }


def convex_order(mu: DiscreteMeasure, eta: DiscreteMeasure, tol: float = 1e-9) -> bool:
    """True iff means agree within tol and C_eta >= C_mu - tol on all
    breakpoints of the merged support (sufficient: both are piecewise linear
    with kinks only at support points)."""
    rep = convex_order_report(mu, eta)
    return abs(rep["mean_gap"]) <= tol and rep["min_potential_gap"] >= -tol


@dataclass(frozen=True)
class PotentialPair:
    """A convex-ordered pair (mu, eta) with its exact potential gap.

    delta_f values are stored on the merged support grid; the function is
    piecewise linear between breakpoints and zero outside them.  components
    lists the maximal open intervals where delta_f exceeds tol_component;
    each is a (lo, hi) pair of breakpoints at which delta_f vanishes.
    """

    mu: DiscreteMeasure
    eta: DiscreteMeasure
    breakpoints: np.ndarray
    values: np.ndarray
    components: tuple = field(default=())
    tol_component: float = 0.0

    def delta_f(self, k) -> np.ndarray | float:
        ks = np.asarray(k, dtype=float)
        out = np.interp(ks, self.breakpoints, self.values, left=0.0, right=0.0)
        return float(out) if np.isscalar(k) or ks.ndim == 0 else out

    def delta_f_prime(self, k) -> float:
        """Right derivative of delta_f at k (equals F_eta(k) - F_mu(k))."""
        return float(cdf(self.eta, k) - cdf(self.mu, k))

    def component_of(self, x: float) -> int:
        """Index of the open component containing x, or -1 (identity region)."""
        for i, (lo, hi) in enumerate(self.components):
            if lo < x < hi:
                return i
        return -1


def build_potential_pair(mu: DiscreteMeasure, eta: DiscreteMeasure,
                         tol: float = 1e-9) -> PotentialPair:
    """Exact potential gap and irreducible components of a convex-ordered pair.

    Raises ConvexOrderError when the pair fails the order check, reporting
    the worst strike.
    """
    rep = convex_order_report(mu, eta)
    if abs(rep["mean_gap"]) > tol or rep["min_potential_gap"] < -tol:
        raise ConvexOrderError(
            "pair is not in convex order: mean gap %.3e, worst potential gap %.3e at k=%.6g"
            % (rep["mean_gap"], rep["min_potential_gap"], rep["worst_strike"]),
            worst_strike=rep["worst_strike"],
            deficit=rep["min_potential_gap"],
        )
    bps = np.union1d(mu.locations, eta.locations)
    vals = np.atleast_1d(call_potential(eta, bps) - call_potential(mu, bps))
    vals = np.where(vals < 0.0, 0.0, vals)  # clip float dust, order already checked
    scale = max(1.0, float(np.max(np.atleast_1d(call_potential(eta, bps)))))
    tol_component = 1e-10 * scale
    components = []
    i, nbp = 0, bps.size
    while i < nbp:
        if vals[i] > tol_component:
            a = i
            while i < nbp and vals[i] > tol_component:
                i += 1
            lo = bps[a - 1] if a > 0 else bps[a]
            hi = bps[i] if i < nbp else bps[nbp - 1]
            components.append((float(lo), float(hi)))
        else:
            i += 1
    return PotentialPair(mu=mu, eta=eta, breakpoints=bps, values=vals,
                         components=tuple(components), tol_component=tol_component)


def from_call_prices(strikes, prices) -> tuple[DiscreteMeasure, dict]:
    """Recover a discrete marginal from call quotes by second differences.

    The curve slope left of the first strike is pinned to -1 (all mass at or
    above the first strike) and to 0 right of the last strike, so boundary
    mass lands on the extreme strikes.  The implied mean k_1 + c_1 is then
    restored exactly by shifting a single extreme atom.  Convexity violations
    raise ButterflyArbitrageError with the offending strike triple.
    """
    k = np.asarray(strikes, dtype=float).ravel()
    c = np.asarray(prices, dtype=float).ravel()
    if k.size != c.size or k.size < 2:
        raise ValidationError("need at least two strikes with matching prices")
    if not np.all(np.isfinite(k)) or not np.all(np.isfinite(c)):
        raise ValidationError("strikes and prices must be finite")
    if np.any(np.diff(k) <= 0):
        raise ValidationError("strikes must be strictly increasing")
    if np.any(c < 0):
        raise ValidationError("call prices must be nonnegative")
    scale = max(1.0, float(np.max(c)))
    tol = 1e-10 * scale

    slopes = np.diff(c) / np.diff(k)
    if np.any(slopes > tol):
        j = int(np.argmax(slopes))
        raise ButterflyArbitrageError(
            f"call prices increase between strikes {k[j]:.6g} and {k[j+1]:.6g}",
            triple=(float(k[j]), float(k[j + 1]), None), size=float(slopes[j]))
    if slopes[0] < -1.0 - tol:
        raise ButterflyArbitrageError(
            f"call slope {slopes[0]:.6g} below -1 between first two strikes",
            triple=(None, float(k[0]), float(k[1])), size=float(slopes[0] + 1.0))

    ext = np.concatenate([[-1.0], slopes, [0.0]])
    w = np.diff(ext)  # weight at each strike
    bad = np.where(w < -tol)[0]
    if bad.size:
        j = int(bad[0])
        lo = float(k[j - 1]) if j > 0 else None
        hi = float(k[j + 1]) if j + 1 < k.size else None
        raise ButterflyArbitrageError(
            f"butterfly at strike {k[j]:.6g}: second difference {w[j]:.3e} < 0",
            triple=(lo, float(k[j]), hi), size=float(w[j]))
    w = np.maximum(w, 0.0)
    total = w.sum()  # equals 1 by construction of the virtual slopes
    w = w / total

    target_mean = float(k[0] + c[0])
    locs = k.copy()
    m0 = float(w @ locs)
    shift = 0.0
    shifted_atom = None
    if abs(m0 - target_mean) > 1e-13 * scale:
        delta = target_mean - m0
        if delta >= 0:
            j = int(np.max(np.nonzero(w > 0)[0]))  # top atom moves right
        else:
            j = int(np.min(np.nonzero(w > 0)[0]))  # bottom atom moves left
        shift = delta / w[j]
        locs[j] += shift
        shifted_atom = j
    meas = DiscreteMeasure.from_atoms(locs, w)
    info = {
        "implied_mean": target_mean,
        "raw_mean": m0,
        "mean_shift": float(shift),
        "shifted_atom": shifted_atom,
        "left_boundary_mass": float(w[0]),
        "right_boundary_mass": float(w[-1]),
    }
    return meas, info


def read_measure_csv(path) -> tuple[DiscreteMeasure, dict]:
    """Load a marginal from CSV.

    Header must be either ``location,weight`` (direct atoms) or
    ``strike,call_price`` (Breeden-Litzenberger reconstruction).  Returns the
    measure plus a diagnostics dict whose ``kind`` field records which format
    was read.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise ValidationError(f"{path}: empty CSV")
    header = [cell.strip().lower() for cell in rows[0]]
    body = rows[1:]
    if not body:
        raise ValidationError(f"{path}: no data rows")

    def parse(rws, ncol):
        out = []
        for i, r in enumerate(rws):
            if len(r) < ncol:
                raise ValidationError(f"{path}: row {i + 2} has {len(r)} fields, needs {ncol}")
            try:
                vals = [float(r[j]) for j in range(ncol)]
            except ValueError as exc:
                raise ValidationError(f"{path}: row {i + 2}: {exc}") from None
            if any(math.isnan(v) or math.isinf(v) for v in vals):
                raise ValidationError(f"{path}: row {i + 2}: non-finite value")
            out.append(vals)
        return np.array(out)

    if header[:2] == ["location", "weight"]:
        data = parse(body, 2)
        meas = DiscreteMeasure.from_atoms(data[:, 0], data[:, 1])
        return meas, {"kind": "atoms", "rows": len(body)}
    if header[:2] == ["strike", "call_price"]:
        data = parse(body, 2)
        order = np.argsort(data[:, 0])
        meas, info = from_call_prices(data[order, 0], data[order, 1])
        info["kind"] = "call_prices"
        info["rows"] = len(body)
        return meas, info
    raise ValidationError(
        f"{path}: header must be 'location,weight' or 'strike,call_price', got {rows[0]}"
    )
