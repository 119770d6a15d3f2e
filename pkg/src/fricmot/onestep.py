"""Constructive one-step solver: band detection and endpoint shooting.

Off the no-trade band, the candidate kernel at a source atom x is a two-point
measure {T_d(x) <= x <= T_u(x)} with the barycenter weight
theta = (x - T_d)/(T_u - T_d).  The endpoints are shot from a 2x2 system per
atom: a mass identity ties T_u to T_d through the marginal CDFs,

    F_eta(T_u) = F_mu(x) + dF(T_d),        dF = call-potential gap,

and an equal-slope condition balances continuation slope against marginal
trading cost at both endpoints,

    V'(T_u) - d_v f(x, T_u - x) = V'(T_d) - d_v f(x, T_d - x).

Atoms are processed left to right inside each irreducible component; the
monotonicity of the endpoint maps (T_d nonincreasing, T_u nondecreasing)
is inherited through the bracket of the outer bisection.  CDF conventions:
the source CDF is evaluated at atom midpoints (half the atom's own weight),
the target CDF is interpolated piecewise-linearly between atoms, so the
inner inversion T_u = F_eta^{-1}(...) is continuous in T_d.

The bracket can be empty or the residual single-signed; those atoms are
clamped to the nearest feasible endpoint pair and tagged, never silently
dropped.  A collapsed bracket (both endpoints within tol_geo of x) is the
no-trade decision.  This mirrors the dual-side band characterization
(slope in the friction subgradient at zero) checked in the LP certificate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import MarginalMismatchError, StructureError, ValidationError
from .frictions import FrictionSpec, friction_cost
from .lp_oracle import CouplingMatrix
from .measures import DiscreteMeasure, PotentialPair, wasserstein1


class GridFunction:
    """Piecewise-linear function on a sorted grid with finite-difference slopes."""

    def __init__(self, grid, values):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 2:
            raise ValidationError("grid function needs matching 1-d grid and values, >= 2 points")
        if np.any(np.diff(grid) <= 0):
            raise ValidationError("grid must be strictly increasing")
        self.grid = grid
        self.values = values

    @classmethod
    def from_callable(cls, fn, lo: float, hi: float, n: int = 513) -> "GridFunction":
        g = np.linspace(lo, hi, n)
        return cls(g, np.asarray(fn(g), dtype=float))

    def __call__(self, x):
        return np.interp(x, self.grid, self.values)

    def derivative(self) -> "GridFunction":
        return GridFunction(self.grid, np.gradient(self.values, self.grid))

    def curvature_spikes(self, threshold: float) -> list[float]:
        """Grid points where |second difference ratio| exceeds threshold.

        Kinked continuations (running-maximum or indicator payoffs) show up
        here; the solver surfaces them as warnings rather than refusing.
        """
        d2 = np.gradient(np.gradient(self.values, self.grid), self.grid)
        idx = np.nonzero(np.abs(d2) > threshold)[0]
        return self.grid[idx].tolist()


def as_grid_function(v, lo: float, hi: float, n: int = 513) -> GridFunction:
    if isinstance(v, GridFunction):
        return v
    if callable(v):
        return GridFunction.from_callable(v, lo, hi, n)
    raise ValidationError("continuation must be a callable or a GridFunction")


@dataclass(frozen=True)
class MsmReport:
    min_rectangle_increment: float
    argmin_rectangle: tuple
    kappa_estimate: float

    @property
    def strict(self) -> bool:
        return self.min_rectangle_increment > 0.0


def msm_check(v_fn, fs: FrictionSpec, x_grid, y_grid,
              max_rectangles: int = 200_000, seed: int = 0) -> MsmReport:
    """Minimum rectangle increment of the adjusted cost over grid rectangles.

    The separable continuation parts cancel in every rectangle, so the
    increment is driven by the friction term alone; the continuation still
    enters the kappa (third-difference) estimate.  Above max_rectangles the
    rectangle set is subsampled with a fixed-seed generator.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    y_grid = np.asarray(y_grid, dtype=float)
    if x_grid.size < 2 or y_grid.size < 2:
        raise ValidationError("msm_check needs at least 2 points per grid")

    def ctilde(x, y):
        return np.asarray(v_fn(y), dtype=float) - np.asarray(v_fn(x), dtype=float) \
            - friction_cost(fs, x, y - x)

    nx, ny = x_grid.size, y_grid.size
    n_pairs_x = nx * (nx - 1) // 2
    n_pairs_y = ny * (ny - 1) // 2
    total = n_pairs_x * n_pairs_y

    if total <= max_rectangles:
        ix, jx = np.triu_indices(nx, k=1)
        iy, jy = np.triu_indices(ny, k=1)
        xa = x_grid[ix][:, None]; xb = x_grid[jx][:, None]
        ylo = y_grid[iy][None, :]; yhi = y_grid[jy][None, :]
    else:
        rng = np.random.default_rng(seed)
        m = max_rectangles
        ia = rng.integers(0, nx, size=m); ib = rng.integers(0, nx, size=m)
        ja = rng.integers(0, ny, size=m); jb = rng.integers(0, ny, size=m)
        keep = (x_grid[ia] < x_grid[ib]) & (y_grid[ja] < y_grid[jb])
        xa = x_grid[ia[keep]][:, None]; xb = x_grid[ib[keep]][:, None]
        ylo = y_grid[ja[keep]][:, None]; yhi = y_grid[jb[keep]][:, None]

    inc = ctilde(xa, ylo) + ctilde(xb, yhi) - ctilde(xa, yhi) - ctilde(xb, ylo)
    k = int(np.argmin(inc))
    if inc.ndim == 2:
        ki, kj = np.unravel_index(k, inc.shape)
        arg = (float(xa[ki, 0]), float(xb[ki, 0]), float(ylo[0, kj] if ylo.shape[0] == 1 else ylo[ki, 0]),
               float(yhi[0, kj] if yhi.shape[0] == 1 else yhi[ki, 0]))
        min_inc = float(inc[ki, kj])
    else:
        arg = (float(xa[k, 0]), float(xb[k, 0]), float(ylo[k, 0]), float(yhi[k, 0]))
        min_inc = float(inc[k])

    # kappa: smallest normalized third difference d/dx of the y-curvature
    kappa = np.inf
    xs = x_grid if nx <= 32 else x_grid[:: max(1, nx // 32)]
    ys = y_grid if ny <= 64 else y_grid[:: max(1, ny // 64)]
    for i in range(len(xs) - 1):
        x0, x1 = xs[i], xs[i + 1]
        for j in range(len(ys) - 2):
            y0, y1, y2 = ys[j], ys[j + 1], ys[j + 2]
            d0 = (ctilde(x1, y1) - ctilde(x0, y1) - ctilde(x1, y0) + ctilde(x0, y0)) \
                / ((x1 - x0) * (y1 - y0))
            d1 = (ctilde(x1, y2) - ctilde(x0, y2) - ctilde(x1, y1) + ctilde(x0, y1)) \
                / ((x1 - x0) * (y2 - y1))
            kappa = min(kappa, (d1 - d0) / (0.5 * (y2 - y0)))
    return MsmReport(min_rectangle_increment=min_inc, argmin_rectangle=arg,
                     kappa_estimate=float(kappa))


@dataclass
class GeoOptions:
    tol_mass: float = 1e-8
    tol_slope: float = 1e-7
    tol_geo: float = 1e-9
    max_bisect: int = 200
    scan_points: int = 257
    force: bool = False
    snap_tol: float | None = None
    kink_threshold: float = 50.0
    b_lower: float = 1e-12
    v_grid_size: int = 513


@dataclass(frozen=True)
class BiatomicKernel:
    """Per source atom: endpoints, weight, band flag, component id, status.

    status codes: 'band', 'interior' (residual root), 'clamp_tight',
    'clamp_wide' (single-signed residual on the feasible bracket),
    'forced' (bracket a single point).
    """

    x: np.ndarray
    weights: np.ndarray
    t_down: np.ndarray
    t_up: np.ndarray
    theta: np.ndarray
    band: np.ndarray
    component_id: np.ndarray
    status: tuple
    warnings: tuple = field(default=())

    def check(self, tol: float = 1e-9) -> None:
        off = ~self.band
        bc = self.theta * self.t_up + (1 - self.theta) * self.t_down - self.x
        if off.any() and np.max(np.abs(bc[off])) > tol:
            raise StructureError(f"barycenter violation {np.max(np.abs(bc[off])):.3e}")
        if not np.all(self.t_down <= self.x + tol) or not np.all(self.t_up >= self.x - tol):
            raise StructureError("endpoint ordering violated")
        for cid in np.unique(self.component_id):
            if cid < 0:
                continue
            m = (self.component_id == cid) & off
            if m.sum() >= 2:
                if np.any(np.diff(self.t_down[m]) > tol):
                    raise StructureError(f"t_down not nonincreasing on component {cid}")
                if np.any(np.diff(self.t_up[m]) < -tol):
                    raise StructureError(f"t_up not nondecreasing on component {cid}")

    def objective(self, v_fn, fs: FrictionSpec) -> float:
        vx = np.asarray(v_fn(self.x), dtype=float)
        vu = np.asarray(v_fn(self.t_up), dtype=float)
        vd = np.asarray(v_fn(self.t_down), dtype=float)
        up = vu - vx - friction_cost(fs, self.x, self.t_up - self.x)
        dn = vd - vx - friction_cost(fs, self.x, self.t_down - self.x)
        out = self.theta * up + (1 - self.theta) * dn
        out = np.where(self.band, 0.0, out)
        return float(np.sum(self.weights * out))


def _interp_cdf(m: DiscreteMeasure):
    cum = m.cum_weights()
    locs = m.locations

    def f(y):
        return float(np.interp(y, locs, cum))

    def finv(u):
        return float(np.interp(u, cum, locs))

    return f, finv


def _mid_cdf(m: DiscreteMeasure) -> np.ndarray:
    cum = m.cum_weights()
    return cum - 0.5 * m.weights


def solve_geometric(pp: PotentialPair, v, fs: FrictionSpec,
                    opts: GeoOptions | None = None) -> BiatomicKernel:
    """Shoot (T_d, T_u, theta) per source atom on each component.

    Refuses instances with a vanishing quadratic coefficient on a component
    (the inner inversion is then ill-posed) and instances failing the MSM
    grid check, unless opts.force is set.
    """
    opts = opts or GeoOptions()
    mu, eta = pp.mu, pp.eta
    span_lo = min(mu.locations[0], eta.locations[0])
    span_hi = max(mu.locations[-1], eta.locations[-1])
    vg = as_grid_function(v, span_lo, span_hi, opts.v_grid_size)
    vp = vg.derivative()
    warn: list[str] = []
    spikes = vg.curvature_spikes(opts.kink_threshold)
    if spikes:
        warn.append(f"continuation curvature spikes at {len(spikes)} grid points "
                    f"(first at {spikes[0]:.6g}); endpoints near kinks are finite-difference limited")

    if fs.b.min_value() <= opts.b_lower and not opts.force:
        raise ValidationError(
            "quadratic coefficient vanishes somewhere; the geometric shooting "
            "step is ill-posed there. Use the LP oracle or pass force=True.")
    rep = msm_check(vg, fs, mu.locations, eta.locations)
    if not rep.strict and not opts.force:
        raise ValidationError(
            f"MSM rectangle minimum {rep.min_rectangle_increment:.3e} is not strictly "
            "positive; selection may be non-unique. Pass force=True to proceed.")
    if not rep.strict:
        warn.append("degenerate MSM: selection not unique")

    f_eta, finv_eta = _interp_cdf(eta)
    fmu_mid = _mid_cdf(mu)

    n = mu.n
    t_down = np.array(mu.locations, dtype=float)
    t_up = np.array(mu.locations, dtype=float)
    theta = np.zeros(n)
    band = np.ones(n, dtype=bool)
    comp_id = np.full(n, -1, dtype=int)
    status: list[str] = ["band"] * n

    def slope_up(x, t):
        return float(vp(t)) - float(fs.a(x) + 2.0 * fs.b(x) * (t - x))

    def slope_dn(x, t):
        return float(vp(t)) - float(-fs.a(x) + 2.0 * fs.b(x) * (t - x))

    for cid, (lo, hi) in enumerate(pp.components):
        idx = [i for i in range(n) if lo < mu.locations[i] < hi]
        prev_td, prev_tu = None, None
        for i in idx:
            x = float(mu.locations[i])
            fx = float(fmu_mid[i])
            above = eta.locations[(eta.locations > x + opts.tol_geo)
                                  & (eta.locations <= hi)]
            y_next = float(above[0]) if above.size else None

            def raw_tu(td):
                u = fx + pp.delta_f(td)
                return min(finv_eta(min(u, 1.0)), hi)

            td_hi = x if prev_td is None else min(x, prev_td)
            td_lo = lo
            if td_hi - td_lo <= opts.tol_geo or y_next is None:
                t_down[i] = t_up[i] = x
                band[i] = True
                comp_id[i] = cid
                status[i] = "forced" if y_next is None else "band"
                continue

            # feasible bracket: the inner inversion must clear the next
            # target atom above x, otherwise the row cannot straddle
            grid = np.linspace(td_lo, td_hi, opts.scan_points)
            tu_grid = np.array([raw_tu(t) for t in grid])
            feas = tu_grid >= y_next - opts.tol_geo
            if prev_tu is not None:
                feas &= tu_grid >= prev_tu - opts.tol_geo
            if not feas.any():
                # band only when the atom genuinely need not move;
                # a strictly interior atom with no straddle is a structure
                # failure of the shooting step, recorded as forced identity
                t_down[i] = t_up[i] = x
                band[i] = True
                comp_id[i] = cid
                status[i] = "forced"
                continue

            def resid(td):
                return slope_up(x, raw_tu(td)) - slope_dn(x, td)

            fidx = np.nonzero(feas)[0]
            vals = np.array([resid(grid[k]) for k in fidx])
            sgn = np.sign(vals)
            changes = np.nonzero((sgn[:-1] * sgn[1:] < 0)
                                 & (np.diff(fidx) == 1))[0]
            if changes.size:
                # rightmost sign change: tightest straddle satisfying the FOC
                k = changes[-1]
                a_, b_ = grid[fidx[k]], grid[fidx[k + 1]]
                ra = resid(a_)
                for _ in range(opts.max_bisect):
                    mid = 0.5 * (a_ + b_)
                    rm = resid(mid)
                    if b_ - a_ <= opts.tol_geo:
                        break
                    if ra * rm <= 0:
                        b_ = mid
                    else:
                        a_, ra = mid, rm
                td = 0.5 * (a_ + b_)
                st = "interior"
            elif vals[-1] < 0:
                # slope condition wants a tighter straddle than mass flow
                # allows: take the tightest feasible one (largest td whose
                # inversion still clears y_next), refined on the boundary
                k = fidx[-1]
                td = grid[k]
                if k + 1 < grid.size and not feas[k + 1]:
                    a_, b_ = grid[k], grid[k + 1]
                    target = max(y_next, prev_tu if prev_tu is not None else y_next)
                    for _ in range(opts.max_bisect):
                        mid = 0.5 * (a_ + b_)
                        if b_ - a_ <= opts.tol_geo:
                            break
                        if raw_tu(mid) >= target - opts.tol_geo:
                            a_ = mid
                        else:
                            b_ = mid
                    td = a_
                st = "clamp_tight"
            else:
                td = grid[fidx[0]]   # slope wants wider than the component
                st = "clamp_wide"
            tu = raw_tu(td)
            if prev_tu is not None:
                tu = max(tu, prev_tu)
            tu = max(tu, y_next)
            t_down[i], t_up[i] = td, tu
            theta[i] = (x - td) / (tu - td)
            band[i] = False
            comp_id[i] = cid
            status[i] = st
            prev_td, prev_tu = td, tu

    kern = BiatomicKernel(x=mu.locations.copy(), weights=mu.weights.copy(),
                          t_down=t_down, t_up=t_up, theta=theta, band=band,
                          component_id=comp_id, status=tuple(status),
                          warnings=tuple(warn))
    kern.check(tol=max(opts.tol_mass, 1e-9))
    return kern


def equal_slope_residual(kern: BiatomicKernel, v, fs: FrictionSpec,
                         v_grid_size: int = 513) -> np.ndarray:
    """Per-atom residual of the two-endpoint slope condition.

    Band atoms return 0 by convention.  The friction subgradient is selected
    consistently with the sign of the displacement, so a frictionless spec
    reduces the residual to V'(T_u) - V'(T_d).
    """
    lo = float(min(kern.t_down.min(), kern.x.min()))
    hi = float(max(kern.t_up.max(), kern.x.max()))
    vg = as_grid_function(v, lo, hi, v_grid_size)
    vp = vg.derivative()
    up = np.asarray(vp(kern.t_up)) - (fs.a(kern.x) + 2 * fs.b(kern.x) * (kern.t_up - kern.x))
    dn = np.asarray(vp(kern.t_down)) - (-fs.a(kern.x) + 2 * fs.b(kern.x) * (kern.t_down - kern.x))
    r = up - dn
    return np.where(kern.band, 0.0, r)


def kernel_to_coupling(kern: BiatomicKernel, mu: DiscreteMeasure,
                       eta: DiscreteMeasure | None = None,
                       snap_tol: float | None = None,
                       mismatch_tol: float | None = None) -> CouplingMatrix:
    """Materialize the kernel as a coupling matrix.

    With a target measure supplied, endpoints are snapped to its atoms
    within snap_tol (default: half the smallest target spacing) and the
    matrix columns are the target atoms; the pushforward gap to eta is
    measured in W1 and raises MarginalMismatchError beyond mismatch_tol.
    Without eta, columns are the raw endpoint values.
    """
    if kern.x.shape != mu.locations.shape or np.max(np.abs(kern.x - mu.locations)) > 1e-12:
        raise ValidationError("kernel atoms do not match the source measure")

    if eta is not None:
        targets = eta.locations
        if snap_tol is None:
            gaps = np.diff(targets)
            snap_tol = 0.5 * float(gaps.min()) if gaps.size else np.inf

        def snap(t):
            j = int(np.argmin(np.abs(targets - t)))
            return float(targets[j]) if abs(targets[j] - t) <= snap_tol else float(t)
    else:
        def snap(t):
            return float(t)

    entries = []
    for i in range(kern.x.size):
        if kern.band[i]:
            pairs = [(float(kern.x[i]), 1.0)]
        else:
            pairs = [(snap(float(kern.t_down[i])), 1.0 - float(kern.theta[i])),
                     (snap(float(kern.t_up[i])), float(kern.theta[i]))]
        for y, p in pairs:
            if p > 0:
                entries.append((i, y, p * float(kern.weights[i])))
    ys = np.array(sorted({y for _, y, _ in entries}), dtype=float)
    order = {y: k for k, y in enumerate(ys.tolist())}
    probs = np.zeros((kern.x.size, ys.size))
    for i, y, p in entries:
        probs[i, order[y]] += p
    col = probs.sum(axis=0)
    cm = CouplingMatrix(x=mu.locations, y=ys, probs=probs,
                        mu_weights=mu.weights, eta_weights=col)
    if eta is not None and mismatch_tol is not None:
        push = DiscreteMeasure.from_atoms(ys[col > 0], col[col > 0])
        gap = wasserstein1(push, eta)
        if gap > mismatch_tol:
            raise MarginalMismatchError(
                f"kernel pushforward is W1={gap:.4g} from the target "
                f"(tolerance {mismatch_tol:.4g})", w1_gap=gap)
    return cm


def pushforward_distance(kern: BiatomicKernel, eta: DiscreteMeasure) -> float:
    """W1 distance between the kernel pushforward and the target."""
    pts = np.concatenate([kern.x[kern.band],
                          kern.t_down[~kern.band], kern.t_up[~kern.band]])
    ws = np.concatenate([kern.weights[kern.band],
                         kern.weights[~kern.band] * (1 - kern.theta[~kern.band]),
                         kern.weights[~kern.band] * kern.theta[~kern.band]])
    keep = ws > 0
    push = DiscreteMeasure.from_atoms(pts[keep], ws[keep], merge_tol=1e-12)
    return wasserstein1(push, eta)
