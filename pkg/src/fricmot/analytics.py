"""Execution statistics, comparative-statics sweeps, and limit experiments.

Per-kernel quantities are exact sums over atoms.  The conditional turnover
identity E[|Y - x|] = 2 theta (1 - theta) (T_u - T_d) is pure barycenter
algebra, so its residual measures nothing but the kernel's barycenter
quality.  Sweeps and schedules re-solve the one-step problem per cell with
the deterministic LP tie-break; monotonicity violations are reported as
findings, never silently clipped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvexOrderError, ValidationError
from .frictions import FrictionSpec, friction_cost
from .lp_oracle import (BiatomicRow, CouplingMatrix, extract_biatomic,
                        solve_onestep_friction)
from .measures import DiscreteMeasure, build_potential_pair, wasserstein1
from .onestep import BiatomicKernel, GridFunction, as_grid_function

ATOM_TOL = 1e-12


@dataclass(frozen=True)
class StepStats:
    """Aggregate execution statistics for one rebalancing step."""

    turnover: float            # E|Y - X|
    exec_cost: float           # E f(X, Y - X)
    band_mass: float           # mu-mass of no-trade atoms
    table: tuple               # per-atom rows, see step_stats
    bounds: dict = field(default_factory=dict)
    identity_residual: float = 0.0

    def check(self, tol: float = 1e-7) -> None:
        if self.turnover < -tol or self.exec_cost < -tol:
            raise ValidationError("negative execution statistics")
        hs = self.bounds.get("half_spread")
        if hs is not None and self.turnover > hs + tol:
            raise ValidationError("turnover exceeds the half-spread bound")


def _as_rows(kern):
    """Normalize a kernel or a list of two-point rows to plain arrays."""
    if isinstance(kern, BiatomicKernel):
        return (kern.x, kern.weights, kern.t_down, kern.t_up, kern.theta,
                kern.band.astype(bool))
    rows = list(kern)
    if not rows or not isinstance(rows[0], BiatomicRow):
        raise ValidationError("expected a kernel or two-point rows")
    x = np.array([r.x for r in rows])
    td = np.array([r.t_down for r in rows])
    tu = np.array([r.t_up for r in rows])
    th = np.array([r.theta for r in rows])
    bd = np.array([r.band for r in rows], dtype=bool)
    return x, None, td, tu, th, bd


def step_stats(kern, mu: DiscreteMeasure, fs: FrictionSpec,
               h=None) -> StepStats:
    """Exact per-atom and aggregate statistics for a two-point kernel.

    The bounds dict carries: half_spread (0.5 integral of the endpoint
    spread, an upper bound for turnover), alpha_lower and beta_lower (the
    two friction-cost lower bounds a_min*turnover and
    b_min * sum theta(1-theta) spread^2), and, when dual slopes h are
    supplied and the quadratic coefficient is positive, the slope-based
    turnover bound sum (|h| - a)_+ / (2 b) d mu, reported without being
    asserted.
    """
    x, w, td, tu, th, bd = _as_rows(kern)
    if w is None:
        w = np.zeros(x.size)
        for i, xi in enumerate(x):
            j = int(np.argmin(np.abs(mu.locations - xi)))
            w[i] = mu.weights[j]
    spread = tu - td
    cond_turn = 2.0 * th * (1.0 - th) * spread
    cond_turn_direct = th * (tu - x) + (1.0 - th) * (x - td)
    identity_residual = float(np.max(np.abs(cond_turn - cond_turn_direct))) \
        if x.size else 0.0
    cond_cost = (th * friction_cost(fs, x, tu - x)
                 + (1.0 - th) * friction_cost(fs, x, td - x))
    cond_turn = np.where(bd, 0.0, cond_turn)
    cond_cost = np.where(bd, 0.0, cond_cost)
    turnover = float(w @ cond_turn)
    exec_cost = float(w @ cond_cost)
    band_mass = float(w[bd].sum())
    a_min = fs.a.min_value()
    b_min = fs.b.min_value()
    bounds = {
        "half_spread": float(0.5 * (w @ np.where(bd, 0.0, spread))),
        "alpha_lower": a_min * turnover,
        "beta_lower": float(b_min * (w @ (th * (1 - th) * spread ** 2))),
    }
    if h is not None and b_min > 0:
        h = np.asarray(h, dtype=float)
        ax = np.asarray(fs.a(x), dtype=float)
        bx = np.asarray(fs.b(x), dtype=float)
        bounds["lq_slope_upper"] = float(
            w @ (np.maximum(np.abs(h) - ax, 0.0) / (2.0 * bx)))
    table = tuple(
        {"x": float(x[i]), "w": float(w[i]), "t_down": float(td[i]),
         "t_up": float(tu[i]), "theta": float(th[i]),
         "band": bool(bd[i]), "cond_turnover": float(cond_turn[i]),
         "cond_cost": float(cond_cost[i])}
        for i in range(x.size))
    return StepStats(turnover=turnover, exec_cost=exec_cost,
                     band_mass=band_mass, table=table, bounds=bounds,
                     identity_residual=identity_residual)


def row_endpoints(cm: CouplingMatrix, tol: float = ATOM_TOL,
                  band_tol: float = 1e-9):
    """Support extremes per source atom of an arbitrary coupling.

    Rows with more than two live targets have no two-point representation;
    here t_down/t_up are the support extremes and theta is the mass strictly
    above the source.  Band means the whole row sits on its own atom.
    """
    n = cm.x.size
    x = cm.x.copy()
    w = cm.probs.sum(axis=1)
    td = np.empty(n)
    tu = np.empty(n)
    th = np.zeros(n)
    bd = np.zeros(n, dtype=bool)
    for i in range(n):
        live = np.nonzero(cm.probs[i] > tol * max(w[i], tol))[0]
        if live.size == 0:
            td[i] = tu[i] = x[i]
            bd[i] = True
            continue
        ys = cm.y[live]
        td[i], tu[i] = float(ys.min()), float(ys.max())
        above = cm.probs[i, live][ys > x[i] + band_tol].sum()
        th[i] = float(above / w[i]) if w[i] > 0 else 0.0
        bd[i] = bool(live.size == 1 and abs(ys[0] - x[i]) <= band_tol)
    return x, w, td, tu, th, bd


def coupling_stats(cm: CouplingMatrix, fs: FrictionSpec,
                   band_tol: float = 1e-9) -> dict:
    """Exact statistics straight off a coupling matrix, no kernel needed."""
    disp = cm.y[None, :] - cm.x[:, None]
    fric = friction_cost(fs, np.broadcast_to(cm.x[:, None], cm.probs.shape), disp)
    x, w, td, tu, th, bd = row_endpoints(cm, band_tol=band_tol)
    return {
        "turnover": float(np.sum(cm.probs * np.abs(disp))),
        "exec_cost": float(np.sum(cm.probs * fric)),
        "band_mass": float(w[bd].sum()),
        "max_disp": float(np.max(np.abs(disp) * (cm.probs > ATOM_TOL)))
        if cm.probs.size else 0.0,
        "endpoints": (x, w, td, tu, th, bd),
    }


def _curvature_sup(v_fn, lo: float, hi: float, n: int = 513) -> float:
    g = as_grid_function(v_fn, lo, hi, n)
    d2 = np.gradient(np.gradient(g.values, g.grid), g.grid)
    # edge estimates of a second derivative are noise, drop them
    return float(np.max(d2[2:-2])) if d2.size > 4 else float(np.max(d2))


def sweep(mu: DiscreteMeasure, eta: DiscreteMeasure, v_fn,
          alpha_grid, beta_grid, base_alpha: float | None = None,
          base_beta: float | None = None, mono_tol: float = 1e-7) -> dict:
    """One-dimensional friction sweeps with monotonicity findings.

    Runs the alpha grid at a fixed base beta and the beta grid at a fixed
    base alpha, one LP solve per cell.  Expected directions: band_mass
    nondecreasing, turnover and per-atom displacements nonincreasing as
    either coefficient grows.  Violations beyond mono_tol are returned as
    findings together with a numeric report of the hypotheses under which
    the directions are guaranteed (positive atom weights, quadratic
    curvature dominating the payoff curvature).
    """
    alpha_grid = [float(a) for a in alpha_grid]
    beta_grid = [float(b) for b in beta_grid]
    if not alpha_grid or not beta_grid:
        raise ValidationError("sweep grids must be nonempty")
    base_alpha = alpha_grid[0] if base_alpha is None else float(base_alpha)
    base_beta = beta_grid[0] if base_beta is None else float(base_beta)
    lo = min(mu.locations.min(), eta.locations.min())
    hi = max(mu.locations.max(), eta.locations.max())
    rows = []
    violations = []

    def run_cell(kind, a, b):
        fs = FrictionSpec.make(a, b)
        cm, cert, info = solve_onestep_friction(mu, eta, v_fn, fs)
        st = coupling_stats(cm, fs)
        x, w, td, tu, th, bd = st["endpoints"]
        rows.append({
            "sweep": kind, "alpha": a, "beta": b, "value": info["value"],
            "band_mass": st["band_mass"], "turnover": st["turnover"],
            "exec_cost": st["exec_cost"], "max_disp": st["max_disp"],
        })
        return st

    prev = None
    for a in alpha_grid:
        st = run_cell("alpha", a, base_beta)
        if prev is not None:
            _mono_findings("alpha", a, prev, st, mono_tol, violations)
        prev = st
    prev = None
    for b in beta_grid:
        st = run_cell("beta", base_alpha, b)
        if prev is not None:
            _mono_findings("beta", b, prev, st, mono_tol, violations)
        prev = st

    hypotheses = {
        "atoms_positive": bool(np.all(mu.weights > 0) and np.all(eta.weights > 0)),
        "curvature_sup": _curvature_sup(v_fn, lo, hi),
        "curvature_dominated": bool(
            2.0 * min(beta_grid) > _curvature_sup(v_fn, lo, hi)),
    }
    return {"rows": rows, "violations": violations, "hypotheses": hypotheses}


def _mono_findings(kind, level, prev, cur, tol, out):
    if cur["band_mass"] < prev["band_mass"] - tol:
        out.append((kind, level, "band_mass decreased",
                    prev["band_mass"], cur["band_mass"]))
    if cur["turnover"] > prev["turnover"] + tol:
        out.append((kind, level, "turnover increased",
                    prev["turnover"], cur["turnover"]))
    _, _, ptd, ptu, _, _ = prev["endpoints"]
    x, _, ctd, ctu, _, _ = cur["endpoints"]
    if ptd.size == ctd.size:
        up = np.max((ctu - x) - (ptu - x))
        dn = np.max((x - ctd) - (x - ptd))
        worst = max(float(up), float(dn))
        if worst > tol:
            out.append((kind, level, "per-atom displacement grew", 0.0, worst))


def default_schedule(n_terms: int = 8, base: float = 0.4,
                     factor: float = 0.5):
    """(alpha_n, beta_n) = base * factor^n, n = 1..n_terms."""
    return [(base * factor ** n, base * factor ** n)
            for n in range(1, n_terms + 1)]


def vanishing_friction(mu: DiscreteMeasure, eta: DiscreteMeasure, v_fn,
                       schedule=None) -> list:
    """Shrinking-friction experiment against the frictionless reference.

    The reference optimizer is the frictionless LP solved with the same
    deterministic tie-break (the whole polytope is optimal when f vanishes,
    the tie-break picks the left-curtain vertex).  Per schedule entry the
    report carries the optimal value, the L1(mu) endpoint distance to the
    reference, a support-level coupling distance, and the touching-condition
    residual E_mu |V'(T_u) - V'(T_d)| over moving atoms.
    """
    schedule = default_schedule() if schedule is None else list(schedule)
    for a, b in schedule:
        if b <= 0:
            raise ValidationError("schedule needs beta > 0 at every step")
    lo = min(mu.locations.min(), eta.locations.min())
    hi = max(mu.locations.max(), eta.locations.max())
    v_grid = as_grid_function(v_fn, lo, hi, 1025)
    v_prime = v_grid.derivative()

    ref_cm, _, _ = solve_onestep_friction(mu, eta, v_fn,
                                          FrictionSpec.make(0.0, 0.0))
    rx, rw, rtd, rtu, _, _ = row_endpoints(ref_cm)
    rows = []
    for n, (a, b) in enumerate(schedule, start=1):
        fs = FrictionSpec.make(a, b)
        cm, cert, info = solve_onestep_friction(mu, eta, v_fn, fs)
        x, w, td, tu, th, bd = row_endpoints(cm)
        endpoint_l1 = float(w @ (np.abs(tu - rtu) + np.abs(td - rtd)))
        moving = ~bd
        if moving.any():
            resid = float(w[moving] @ np.abs(v_prime(tu[moving])
                                             - v_prime(td[moving]))
                          / w[moving].sum())
        else:
            resid = 0.0
        coupling_w1 = _coupling_distance(cm, ref_cm)
        rows.append({
            "n": n, "alpha": a, "beta": b, "value": info["value"],
            "endpoint_l1": endpoint_l1, "touching_residual": resid,
            "coupling_distance": coupling_w1,
        })
    return rows


def _coupling_distance(cm1: CouplingMatrix, cm2: CouplingMatrix) -> float:
    """Mu-average W1 distance between conditional rows."""
    total = 0.0
    for i in range(cm1.x.size):
        w = float(cm1.probs[i].sum())
        if w <= 0:
            continue
        m1 = _row_measure(cm1, i)
        m2 = _row_measure(cm2, i)
        total += w * wasserstein1(m1, m2)
    return total


def _row_measure(cm: CouplingMatrix, i: int) -> DiscreteMeasure:
    p = cm.probs[i]
    live = p > ATOM_TOL
    if not live.any():
        return DiscreteMeasure.point_mass(float(cm.x[i]))
    return DiscreteMeasure.from_atoms(cm.y[live], p[live] / p[live].sum())


def marginal_stability(mu: DiscreteMeasure, eta: DiscreteMeasure, v_fn,
                       fs: FrictionSpec, epsilons, seed: int = 0,
                       mode: str = "jitter") -> list:
    """Re-solve under perturbed source marginals and measure drift.

    Modes: "jitter" displaces mu's atoms by eps-scaled seeded noise,
    "contract" pulls them toward the mean by factor (1 - eps); contraction
    preserves convex order automatically, jitter is re-checked and rows
    whose perturbation breaks the order are reported with a note and no
    distances.  The rearrangement pairing matches sorted atoms one to one.
    """
    if mode not in ("jitter", "contract"):
        raise ValidationError("mode must be jitter or contract")
    rng = np.random.default_rng(seed)
    base_cm, _, _ = solve_onestep_friction(mu, eta, v_fn, fs)
    bx, bw, btd, btu, _, _ = row_endpoints(base_cm)
    scale = float(np.ptp(mu.locations)) or 1.0
    rows = []
    for eps in [float(e) for e in epsilons]:
        if mode == "contract":
            locs = mu.mean() + (1.0 - eps) * (mu.locations - mu.mean())
        else:
            noise = rng.standard_normal(mu.n)
            noise -= mu.weights @ noise / mu.weights.sum()  # keep the mean
            locs = mu.locations + eps * scale * noise
        order = np.argsort(locs, kind="stable")
        pert = DiscreteMeasure.from_atoms(locs[order], mu.weights[order])
        try:
            build_potential_pair(pert, eta)
        except ConvexOrderError as exc:
            rows.append({"eps": eps, "note": f"convex order broken: {exc}",
                         "w1_mu": wasserstein1(pert, mu)})
            continue
        cm, _, info = solve_onestep_friction(pert, eta, v_fn, fs)
        px, pw, ptd, ptu, _, _ = row_endpoints(cm)
        if px.size == bx.size:
            endpoint_l1 = float(bw @ (np.abs(ptu - btu) + np.abs(ptd - btd)))
        else:
            endpoint_l1 = float("nan")
        rows.append({
            "eps": eps,
            "w1_mu": wasserstein1(pert, mu),
            "endpoint_l1": endpoint_l1,
            "coupling_distance": _coupling_distance(cm, base_cm),
            "value": info["value"],
        })
    return rows


def rows_to_csv(path, rows, columns) -> None:
    """Plot-ready CSV with a fixed column order; floats via repr."""
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([_fmt(r.get(c, "")) for c in columns])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    return v
