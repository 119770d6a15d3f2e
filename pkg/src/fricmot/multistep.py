"""Multi-period pricing by backward induction over marginal-constrained steps.

The value function V_t(x, state) is computed on a product grid of prices
(the marginal's atoms) and payoff states (running maximum, barrier flag,
running sum, or nothing for terminal payoffs).  At each time and state node
the one-step problem couples the full pair (mu_t, mu_{t+1}) with the
continuation folded into the cost,

    c(x, y) = V_{t+1}(reduce(state, y), y) - f_t(x, y - x),

and V_t(x, state) is the conditional row value of the optimal coupling.
The reported price is the mu_0 integral of V_0 at each atom's initial
state.  A brute-force path-space LP over explicit path weights serves as
the exactness oracle for small instances.

State grids are exact wherever cheap: running maxima live on the union of
the marginal supports, barrier flags on {0, 1}, running sums on the exact
reachable-sum set up to a size cap, beyond which a uniform grid with linear
interpolation in the state coordinate takes over (with a warning).
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
import scipy.sparse as sp

from .errors import ConvexOrderError, StructureError, ValidationError
from .frictions import FrictionSpec, friction_cost
from .lp_oracle import CouplingMatrix, DualCertificate, solve_lp
from .measures import DiscreteMeasure, build_potential_pair


@dataclass(frozen=True)
class PayoffSpec:
    """Payoff = terminal_eval(final state, final price) with a declared
    sufficient-statistic reducer.  Custom payoffs must bring their own
    reducer; the module refuses to guess one."""

    kind: str
    strike: float | None = None
    barrier: float | None = None
    state_reducer: object = None    # (state, y) -> state
    terminal_eval: object = None    # (state, y) -> real
    init_state: object = None       # (x0,) -> state

    @classmethod
    def terminal(cls, strike: float | None = None, payoff_fn=None) -> "PayoffSpec":
        if payoff_fn is None:
            if strike is None:
                raise ValidationError("terminal payoff needs a strike or a payoff_fn")
            payoff_fn = lambda y: max(y - strike, 0.0)
        return cls(kind="terminal", strike=strike,
                   state_reducer=lambda s, y: 0.0,
                   terminal_eval=lambda s, y: float(payoff_fn(y)),
                   init_state=lambda x: 0.0)

    @classmethod
    def custom_grid(cls, grid, values) -> "PayoffSpec":
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 2:
            raise ValidationError("custom payoff grid needs matching 1-d arrays")
        return cls(kind="custom-grid",
                   state_reducer=lambda s, y: 0.0,
                   terminal_eval=lambda s, y: float(np.interp(y, grid, values)),
                   init_state=lambda x: 0.0)

    @classmethod
    def lookback(cls, strike: float) -> "PayoffSpec":
        return cls(kind="lookback", strike=strike,
                   state_reducer=lambda s, y: max(s, y),
                   terminal_eval=lambda s, y: max(s - strike, 0.0),
                   init_state=lambda x: x)

    @classmethod
    def barrier(cls, strike: float, barrier: float) -> "PayoffSpec":
        # up-and-out call: the flag survives while the price stays below
        # the barrier, and the terminal call pays only on a live flag
        return cls(kind="barrier", strike=strike, barrier=barrier,
                   state_reducer=lambda s, y: s * (1.0 if y < barrier else 0.0),
                   terminal_eval=lambda s, y: s * max(y - strike, 0.0),
                   init_state=lambda x: 1.0 if x < barrier else 0.0)

    @classmethod
    def asian(cls, strike: float) -> "PayoffSpec":
        # average includes the initial fixing; the reducer tracks the sum
        # and the terminal leg divides by the number of fixings
        return cls(kind="asian", strike=strike,
                   state_reducer=lambda s, y: s + y,
                   terminal_eval=None,   # bound in backward_induction (needs N)
                   init_state=lambda x: x)

    @classmethod
    def custom(cls, state_reducer, terminal_eval, init_state) -> "PayoffSpec":
        if state_reducer is None or terminal_eval is None or init_state is None:
            raise ValidationError(
                "custom payoffs must declare state_reducer, terminal_eval and "
                "init_state; a sufficient statistic will not be guessed")
        return cls(kind="custom", state_reducer=state_reducer,
                   terminal_eval=terminal_eval, init_state=init_state)

    def bind(self, n_steps: int) -> "PayoffSpec":
        """Resolve fields that depend on the horizon (asian averaging)."""
        if self.kind != "asian" or self.terminal_eval is not None:
            return self
        return PayoffSpec(kind=self.kind, strike=self.strike, barrier=self.barrier,
                          state_reducer=self.state_reducer,
                          terminal_eval=_asian_eval(float(self.strike), n_steps + 1),
                          init_state=self.init_state)


def _asian_eval(strike: float, fixings: int):
    # the state entering terminal_eval has already absorbed the final price,
    # so the average is state / fixings
    def ev(s, y):
        return max(s / fixings - strike, 0.0)
    return ev


@dataclass(frozen=True)
class ContinuationGrid:
    """Per time t: (state grid, price grid, value matrix)."""

    state_grids: tuple
    price_grids: tuple
    values: tuple       # arrays of shape (n_state_t, n_price_t)

    def value_at(self, t: int, state: float, price_index: int) -> float:
        sg = self.state_grids[t]
        col = self.values[t][:, price_index]
        if sg.size == 1:
            return float(col[0])
        return float(np.interp(state, sg, col))


@dataclass(frozen=True)
class StepSolve:
    t: int
    state_index: int
    state: float
    coupling: CouplingMatrix
    certificate: DualCertificate
    lp_value: float


@dataclass(frozen=True)
class DppResult:
    grid: ContinuationGrid
    steps: tuple            # steps[t] = tuple of StepSolve per state node
    value: float
    sense: str
    audit: dict
    warnings: tuple = field(default=())


@dataclass
class DppOptions:
    sense: str = "max"
    tie_break: str | None = "twist"
    asian_cap: int = 5000
    asian_grid: int = 129
    check: bool = True


@dataclass(frozen=True)
class MultiCoupling:
    """State-independent per-step couplings chained from mu_0."""

    mu0: DiscreteMeasure
    steps: tuple

    def check(self, tol: float = 1e-8) -> None:
        for t, cm in enumerate(self.steps):
            if t == 0:
                if cm.x.shape != self.mu0.locations.shape or \
                        np.max(np.abs(cm.x - self.mu0.locations)) > 1e-12:
                    raise StructureError("step 0 rows do not match mu0")
            else:
                prev = self.steps[t - 1]
                if prev.y.shape != cm.x.shape or np.max(np.abs(prev.y - cm.x)) > 1e-12:
                    raise StructureError(f"step {t} rows do not chain from step {t - 1}")
                gap = np.max(np.abs(prev.probs.sum(axis=0) - cm.probs.sum(axis=1)))
                if gap > tol:
                    raise StructureError(
                        f"marginal chain mismatch {gap:.3e} between steps {t - 1} and {t}")


def _normalize_frictions(frictions, n_steps: int) -> list:
    if isinstance(frictions, FrictionSpec):
        return [frictions] * n_steps
    fr = list(frictions)
    if len(fr) != n_steps:
        raise ValidationError(f"need {n_steps} friction specs, got {len(fr)}")
    return fr


def _state_grids(marginals, payoff: PayoffSpec, cap: int, grid_n: int):
    """Exact reachable state sets per time where affordable."""
    n = len(marginals) - 1
    grids, exact, warn = [], True, []
    if payoff.kind in ("terminal", "custom-grid"):
        grids = [np.array([0.0])] * (n + 1)
    elif payoff.kind == "barrier":
        grids = [np.array([0.0, 1.0])] * (n + 1)
    elif payoff.kind == "lookback":
        acc = np.array([], dtype=float)
        for m in marginals:
            acc = np.unique(np.concatenate([acc, m.locations]))
            grids.append(acc.copy())
    elif payoff.kind == "asian":
        acc = marginals[0].locations.copy()
        grids.append(np.unique(acc))
        for m in marginals[1:]:
            acc = np.unique(np.round(
                (acc[:, None] + m.locations[None, :]).ravel(), 12))
            if acc.size > cap:
                exact = False
            grids.append(acc.copy())
        if not exact:
            warn.append(
                f"asian reachable-sum set exceeds {cap} states; "
                f"switching to a {grid_n}-point uniform state grid with "
                "linear interpolation")
            lo = sum(float(m.locations[0]) for m in marginals)
            hi = sum(float(m.locations[-1]) for m in marginals)
            grids = [np.linspace(min(lo, g[0]), max(hi, g[-1]), grid_n)
                     for g in grids]
    elif payoff.kind == "custom":
        raise ValidationError(
            "custom payoffs need an explicit state grid; use the exact kinds "
            "or discretize the custom state before calling")
    else:
        raise ValidationError(f"unknown payoff kind {payoff.kind!r}")
    return grids, exact, warn


def backward_induction(marginals, frictions, payoff: PayoffSpec,
                       opts: DppOptions | None = None) -> DppResult:
    """Price a path-dependent claim by per-state one-step LP solves.

    marginals is the list (mu_0, ..., mu_N) in convex order; frictions is
    one FrictionSpec or a list of N.  Returns the continuation grid, the
    per-(time, state) solver outputs, and the mu_0-integrated value.
    """
    opts = opts or DppOptions()
    if opts.sense not in ("max", "min"):
        raise ValidationError(f"sense must be 'max' or 'min', got {opts.sense!r}")
    marginals = list(marginals)
    n_steps = len(marginals) - 1
    if n_steps < 1:
        raise ValidationError("need at least two marginals")
    for m in marginals:
        if np.any(m.weights <= 0):
            raise ValidationError("multi-step marginals need strictly positive atom weights")
    fr = _normalize_frictions(frictions, n_steps)
    payoff = payoff.bind(n_steps)

    for t in range(n_steps):
        try:
            build_potential_pair(marginals[t], marginals[t + 1])
        except ConvexOrderError as e:
            raise ConvexOrderError(
                f"marginals at step {t} -> {t + 1} are not in convex order: {e}",
                worst_strike=e.worst_strike, deficit=e.deficit) from e

    state_grids, exact_states, warn = _state_grids(
        marginals, payoff, opts.asian_cap, opts.asian_grid)
    for w in warn:
        warnings.warn(w)

    n_t = len(marginals)
    values: list = [None] * n_t
    sg_n = state_grids[n_t - 1]
    pg_n = marginals[-1].locations
    v_n = np.empty((sg_n.size, pg_n.size))
    for si, s in enumerate(sg_n):
        for pi, y in enumerate(pg_n):
            v_n[si, pi] = payoff.terminal_eval(float(s), float(y))
    values[n_t - 1] = v_n

    all_steps: list = []
    audit = {"row_value_gap": 0.0}
    for t in range(n_steps - 1, -1, -1):
        mu_t, mu_n = marginals[t], marginals[t + 1]
        sg_t = state_grids[t]
        sg_next = state_grids[t + 1]
        v_next = values[t + 1]
        x = mu_t.locations
        y = mu_n.locations
        fric = friction_cost(fr[t], x[:, None], y[None, :] - x[:, None])
        v_t = np.empty((sg_t.size, x.size))
        solves = []
        for si, s in enumerate(sg_t):
            # continuation at the reduced state, looked up (or interpolated)
            # per target atom; reducers depend on (state, y) only
            cont = np.empty(y.size)
            for pi in range(y.size):
                s_next = payoff.state_reducer(float(s), float(y[pi]))
                if sg_next.size == 1:
                    cont[pi] = v_next[0, pi]
                else:
                    cont[pi] = float(np.interp(s_next, sg_next, v_next[:, pi]))
            if opts.sense == "max":
                cost = cont[None, :] - fric
            else:
                cost = cont[None, :] + fric
            cm, cert = solve_lp(mu_t, mu_n, cost, sense=opts.sense,
                                check=opts.check, tie_break=opts.tie_break)
            row_vals = (cm.probs * cost).sum(axis=1) / mu_t.weights
            v_t[si] = row_vals
            lp_val = float(np.sum(cm.probs * cost))
            audit["row_value_gap"] = max(
                audit["row_value_gap"],
                abs(float(mu_t.weights @ row_vals) - lp_val))
            solves.append(StepSolve(t=t, state_index=si, state=float(s),
                                    coupling=cm, certificate=cert,
                                    lp_value=lp_val))
        values[t] = v_t
        all_steps.append(tuple(solves))
    all_steps.reverse()

    sg0 = state_grids[0]
    total = 0.0
    for i, x0 in enumerate(marginals[0].locations):
        s0 = float(payoff.init_state(float(x0)))
        if sg0.size == 1:
            v0 = values[0][0, i]
        else:
            v0 = float(np.interp(s0, sg0, values[0][:, i]))
        total += float(marginals[0].weights[i]) * v0

    grid = ContinuationGrid(state_grids=tuple(state_grids),
                            price_grids=tuple(m.locations for m in marginals),
                            values=tuple(values))
    return DppResult(grid=grid, steps=tuple(all_steps), value=float(total),
                     sense=opts.sense, audit=audit, warnings=tuple(warn))


def subhedge_value(marginals, frictions, payoff: PayoffSpec,
                   opts: DppOptions | None = None) -> float:
    """Lower price bound: the same induction minimizing with friction added."""
    opts = opts or DppOptions()
    sub_opts = DppOptions(sense="min", tie_break=opts.tie_break,
                          asian_cap=opts.asian_cap, asian_grid=opts.asian_grid,
                          check=opts.check)
    return backward_induction(marginals, frictions, payoff, sub_opts).value


def compose_forward(mc, marginals=None, payoff: PayoffSpec | None = None,
                    prob_tol: float = 1e-12) -> list:
    """Explicit weighted path list from chained kernels.

    Accepts a MultiCoupling (state-independent steps) or a DppResult, whose
    state-dependent kernels are walked with the payoff's reducer (marginals
    and payoff are then required).  Returns [(path tuple, probability)].
    """
    if isinstance(mc, MultiCoupling):
        mc.check()
        paths = [((float(x),), float(w))
                 for x, w in zip(mc.mu0.locations, mc.mu0.weights) if w > 0]
        for cm in mc.steps:
            row_mass = cm.probs.sum(axis=1)
            nxt = []
            for path, w in paths:
                i = int(np.argmin(np.abs(cm.x - path[-1])))
                if abs(cm.x[i] - path[-1]) > 1e-9:
                    raise StructureError(f"path endpoint {path[-1]} not on step grid")
                if row_mass[i] <= 0:
                    continue
                for j in np.nonzero(cm.probs[i] > 0)[0]:
                    p = w * cm.probs[i, j] / row_mass[i]
                    if p > prob_tol:
                        nxt.append((path + (float(cm.y[j]),), p))
            paths = nxt
        return paths

    if isinstance(mc, DppResult):
        if marginals is None or payoff is None:
            raise ValidationError("DppResult composition needs marginals and payoff")
        payoff = payoff.bind(len(marginals) - 1)
        sgrids = mc.grid.state_grids
        paths = [((float(x),), float(w), float(payoff.init_state(float(x))))
                 for x, w in zip(marginals[0].locations, marginals[0].weights)]
        for t, solves in enumerate(mc.steps):
            sg = sgrids[t]
            nxt = []
            for path, w, s in paths:
                si = int(np.argmin(np.abs(sg - s))) if sg.size > 1 else 0
                cm = solves[si].coupling
                i = int(np.argmin(np.abs(cm.x - path[-1])))
                row = cm.probs[i]
                mass = row.sum()
                if mass <= 0:
                    continue
                for j in np.nonzero(row > 0)[0]:
                    p = w * row[j] / mass
                    if p > prob_tol:
                        y = float(cm.y[j])
                        nxt.append((path + (y,), p, float(payoff.state_reducer(s, y))))
            paths = nxt
        return [(path, w) for path, w, _ in paths]
    raise ValidationError(f"cannot compose {type(mc).__name__}")


def path_marginal(paths, t: int) -> DiscreteMeasure:
    """Coordinate-t marginal of a weighted path list."""
    acc: dict = {}
    for path, w in paths:
        acc[path[t]] = acc.get(path[t], 0.0) + w
    locs = np.array(sorted(acc))
    return DiscreteMeasure.from_atoms(locs, np.array([acc[v] for v in locs]))


def payoff_on_path(payoff: PayoffSpec, path) -> float:
    s = payoff.init_state(float(path[0]))
    for y in path[1:]:
        s = payoff.state_reducer(s, float(y))
    return float(payoff.terminal_eval(s, float(path[-1])))


def primal_value(paths, payoff: PayoffSpec, frictions) -> float:
    """Expected payoff minus accumulated friction over a weighted path list."""
    if not paths:
        return 0.0
    n_steps = len(paths[0][0]) - 1
    fr = _normalize_frictions(frictions, n_steps)
    payoff = payoff.bind(n_steps)
    total = 0.0
    for path, w in paths:
        fric = sum(float(friction_cost(fr[t], path[t], path[t + 1] - path[t]))
                   for t in range(n_steps))
        total += w * (payoff_on_path(payoff, path) - fric)
    return float(total)


def path_space_lp(marginals, frictions, payoff: PayoffSpec,
                  sense: str = "max") -> tuple[float, list]:
    """Exhaustive LP over explicit path weights; exponential, for oracles.

    Variables are the weights of every support path; constraints are the
    per-date marginals and the conditional martingale property at every
    history prefix.  The objective carries payoff minus (or, for the
    subhedging sense, plus) accumulated friction.
    """
    marginals = list(marginals)
    n_steps = len(marginals) - 1
    fr = _normalize_frictions(frictions, n_steps)
    payoff = payoff.bind(n_steps)
    supports = [m.locations for m in marginals]
    n_paths = int(np.prod([s.size for s in supports]))
    if n_paths > 200_000:
        raise ValidationError(f"path space too large ({n_paths} paths)")
    paths = list(itertools.product(*[range(s.size) for s in supports]))
    coord = [np.array([supports[t][p[t]] for p in paths]) for t in range(n_steps + 1)]

    rows, cols, data, b = [], [], [], []
    r = 0
    for t in range(n_steps + 1):
        for ai in range(supports[t].size):
            for k, p in enumerate(paths):
                if p[t] == ai:
                    rows.append(r); cols.append(k); data.append(1.0)
            b.append(float(marginals[t].weights[ai]))
            r += 1
    prefix_index: dict = {}
    for k, p in enumerate(paths):
        for t in range(n_steps):
            key = (t, p[:t + 1])
            if key not in prefix_index:
                prefix_index[key] = r
                b.append(0.0)
                r += 1
            rows.append(prefix_index[key]); cols.append(k)
            data.append(float(coord[t + 1][k] - coord[t][k]))
    a_eq = sp.csr_matrix((data, (rows, cols)), shape=(r, n_paths))

    obj = np.empty(n_paths)
    fsign = -1.0 if sense == "max" else 1.0
    for k, p in enumerate(paths):
        pth = tuple(float(supports[t][p[t]]) for t in range(n_steps + 1))
        fric = sum(float(friction_cost(fr[t], pth[t], pth[t + 1] - pth[t]))
                   for t in range(n_steps))
        obj[k] = payoff_on_path(payoff, pth) + fsign * fric
    sgn = -1.0 if sense == "max" else 1.0
    res = linprog(sgn * obj, A_eq=a_eq, b_eq=np.array(b), bounds=(0.0, None),
                  method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise StructureError(f"path-space LP failed: status={res.status}, {res.message}")
    value = float(obj @ res.x)
    out = [(tuple(float(supports[t][p[t]]) for t in range(n_steps + 1)), float(w))
           for p, w in zip(paths, res.x) if w > 1e-12]
    return value, out
