"""Exact linear-programming oracle for one-step martingale transport.

The primal problem couples a source marginal mu (n atoms) to a target
marginal eta (m atoms) through nonnegative joint probabilities constrained
by both marginals and by the per-atom barycenter (martingale) condition

    sum_y pi(x, y) = mu(x),   sum_x pi(x, y) = eta(y),
    sum_y pi(x, y) (y - x) = 0            for every source atom x.

Optimizing a cost over this polytope is the reference answer against which
the constructive solvers are judged, so this module favors verifiable
exactness: every solve returns both the optimal coupling and a dual
certificate (phi, psi, h) whose feasibility and complementary slackness are
re-checked independently of the solver internals.

The generic simplex engine is delegated to HiGHS (via scipy); everything
specific to martingale transport - constraint assembly, redundancy handling,
the psi(y_0) = 0 gauge, certificate verification, bi-atomic extraction and
the left-monotone support scan - lives here.  One column-mass constraint is
dropped before solving: the marginals make it redundant, and dropping the
first one pins the dual gauge psi(y_0) = 0 at the smallest target atom.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import InfeasibleError, StructureError
from .measures import DiscreteMeasure, convex_order_report

MARGINAL_TOL = 1e-9
GAP_TOL = 1e-8
DUAL_FEAS_TOL = 1e-9
SLACK_TOL = 1e-8
SUPPORT_TOL = 1e-9


@dataclass(frozen=True)
class CouplingMatrix:
    """Dense coupling with verified marginal and barycenter residuals."""

    x: np.ndarray
    y: np.ndarray
    probs: np.ndarray
    mu_weights: np.ndarray
    eta_weights: np.ndarray

    def residuals(self) -> dict:
        row = self.probs.sum(axis=1) - self.mu_weights
        col = self.probs.sum(axis=0) - self.eta_weights
        bary = self.probs @ self.y - self.mu_weights * self.x
        return {
            "row": float(np.max(np.abs(row))),
            "col": float(np.max(np.abs(col))),
            "barycenter": float(np.max(np.abs(bary))),
        }

    def check(self, tol: float = MARGINAL_TOL) -> None:
        r = self.residuals()
        bad = {k: v for k, v in r.items() if v > tol}
        if bad:
            raise StructureError(f"coupling residuals exceed {tol}: {bad}")

    def support(self, tol: float = SUPPORT_TOL) -> list[tuple[int, int]]:
        ii, jj = np.nonzero(self.probs > tol)
        return list(zip(ii.tolist(), jj.tolist()))

    def evaluate(self, cost: np.ndarray) -> float:
        return float(np.sum(self.probs * cost))


@dataclass(frozen=True)
class DualCertificate:
    """Potentials phi (source), psi (target), predictable slope h (source).

    sense='min': phi(x) + psi(y) + h(x)(y - x) <= cost(x, y) everywhere,
    with equality on the support; value = mu(phi) + eta(psi) equals the
    primal minimum.  sense='max' flips the inequality.  psi is gauged to
    vanish at the smallest target atom.
    """

    phi: np.ndarray
    psi: np.ndarray
    h: np.ndarray
    value: float
    sense: str

    def feasibility_violation(self, x, y, cost) -> float:
        """Largest violation of the sign-correct pointwise inequality."""
        lhs = self.phi[:, None] + self.psi[None, :] + self.h[:, None] * (y[None, :] - x[:, None])
        gap = cost - lhs if self.sense == "min" else lhs - cost
        return float(np.max(-gap))

    def slackness_violation(self, cm: CouplingMatrix, cost,
                            support_tol: float = SUPPORT_TOL) -> float:
        """Largest complementarity product prob * |dual slack| over cells.

        The product form tolerates vanishing dust mass on slack cells,
        which alternative optimizers within solver tolerance can carry.
        """
        del support_tol  # kept for signature stability
        lhs = (self.phi[:, None] + self.psi[None, :]
               + self.h[:, None] * (cm.y[None, :] - cm.x[:, None]))
        gap = np.abs(cost - lhs)
        return float(np.max(cm.probs * gap))


def _cost_matrix(mu: DiscreteMeasure, eta: DiscreteMeasure, cost) -> np.ndarray:
    if callable(cost):
        c = np.asarray(cost(mu.locations[:, None], eta.locations[None, :]), dtype=float)
    else:
        c = np.asarray(cost, dtype=float)
    if c.shape != (mu.n, eta.n):
        raise StructureError(f"cost has shape {c.shape}, expected {(mu.n, eta.n)}")
    if not np.all(np.isfinite(c)):
        raise StructureError("cost matrix contains non-finite entries")
    return c


def _assemble(mu: DiscreteMeasure, eta: DiscreteMeasure):
    """Equality system over the n*m coupling variables.

    Rows: n source-mass, (m - 1) target-mass (the first is implied and its
    omission fixes psi(y_0) = 0), n barycenter rows.
    """
    n, m = mu.n, eta.n
    x, y = mu.locations, eta.locations
    nv = n * m

    rows, cols, vals = [], [], []
    for i in range(n):
        rows.extend([i] * m)
        cols.extend(range(i * m, (i + 1) * m))
        vals.extend([1.0] * m)
    for j in range(1, m):
        rows.extend([n + j - 1] * n)
        cols.extend(range(j, nv, m))
        vals.extend([1.0] * n)
    off = n + m - 1
    for i in range(n):
        rows.extend([off + i] * m)
        cols.extend(range(i * m, (i + 1) * m))
        vals.extend((y - x[i]).tolist())
    a_eq = sp.csr_matrix((vals, (rows, cols)), shape=(off + n, nv))
    b_eq = np.concatenate([mu.weights, eta.weights[1:], np.zeros(n)])
    return a_eq, b_eq


def solve_lp(mu: DiscreteMeasure, eta: DiscreteMeasure, cost, sense: str = "min",
             check: bool = True,
             tie_break: str | None = None) -> tuple[CouplingMatrix, DualCertificate]:
    """Optimal martingale coupling plus verified dual certificate.

    cost is an (n, m) array or a vectorized callable c(x, y).  Infeasibility
    (the pair is not in convex order) raises InfeasibleError carrying the
    worst violated call-potential inequality.

    Degenerate costs admit a face of optimizers and the simplex vertex is
    then an arbitrary representative.  tie_break="twist" runs a second
    solve that maximizes E[X Y^2] over the optimal face (the strictly
    supermodular functional whose unique maximizer over all couplings is
    the left-curtain), returning the most left-monotone optimizer.  The
    certificate and value always come from the first solve.
    """
    if sense not in ("min", "max"):
        raise StructureError(f"sense must be 'min' or 'max', got {sense!r}")
    if tie_break not in (None, "twist"):
        raise StructureError(f"unknown tie_break {tie_break!r}")
    c = _cost_matrix(mu, eta, cost)
    sign = 1.0 if sense == "min" else -1.0
    a_eq, b_eq = _assemble(mu, eta)
    res = linprog(
        sign * c.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0.0, None),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10,
                 "dual_feasibility_tolerance": 1e-10},
    )
    if res.status == 2:
        rep = convex_order_report(mu, eta)
        raise InfeasibleError(
            "martingale transport infeasible: call potential of the target "
            f"falls {rep['min_potential_gap']:.3e} below the source at strike "
            f"{rep['worst_strike']:.6g} (mean gap {rep['mean_gap']:.3e})",
            certificate=rep,
        )
    if res.status != 0:
        raise StructureError(f"LP solver failure: status={res.status}, {res.message}")

    n, m = mu.n, eta.n
    probs = np.maximum(res.x.reshape(n, m), 0.0)

    if tie_break == "twist":
        stage1_value = float(res.x @ c.ravel())
        twist = (mu.locations[:, None] * eta.locations[None, :] ** 2).ravel()
        # pin the stage-1 value as an inequality with a relative slack; an
        # exact equality pin sits on the face boundary and trips the solver
        eps = 1e-9 * (1.0 + abs(stage1_value))
        a_ub = sp.csr_matrix((sign * c.ravel())[None, :])
        b_ub = np.array([sign * stage1_value + eps])
        res2 = linprog(
            -twist, A_eq=a_eq, b_eq=b_eq, A_ub=a_ub, b_ub=b_ub,
            bounds=(0.0, None), method="highs-ds",
            options={"primal_feasibility_tolerance": 1e-10,
                     "dual_feasibility_tolerance": 1e-10},
        )
        if res2.status != 0:
            raise StructureError(
                f"tie-break solve failed: status={res2.status}, {res2.message}")
        probs = np.maximum(res2.x.reshape(n, m), 0.0)

    cm = CouplingMatrix(x=mu.locations, y=eta.locations, probs=probs,
                        mu_weights=mu.weights, eta_weights=eta.weights)

    lam = res.eqlin.marginals
    phi = sign * lam[:n]
    psi = np.concatenate([[0.0], sign * lam[n:n + m - 1]])
    h = sign * lam[n + m - 1:]
    primal = float(np.sum(probs * c))
    cert = DualCertificate(phi=phi, psi=psi, h=h,
                           value=float(mu.weights @ phi + eta.weights @ psi),
                           sense=sense)
    if check:
        cm.check()
        gap = abs(primal - cert.value)
        if gap > GAP_TOL * (1.0 + abs(primal)):
            raise StructureError(f"duality gap {gap:.3e} exceeds tolerance")
        v = cert.feasibility_violation(mu.locations, eta.locations, c)
        if v > DUAL_FEAS_TOL:
            raise StructureError(f"dual infeasibility {v:.3e} exceeds {DUAL_FEAS_TOL}")
        s = cert.slackness_violation(cm, c)
        if s > SLACK_TOL:
            raise StructureError(f"complementary slackness violation {s:.3e}")
    return cm, cert


def solve_onestep_friction(mu: DiscreteMeasure, eta: DiscreteMeasure, v_fn,
                           fs, check: bool = True,
                           tie_break: str | None = "twist"):
    """Maximize E[V(Y) - V(X) - f(X, Y - X)] over martingale couplings.

    Returns (coupling, certificate, info); info splits the optimum into the
    potential part eta(V) - mu(V), which is coupling-independent, and the
    friction part, which is what the optimization actually drives.  The
    coupling-independence of the potential part makes the optimal face
    degenerate whenever the friction coefficients are flat in the state, so
    the left-curtain tie-break is on by default; pass tie_break=None for
    the raw simplex vertex.
    """
    x = mu.locations[:, None]
    y = eta.locations[None, :]
    vx = np.asarray(v_fn(mu.locations), dtype=float)
    vy = np.asarray(v_fn(eta.locations), dtype=float)
    fric = fs.cost(np.broadcast_to(x, (mu.n, eta.n)), y - x)
    c = vy[None, :] - vx[:, None] - fric
    cm, cert = solve_lp(mu, eta, c, sense="max", check=check, tie_break=tie_break)
    potential_part = float(eta.weights @ vy - mu.weights @ vx)
    friction_paid = float(np.sum(cm.probs * fric))
    info = {
        "value": cert.value,
        "potential_part": potential_part,
        "friction_paid": friction_paid,
        "pure_friction_min": potential_part - cert.value,
    }
    return cm, cert, info


@dataclass(frozen=True)
class BiatomicRow:
    x: float
    t_down: float
    t_up: float
    theta: float
    band: bool


def extract_biatomic(cm: CouplingMatrix, tol: float = SUPPORT_TOL):
    """Collapse each coupling row to its two-point representation.

    Returns (rows, failures): failures lists (row index, live entry count)
    for rows carrying more than two atoms above tol; rejection is a normal
    outcome for degenerate optima, not an error.
    """
    rows: list[BiatomicRow] = []
    failures: list[tuple[int, int]] = []
    for i in range(cm.x.size):
        live = np.nonzero(cm.probs[i] > tol)[0]
        xi = float(cm.x[i])
        if live.size == 0:
            failures.append((i, 0))
            continue
        if live.size == 1:
            yj = float(cm.y[live[0]])
            rows.append(BiatomicRow(x=xi, t_down=yj, t_up=yj,
                                    theta=0.0, band=abs(yj - xi) <= tol))
            continue
        if live.size > 2:
            failures.append((i, int(live.size)))
            continue
        j_lo, j_hi = live
        y_lo, y_hi = float(cm.y[j_lo]), float(cm.y[j_hi])
        p_lo, p_hi = float(cm.probs[i, j_lo]), float(cm.probs[i, j_hi])
        theta = p_hi / (p_lo + p_hi)
        rows.append(BiatomicRow(x=xi, t_down=y_lo, t_up=y_hi, theta=theta, band=False))
    return rows, failures


def left_monotone_check(cm: CouplingMatrix, tol: float = SUPPORT_TOL,
                        strict_tol: float = 1e-12) -> dict:
    """Scan the support for left-monotonicity violations.

    A violation is a source atom x whose images straddle a point y' that a
    strictly larger source atom x' maps to: (x, y-), (x, y+) in the support,
    x' > x, and y- < y' < y+.  Returns the violation list and count.
    """
    n = cm.x.size
    spans = []
    for i in range(n):
        live = np.nonzero(cm.probs[i] > tol)[0]
        if live.size == 0:
            spans.append(None)
        else:
            spans.append((float(cm.y[live[0]]), float(cm.y[live[-1]])))
    violations = []
    for i in range(n):
        if spans[i] is None:
            continue
        lo, hi = spans[i]
        if hi - lo <= strict_tol:
            continue
        for j in range(i + 1, n):
            if spans[j] is None:
                continue
            live = np.nonzero(cm.probs[j] > tol)[0]
            for k in live:
                yk = float(cm.y[k])
                if lo + strict_tol < yk < hi - strict_tol:
                    violations.append((float(cm.x[i]), float(cm.x[j]), yk, lo, hi))
    return {"count": len(violations), "violations": violations}
