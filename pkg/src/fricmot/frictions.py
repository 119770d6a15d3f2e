"""State-dependent linear-plus-quadratic trading frictions.

The per-step cost of moving by v from state x is

    f(x, v) = a(x) |v| + b(x) v^2,        a >= 0, b >= 0,

so f(x, 0) = 0 and f is convex in v with a kink at the origin.  The convex
conjugate in v has the closed form

    f*(x, y) = (|y| - a(x))_+^2 / (4 b(x))          if b(x) > 0
    f*(x, y) = 0 if |y| <= a(x), +inf otherwise     if b(x) = 0,

and the subdifferential at v = 0 is the interval [-a(x), a(x)]: slopes
inside it support zero displacement (the no-trade band), slopes outside it
force the unique displacement (y - a sign(y)) / (2b).

Coefficients are either constants or piecewise-linear functions of the state
given on a grid, with constant extrapolation beyond the grid ends.  A zero
quadratic coefficient is legal data (purely proportional cost) but makes
displacements ill-posed, so it is flagged and the callers that cannot handle
it refuse early.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnboundedError, ValidationError


@dataclass(frozen=True)
class Coefficient:
    """Nonnegative scalar or piecewise-linear-in-state coefficient."""

    grid: np.ndarray | None  # None for constants
    values: np.ndarray       # shape (1,) for constants

    @classmethod
    def make(cls, spec) -> "Coefficient":
        if isinstance(spec, Coefficient):
            return spec
        if np.isscalar(spec):
            v = float(spec)
            if not np.isfinite(v) or v < 0:
                raise ValidationError(f"coefficient must be finite and >= 0, got {spec}")
            return cls(grid=None, values=np.array([v]))
        grid, vals = spec
        grid = np.asarray(grid, dtype=float)
        vals = np.asarray(vals, dtype=float)
        if grid.ndim != 1 or grid.size != vals.size or grid.size == 0:
            raise ValidationError("coefficient grid and values must be 1-d, equal length")
        if np.any(np.diff(grid) <= 0):
            raise ValidationError("coefficient grid must be strictly increasing")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise ValidationError("coefficient values must be finite and >= 0")
        return cls(grid=grid, values=vals)

    def __call__(self, x):
        if self.grid is None:
            out = np.full_like(np.asarray(x, dtype=float), self.values[0])
            return float(out) if np.isscalar(x) or out.ndim == 0 else out
        out = np.interp(np.asarray(x, dtype=float), self.grid, self.values)
        return float(out) if np.isscalar(x) or out.ndim == 0 else out

    def min_value(self) -> float:
        return float(np.min(self.values))

    def max_value(self) -> float:
        return float(np.max(self.values))


@dataclass(frozen=True)
class FrictionSpec:
    a: Coefficient
    b: Coefficient

    @classmethod
    def make(cls, a, b) -> "FrictionSpec":
        return cls(a=Coefficient.make(a), b=Coefficient.make(b))

    @property
    def has_zero_quadratic(self) -> bool:
        """True when b vanishes somewhere; displacements are then unbounded
        off the band and only the LP route applies."""
        return self.b.min_value() <= 0.0

    def cost(self, x, v):
        return friction_cost(self, x, v)

    def conj(self, x, y):
        return conjugate(self, x, y)


def friction_cost(fs: FrictionSpec, x, v):
    """f(x, v) = a(x)|v| + b(x) v^2, vectorized over x and v jointly."""
    vv = np.asarray(v, dtype=float)
    out = fs.a(x) * np.abs(vv) + fs.b(x) * vv**2
    return float(out) if out.ndim == 0 else out


def subgradient(fs: FrictionSpec, x: float, v: float) -> tuple[float, float]:
    """Subdifferential of f(x, .) at v, as a closed interval (lo, hi)."""
    a = fs.a(x)
    b = fs.b(x)
    if v == 0.0:
        return (-a, a)
    g = a * np.sign(v) + 2.0 * b * v
    return (float(g), float(g))


def conjugate(fs: FrictionSpec, x, y):
    """f*(x, y) = sup_v [y v - f(x, v)], in closed form.

    Returns +inf in the degenerate b = 0 case when |y| exceeds a(x); the
    infinity is a sentinel for "no finite superhedge slope", never an operand.
    """
    a = np.asarray(fs.a(x), dtype=float)
    b = np.asarray(fs.b(x), dtype=float)
    yy = np.asarray(y, dtype=float)
    excess = np.maximum(np.abs(yy) - a, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        quad = np.where(b > 0.0, excess**2 / (4.0 * np.where(b > 0.0, b, 1.0)), 0.0)
    out = np.where(b > 0.0, quad, np.where(excess > 0.0, np.inf, 0.0))
    return float(out) if out.ndim == 0 else out


def argmax_displacement(fs: FrictionSpec, x: float, h: float) -> float:
    """The unique maximizer v* of v -> h v - f(x, v).

    Zero inside the band |h| <= a(x); otherwise (h - a sign(h)) / (2b).
    Raises UnboundedError when b(x) = 0 and |h| > a(x).
    """
    a = fs.a(x)
    b = fs.b(x)
    if abs(h) <= a:
        return 0.0
    if b <= 0.0:
        raise UnboundedError(
            f"slope {h:.6g} exceeds band half-width {a:.6g} at x={x:.6g} with b=0: "
            "displacement is unbounded"
        )
    return (h - a * np.sign(h)) / (2.0 * b)


def in_band(fs: FrictionSpec, x: float, h: float, tol: float = 0.0) -> bool:
    """True when the slope h lies in the zero-displacement band at x."""
    return abs(h) <= fs.a(x) + tol


def growth_check(fs: FrictionSpec, m: float, p: float, c: float,
                 x_grid=None, v_grid=None) -> dict:
    """Diagnostic: does f(x, v) >= m |v|^p - c (1 + |x|) hold on a probe grid?

    Purely advisory; the solvers never rely on it.  Records the worst slack
    and where it occurs.
    """
    if x_grid is None:
        base = fs.a.grid if fs.a.grid is not None else fs.b.grid
        x_grid = base if base is not None else np.linspace(-10.0, 10.0, 41)
    if v_grid is None:
        v_grid = np.concatenate([-np.geomspace(1e-3, 50.0, 40)[::-1],
                                 [0.0], np.geomspace(1e-3, 50.0, 40)])
    worst = np.inf
    arg = (None, None)
    for x in np.asarray(x_grid, dtype=float):
        lhs = friction_cost(fs, x, v_grid)
        rhs = m * np.abs(v_grid) ** p - c * (1.0 + abs(x))
        slack = lhs - rhs
        i = int(np.argmin(slack))
        if slack[i] < worst:
            worst = float(slack[i])
            arg = (float(x), float(v_grid[i]))
    return {"holds": worst >= 0.0, "worst_slack": worst, "at": arg,
            "params": {"m": m, "p": p, "c": c}}
