"""Minimal paths of the action ``int 1/2|dot g|^2 - V(g, t) dt`` between fixed endpoints.

The boundary value problem ``g'' = -grad V(g, t)``, ``g(0) = x``, ``g(1) = y``
is solved by fixed-point iteration on its integral form

    g(t) = (1-t) x + t y + t * int_0^1 (1-s) F(s) ds - int_0^t (t-s) F(s) ds,

with ``F(s) = grad V(g(s), s)`` and both integrals discretised by the
trapezoid rule on the path's own grid.  On grid nodes this fixed point is
exactly the stationary point of the discrete action used by ``action_cost``
(interval-sum kinetic energy, trapezoid potential energy).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DiscretePath, as_point, linear_path
from .errors import DivergenceError, InvalidArgument

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10000
DIVERGENCE_STREAK = 5


@dataclass
class BvpSolveReport:
    path: DiscretePath
    iterations: int
    final_change: float
    newton_residual: float
    converged: bool
    changes: list = field(default_factory=list, repr=False)
    warning: str | None = None


def action_cost(path, potential):
    grid = path.grid
    p = path.points
    kinetic = 0.5 * np.sum(np.diff(p, axis=0) ** 2) / grid.h
    v = potential.value(p, grid.nodes)
    return float(kinetic - grid.integrate(v))


def second_difference(path):
    p = path.points
    return (p[2:] - 2 * p[1:-1] + p[:-2]) / path.grid.h**2


def euler_lagrange_residual(path, potential):
    """max over interior nodes of |central second difference + grad V|."""
    if path.grid.m < 3:
        raise InvalidArgument("residual needs at least 3 grid intervals")
    g = potential.gradient(path.points[1:-1], path.grid.nodes[1:-1])
    r = second_difference(path) + g
    return float(np.max(np.linalg.norm(r, axis=1)))


def picard_map(points, x, y, potential, grid):
    """One application of the discretised integral operator."""
    t = grid.nodes
    h = grid.h
    f = potential.gradient(points, t)
    q1 = grid.integrate((1 - t)[:, None] * f)
    # Trapezoid of (t_j - s) f(s) on [0, t_j]; the node s = t_j contributes 0.
    s_f = np.cumsum(f, axis=0) - f
    s_tf = np.cumsum(t[:, None] * f, axis=0) - t[:, None] * f
    q2 = h * (t[:, None] * s_f - s_tf) - 0.5 * h * t[:, None] * f[0]
    q2[0] = 0.0
    new = (1 - t)[:, None] * x + t[:, None] * y + t[:, None] * q1 - q2
    new[0] = x
    new[-1] = y
    return new


def solve_bvp(x, y, potential, grid, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
              initial=None):
    """Minimal path from ``x`` to ``y`` by Picard iteration.

    Starts from the straight line unless ``initial`` (a DiscretePath with the
    same endpoints) is given.  Raises DivergenceError when the sup-norm change
    grows for five consecutive sweeps or ``max_iter`` is exhausted.
    """
    if not tol > 0:
        raise InvalidArgument("tol must be positive")
    x = as_point(x)
    y = as_point(y, x.shape[0])
    warning = None
    if not potential.lipschitz < 1:
        warning = (f"declared Lipschitz constant {potential.lipschitz} >= 1; "
                   "contraction not guaranteed")
    if initial is None:
        current = linear_path(x, y, grid).points.copy()
    else:
        current = np.array(initial.points, dtype=float)
        current[0], current[-1] = x, y

    changes = []
    streak = 0
    for it in range(1, max_iter + 1):
        new = picard_map(current, x, y, potential, grid)
        change = float(np.max(np.linalg.norm(new - current, axis=1)))
        if not np.isfinite(change):
            raise DivergenceError("Picard iterate became non-finite", change)
        streak = streak + 1 if changes and change > changes[-1] else 0
        changes.append(change)
        current = new
        if change <= tol:
            path = DiscretePath(grid, current)
            res = euler_lagrange_residual(path, potential) if grid.m >= 3 else float("nan")
            return BvpSolveReport(path, it, change, res, True, changes, warning)
        if streak >= DIVERGENCE_STREAK:
            break
    path = DiscretePath(grid, current)
    report = BvpSolveReport(path, len(changes), changes[-1], float("nan"), False,
                            changes, warning)
    raise DivergenceError(
        f"Picard iteration did not converge after {len(changes)} sweeps "
        f"(last change {changes[-1]:.3e})", changes[-1], report)


def holder_constant(path, potential):
    """Constant C with |g(t1) - g(t2)| <= C |t1 - t2|^(1/2) for finite-energy paths."""
    c = action_cost(path, potential)
    return float(np.sqrt(2 * c + 2 * potential.value_bound + 1))


def max_holder_ratio(path):
    """max over node pairs of |g(t1) - g(t2)| / |t1 - t2|^(1/2)."""
    p = path.points
    t = path.grid.nodes
    dist = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)
    dt = np.sqrt(np.abs(t[:, None] - t[None, :]))
    np.fill_diagonal(dt, 1.0)
    return float(np.max(dist / dt))
