"""Endpoint cost c_e(x, y) = min over paths x -> y of the action, and its y-gradient."""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import DiscretePath, as_point
from .errors import DivergenceError, InvalidArgument
from .minpath import BvpSolveReport, action_cost, solve_bvp

ENDPOINT_TOL = 1e-12
FD_STEP = 1e-5


@dataclass
class EndpointCostEval:
    value: float
    grad_y: np.ndarray
    path: DiscretePath
    bvp_report: BvpSolveReport


def grad_y_formula(path, potential, x, y):
    """y - x - int_0^1 t grad V(g(t), t) dt on the path's grid.

    Exact derivative of the discrete endpoint cost when ``path`` is the
    converged discrete minimiser.
    """
    x = as_point(x)
    y = as_point(y, x.shape[0])
    grid = path.grid
    f = potential.gradient(path.points, grid.nodes)
    return y - x - grid.integrate(grid.nodes[:, None] * f)


def endpoint_cost(x, y, potential, grid, tol=ENDPOINT_TOL, max_iter=10000, initial=None):
    report = solve_bvp(x, y, potential, grid, tol=tol, max_iter=max_iter, initial=initial)
    path = report.path
    return EndpointCostEval(action_cost(path, potential),
                            grad_y_formula(path, potential, x, y), path, report)


def fd_grad_y(x, y, potential, grid, h=FD_STEP, tol=ENDPOINT_TOL):
    """Central finite-difference gradient of c_e in y (the validation oracle)."""
    x = as_point(x)
    y = as_point(y, x.shape[0])
    g = np.empty_like(y)
    for k in range(y.shape[0]):
        e = np.zeros_like(y)
        e[k] = h
        plus = endpoint_cost(x, y + e, potential, grid, tol=tol).value
        minus = endpoint_cost(x, y - e, potential, grid, tol=tol).value
        g[k] = (plus - minus) / (2 * h)
    return g


def twist_margin(x1, x2, y, potential, grid, tol=ENDPOINT_TOL):
    """|grad_y c_e(x1, y) - grad_y c_e(x2, y)|, which stays positive for L < 2/3."""
    x1 = as_point(x1)
    x2 = as_point(x2, x1.shape[0])
    if np.array_equal(x1, x2):
        raise InvalidArgument("twist margin needs two distinct source points")
    g1 = endpoint_cost(x1, y, potential, grid, tol=tol).grad_y
    g2 = endpoint_cost(x2, y, potential, grid, tol=tol).grad_y
    return float(np.linalg.norm(g1 - g2))


def twist_lower_bound(lipschitz, distance):
    """Guaranteed twist margin (1 - L / (2 (1 - L))) |x1 - x2|."""
    return (1 - 0.5 * lipschitz / (1 - lipschitz)) * distance


class EndpointCache:
    """Thread-safe memo of endpoint evaluations keyed by (source index, target index)."""

    def __init__(self):
        self._data = {}
        self._lock = threading.Lock()

    def get(self, key):
        with self._lock:
            return self._data.get(key)

    def put(self, key, value):
        with self._lock:
            return self._data.setdefault(key, value)

    def __len__(self):
        return len(self._data)


def endpoint_cost_matrix(source, target, potential, grid, cache=None, workers=None,
                         tol=ENDPOINT_TOL, initial=None):
    """Cost matrix of c_e over spt(source) x spt(target) and the minimal paths.

    Returns ``(CostMatrix, paths)`` where ``paths[i][j]`` is the minimiser.
    ``initial[i][j]``, when given, warm-starts the corresponding Picard solve.
    A divergence is re-raised with the offending pair in its message.
    """
    from .mkp import CostMatrix

    n0, n1 = source.size, target.size

    def one(ij):
        i, j = ij
        if cache is not None:
            hit = cache.get(ij)
            if hit is not None:
                return hit
        start = None if initial is None else initial[i][j]
        try:
            ev = endpoint_cost(source.points[i], target.points[j], potential, grid, tol=tol,
                               initial=start)
        except DivergenceError as exc:
            raise DivergenceError(f"pair ({i}, {j}): {exc}", exc.last_change,
                                  exc.report) from exc
        return cache.put(ij, ev) if cache is not None else ev

    keys = [(i, j) for i in range(n0) for j in range(n1)]
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            evals = list(pool.map(one, keys))
    else:
        evals = [one(k) for k in keys]
    entries = np.array([ev.value for ev in evals]).reshape(n0, n1)
    paths = [[evals[i * n1 + j].path for j in range(n1)] for i in range(n0)]
    return CostMatrix(entries, source, target), paths
