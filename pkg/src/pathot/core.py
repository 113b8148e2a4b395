"""Shared domain types: time grids, sampled paths, measures, potentials.

Everything here is immutable after construction so instances can be shared
read-only between worker threads.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument

DUPLICATE_TOL = 1e-12
MASS_TOL = 1e-12


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of ``m`` intervals on [0, 1] with trapezoid weights."""

    m: int
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise InvalidArgument(f"grid needs an integer m >= 2, got {self.m!r}")
        m = int(self.m)
        object.__setattr__(self, "m", m)
        h = 1.0 / m
        w = np.full(m + 1, h)
        # End weights absorb the rounding of the interior ones.
        w[0] = w[-1] = 0.5 * (1.0 - math.fsum(w[1:-1]))
        object.__setattr__(self, "nodes", _frozen(np.arange(m + 1) / m))
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def h(self):
        return 1.0 / self.m

    @property
    def trapezoid_weights(self):
        return self.weights

    def integrate(self, samples):
        """Trapezoid rule along the leading (time) axis."""
        samples = np.asarray(samples, dtype=float)
        if samples.shape[0] != self.m + 1:
            raise InvalidArgument("samples must have one row per grid node")
        weighted = np.moveaxis(samples * self.weights.reshape((-1,) + (1,) * (samples.ndim - 1)), 0, -1)
        # Pairwise summation over a contiguous time axis keeps rounding at O(log m) ulps.
        return np.ascontiguousarray(weighted).sum(axis=-1)


def make_grid(m):
    return TimeGrid(m)


@dataclass(frozen=True)
class DiscretePath:
    grid: TimeGrid
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] != self.grid.m + 1:
            raise InvalidArgument(
                f"path needs {self.grid.m + 1} rows, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgument("path samples must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def start(self):
        return self.points[0]

    @property
    def end(self):
        return self.points[-1]

    def reversed(self):
        return DiscretePath(self.grid, self.points[::-1])

    def sup_distance(self, other):
        return float(np.max(np.linalg.norm(self.points - other.points, axis=1)))


def as_point(x, dim=None):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1:
        raise InvalidArgument("a point must be a flat vector")
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("point coordinates must be finite")
    if dim is not None and x.shape[0] != dim:
        raise InvalidArgument(f"expected a point in dimension {dim}, got {x.shape[0]}")
    return x


def linear_path(x, y, grid):
    """Constant-speed straight path from ``x`` to ``y`` sampled on ``grid``."""
    x = as_point(x)
    y = as_point(y)
    if x.shape != y.shape:
        raise InvalidArgument("endpoints have different dimensions")
    t = grid.nodes[:, None]
    pts = x + t * (y - x)
    pts[-1] = y
    return DiscretePath(grid, pts)


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud. Atoms closer than 1e-12 are merged on construction.

    ``normalized=False`` skips the unit-mass check; the solvers then report
    mass mismatches as infeasibility instead.
    """

    points: np.ndarray
    weights: np.ndarray
    normalized: bool = field(default=True, compare=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.array(self.weights, dtype=float).ravel()
        if pts.ndim != 2 or pts.shape[0] != w.shape[0] or w.shape[0] == 0:
            raise InvalidArgument("measure needs one weight per point and at least one atom")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(w))):
            raise InvalidArgument("measure entries must be finite")
        if np.any(w < 0):
            raise InvalidArgument("weights must be nonnegative")
        keep_pts, keep_w = [], []
        for p, wi in zip(pts, w):
            for k, q in enumerate(keep_pts):
                if np.linalg.norm(p - q) <= DUPLICATE_TOL:
                    keep_w[k] += wi
                    break
            else:
                keep_pts.append(p)
                keep_w.append(wi)
        pts = np.array(keep_pts)
        w = np.array(keep_w)
        if self.normalized and abs(math.fsum(w) - 1.0) > MASS_TOL:
            raise InvalidArgument(f"weights sum to {math.fsum(w)!r}, not 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points):
        pts = np.asarray(points, dtype=float)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def mass(self):
        return math.fsum(self.weights)

    def is_uniform(self, tol=1e-12):
        return bool(np.all(np.abs(self.weights - 1.0 / self.size) <= tol))


KERNEL_KINDS = ("gaussian", "coulomb", "none")


@dataclass(frozen=True)
class InteractionParams:
    kernel_kind: str = "gaussian"
    theta: float = 0.0
    beta: float = 1.0
    coulomb_smoothing: float = 0.0

    def __post_init__(self):
        if self.kernel_kind not in KERNEL_KINDS:
            raise InvalidArgument(f"unknown kernel {self.kernel_kind!r}")
        if not self.theta >= 0:
            raise InvalidArgument("theta must be nonnegative")
        if not self.beta > 0:
            raise InvalidArgument("beta must be positive")
        if not self.coulomb_smoothing >= 0:
            raise InvalidArgument("coulomb smoothing must be nonnegative")

    @property
    def active(self):
        return self.kernel_kind != "none" and self.theta > 0


class Potential(ABC):
    """Scalar field V(x, t) entering the action as ``1/2|v|^2 - V``.

    ``x`` may carry leading batch axes (shape ``(..., d)``); ``t`` is a scalar
    or broadcasts against ``x.shape[:-1]``.  Subclasses declare analytic
    bounds: ``value_bound`` (sup |V|), ``grad_bound`` (sup |grad V|) and
    ``lipschitz`` (Lipschitz constant of grad V).
    """

    value_bound = math.inf
    grad_bound = math.inf
    lipschitz = math.inf
    time_autonomous = True

    @abstractmethod
    def value(self, x, t):
        ...

    @abstractmethod
    def gradient(self, x, t):
        ...

    @abstractmethod
    def hessian(self, x, t):
        ...

    def __add__(self, other):
        from .potentials import SumPotential

        return SumPotential([self, other])

    def self_check(self, dim, probes=20, seed=0, h=1e-5, scale=1.0):
        """Largest gradient-vs-central-difference mismatch on random probes.

        The mismatch is measured relative to ``max(1, |grad|)``.
        """
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(probes):
            x = rng.uniform(-scale, scale, size=dim)
            t = rng.uniform()
            g = np.asarray(self.gradient(x, t), dtype=float)
            fd = np.empty(dim)
            for k in range(dim):
                e = np.zeros(dim)
                e[k] = h
                fd[k] = (self.value(x + e, t) - self.value(x - e, t)) / (2 * h)
            worst = max(worst, float(np.linalg.norm(g - fd) / max(1.0, np.linalg.norm(g))))
        return worst


def broadcast_time(x, t):
    x = np.asarray(x, dtype=float)
    return x, np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
