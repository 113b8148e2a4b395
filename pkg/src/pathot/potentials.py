"""Concrete potential families."""

from __future__ import annotations

import math

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .core import Potential, broadcast_time
from .errors import InvalidArgument


class ZeroPotential(Potential):
    value_bound = 0.0
    grad_bound = 0.0
    lipschitz = 0.0

    def value(self, x, t):
        x, _ = broadcast_time(x, t)
        return np.zeros(x.shape[:-1])[()]

    def gradient(self, x, t):
        x = np.asarray(x, dtype=float)
        return np.zeros_like(x)

    def hessian(self, x, t):
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        return np.zeros(x.shape[:-1] + (d, d))

    def __repr__(self):
        return "ZeroPotential()"


class LinearPotential(Potential):
    """V(x, t) = <g, x> + offset.  Unbounded unless ``g`` vanishes."""

    lipschitz = 0.0

    def __init__(self, gradient, offset=0.0):
        self.g = np.atleast_1d(np.asarray(gradient, dtype=float))
        self.offset = float(offset)
        self.grad_bound = float(np.linalg.norm(self.g))
        self.value_bound = abs(self.offset) if self.grad_bound == 0 else math.inf

    def value(self, x, t):
        x, _ = broadcast_time(x, t)
        return (x @ self.g + self.offset)[()]

    def gradient(self, x, t):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.g, x.shape).copy()

    def hessian(self, x, t):
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        return np.zeros(x.shape[:-1] + (d, d))

    def __repr__(self):
        return f"LinearPotential({self.g.tolist()}, offset={self.offset})"


class GaussianWell(Potential):
    """V(x, t) = depth * exp(-|x - c(t)|^2 / width^2), c(t) = center + t * drift."""

    def __init__(self, center, depth, width, drift=None):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.depth = float(depth)
        self.width = float(width)
        if not self.width > 0:
            raise InvalidArgument("gaussian well width must be positive")
        if drift is None:
            drift = np.zeros_like(self.center)
        self.drift = np.atleast_1d(np.asarray(drift, dtype=float))
        if self.drift.shape != self.center.shape:
            raise InvalidArgument("drift and center dimensions differ")
        self.time_autonomous = not np.any(self.drift)
        a = abs(self.depth)
        self.value_bound = a
        self.lipschitz = 2 * a / self.width**2
        self.grad_bound = math.sqrt(2) * a * math.exp(-0.5) / self.width

    def _offset(self, x, t):
        x, t = broadcast_time(x, t)
        return x - (self.center + t[..., None] * self.drift)

    def value(self, x, t):
        r = self._offset(x, t)
        return (self.depth * np.exp(-np.sum(r * r, axis=-1) / self.width**2))[()]

    def gradient(self, x, t):
        r = self._offset(x, t)
        e = np.exp(-np.sum(r * r, axis=-1) / self.width**2)
        return (-2 * self.depth / self.width**2) * e[..., None] * r

    def hessian(self, x, t):
        r = self._offset(x, t)
        w2 = self.width**2
        e = np.exp(-np.sum(r * r, axis=-1) / w2)
        eye = np.eye(r.shape[-1])
        outer = r[..., :, None] * r[..., None, :]
        return (-2 * self.depth / w2) * e[..., None, None] * (eye - (2 / w2) * outer)

    def __repr__(self):
        return (f"GaussianWell(center={self.center.tolist()}, depth={self.depth}, "
                f"width={self.width}, drift={self.drift.tolist()})")


class TablePotential(Potential):
    """Tabulated values and gradients with multilinear interpolation.

    Queries outside the table are clamped to its bounding box.  The gradient
    is interpolated from its own table, so it is only approximately the
    derivative of the interpolated values.
    """

    def __init__(self, axes, values, gradients):
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        d = len(self.axes)
        self.values = np.asarray(values, dtype=float)
        self.gradients = np.asarray(gradients, dtype=float)
        shape = tuple(len(a) for a in self.axes)
        if self.values.shape != shape or self.gradients.shape != shape + (d,):
            raise InvalidArgument("table shapes do not match the axes")
        for a in self.axes:
            if len(a) < 2 or np.any(np.diff(a) <= 0):
                raise InvalidArgument("table axes must be strictly increasing with >= 2 nodes")
        self._lo = np.array([a[0] for a in self.axes])
        self._hi = np.array([a[-1] for a in self.axes])
        self._vi = RegularGridInterpolator(self.axes, self.values)
        self._gi = RegularGridInterpolator(self.axes, self.gradients)
        self.value_bound = float(np.max(np.abs(self.values)))
        self.grad_bound = float(np.max(np.linalg.norm(self.gradients, axis=-1)))
        # Frobenius bound on the Jacobian of the interpolated gradient.
        quot = []
        for k, a in enumerate(self.axes):
            dg = np.diff(self.gradients, axis=k)
            step = np.diff(a).reshape([-1 if i == k else 1 for i in range(d)] + [1])
            quot.append(float(np.max(np.linalg.norm(dg / step, axis=-1))))
        self.lipschitz = float(np.sqrt(np.sum(np.square(quot))))

    def _clip(self, x):
        x = np.asarray(x, dtype=float)
        return np.clip(x, self._lo, self._hi)

    def value(self, x, t):
        x = self._clip(x)
        flat = x.reshape(-1, x.shape[-1])
        return self._vi(flat).reshape(x.shape[:-1])[()]

    def gradient(self, x, t):
        x = self._clip(x)
        flat = x.reshape(-1, x.shape[-1])
        return self._gi(flat).reshape(x.shape)

    def hessian(self, x, t, h=1e-6):
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        cols = []
        for k in range(d):
            e = np.zeros(d)
            e[k] = h
            cols.append((self.gradient(x + e, t) - self.gradient(x - e, t)) / (2 * h))
        return np.stack(cols, axis=-1)

    @classmethod
    def from_function(cls, axes, value_fn, grad_fn):
        """Tabulate analytic ``value_fn(x)``/``grad_fn(x)`` on the axes' tensor grid."""
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return cls(axes, value_fn(mesh), grad_fn(mesh))


class SumPotential(Potential):
    def __init__(self, terms):
        flat = []
        for p in terms:
            flat.extend(p.terms if isinstance(p, SumPotential) else [p])
        self.terms = flat
        self.value_bound = sum(p.value_bound for p in flat)
        self.grad_bound = sum(p.grad_bound for p in flat)
        self.lipschitz = sum(p.lipschitz for p in flat)
        self.time_autonomous = all(p.time_autonomous for p in flat)

    def value(self, x, t):
        return sum(p.value(x, t) for p in self.terms)

    def gradient(self, x, t):
        return sum(p.gradient(x, t) for p in self.terms)

    def hessian(self, x, t):
        return sum(p.hessian(x, t) for p in self.terms)

    def __repr__(self):
        return f"SumPotential({self.terms!r})"
