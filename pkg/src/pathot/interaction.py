"""Interacting paths: kernels, crowd potential, effective costs and the fixed point.

The interaction energy of a plan is ``<K pi, pi>`` with the path kernel
``K(g, s) = int_0^1 kappa(g(t) - s(t)) dt``.  Its first variation at a path
``g`` is ``2 U(g; pi)``, so the cost seen by one path inside the crowd is
``c(g) + 2 U(g; pi)``.  For the gaussian kernel that extra term is a time
dependent potential (``CrowdPotential``) and the effective endpoint cost is
again a minimal-path problem.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Potential, broadcast_time, linear_path
from .endpoint import ENDPOINT_TOL, endpoint_cost_matrix, fd_grad_y
from .errors import (ConvergenceError, InvalidArgument, SingularityError,
                     UnsupportedError)
from .minpath import action_cost
from .mkp import (FEAS_TOL, SUPPORT_TOL, CostMatrix, Coupling, solve_exact,
                  transport_cost)
from .potentials import ZeroPotential

COULOMB_MIN_DIST = 1e-8
OUTER_TOL = 1e-8
MAX_OUTER = 500
ENERGY_SLACK = 1e-9


@dataclass(frozen=True)
class PathPlan:
    """Finitely supported plan on path space: a coupling plus one path per supported pair."""

    coupling: Coupling
    paths: dict
    source: object
    target: object

    def __post_init__(self):
        p = self.coupling.matrix
        if p.shape != (self.source.size, self.target.size):
            raise InvalidArgument("coupling shape does not match the marginals")
        err = self.coupling.marginal_error(self.source, self.target)
        if err > FEAS_TOL:
            raise InvalidArgument(f"coupling violates the marginals by {err:.3e}")
        for (i, j) in self.coupling.support():
            path = self.paths.get((i, j))
            if path is None:
                raise InvalidArgument(f"supported pair {(i, j)} has no stored path")
            if not (np.array_equal(path.start, self.source.points[i])
                    and np.array_equal(path.end, self.target.points[j])):
                raise InvalidArgument(f"path for pair {(i, j)} has wrong endpoints")

    @property
    def grid(self):
        return next(iter(self.paths.values())).grid

    def atoms(self, tol=SUPPORT_TOL):
        """Supported pairs, their masses, and their paths stacked as (A, m+1, d)."""
        pairs = self.coupling.support(tol)
        w = np.array([self.coupling.matrix[ij] for ij in pairs])
        stack = np.stack([self.paths[ij].points for ij in pairs])
        return pairs, w, stack

    def time_marginal(self, j):
        """Masses and positions of the plan's atoms at grid node ``j``."""
        _, w, stack = self.atoms()
        return w, stack[:, j, :]

    @classmethod
    def from_paths(cls, matrix, path_table, source, target, tol=SUPPORT_TOL):
        """Keep the paths of the pairs that carry mass under ``matrix``."""
        coupling = matrix if isinstance(matrix, Coupling) else Coupling(matrix)
        paths = {ij: path_table[ij[0]][ij[1]] for ij in coupling.support(tol)}
        return cls(coupling, paths, source, target)


@dataclass
class InteractionEnergyBreakdown:
    base: float
    quadratic: float
    total: float


def _kernel_profile(sq_dist, params, dim):
    if params.kernel_kind == "none" or params.theta == 0:
        return np.zeros_like(sq_dist)
    if params.kernel_kind == "gaussian":
        return params.theta * np.exp(-params.beta * sq_dist)
    if dim < 3:
        raise InvalidArgument("the Coulomb kernel needs dimension >= 3")
    eps2 = params.coulomb_smoothing**2
    if eps2 == 0 and np.min(sq_dist) < COULOMB_MIN_DIST**2:
        raise SingularityError("unsmoothed Coulomb kernel at coincident points")
    return params.theta * (sq_dist + eps2) ** ((2 - dim) / 2)


def kernel_matrix(stack_a, stack_b, grid, params):
    """K(a, b) for every pair of stacked paths, shape (A, B)."""
    a = np.asarray(stack_a, dtype=float)
    b = np.asarray(stack_b, dtype=float)
    diff = a[:, None, :, :] - b[None, :, :, :]
    prof = _kernel_profile(np.sum(diff * diff, axis=-1), params, a.shape[-1])
    return prof @ grid.weights


def kernel_value(gamma, sigma, params):
    if gamma.grid != sigma.grid:
        raise InvalidArgument("paths must share a grid")
    diff = gamma.points - sigma.points
    prof = _kernel_profile(np.sum(diff * diff, axis=-1), params, gamma.dim)
    return float(gamma.grid.integrate(prof))


def interaction_potential_U(gamma, plan, params):
    """Total interaction of ``gamma`` with the crowd described by ``plan``."""
    _, w, stack = plan.atoms()
    k = kernel_matrix(gamma.points[None], stack, gamma.grid, params)[0]
    return float(w @ k)


def lipschitz_factor(beta):
    """max(1, 2 beta exp(-(2 beta - 1) / (2 beta))), bounding the Jacobian of r exp(-beta r^2)."""
    return max(1.0, 2 * beta * math.exp(-(2 * beta - 1) / (2 * beta)))


class CrowdPotential(Potential):
    """V(x, t) = -2 theta sum_a w_a exp(-beta |x - z_a(t)|^2) for stored paths z_a.

    Time is snapped to the nearest node of the grid the paths live on.
    """

    def __init__(self, weights, stack, grid, theta, beta=1.0):
        self.weights = np.asarray(weights, dtype=float)
        self.stack = np.asarray(stack, dtype=float)
        self.grid = grid
        self.theta = float(theta)
        self.beta = float(beta)
        mass = float(np.sum(self.weights))
        self.time_autonomous = False
        self.value_bound = 2 * self.theta * mass
        self.grad_bound = 4 * self.theta * self.beta * mass * math.exp(-0.5) / math.sqrt(2 * self.beta)
        self.lipschitz = 4 * self.theta * self.beta * lipschitz_factor(self.beta) * mass

    def _offsets(self, x, t):
        x, t = broadcast_time(x, t)
        d = x.shape[-1]
        flat = x.reshape(-1, d)
        idx = np.clip(np.rint(t.ravel() * self.grid.m).astype(int), 0, self.grid.m)
        diff = flat[None, :, :] - self.stack[:, idx, :]
        e = np.exp(-self.beta * np.sum(diff * diff, axis=-1))
        return x.shape, diff, e

    def value(self, x, t):
        shape, _, e = self._offsets(x, t)
        return (-2 * self.theta * (self.weights @ e)).reshape(shape[:-1])[()]

    def gradient(self, x, t):
        shape, diff, e = self._offsets(x, t)
        g = np.einsum("a,an,and->nd", self.weights, e, diff)
        return (4 * self.theta * self.beta * g).reshape(shape)

    def hessian(self, x, t):
        shape, diff, e = self._offsets(x, t)
        d = shape[-1]
        outer = np.einsum("a,an,and,ane->nde", self.weights, e, diff, diff)
        iso = np.einsum("a,an->n", self.weights, e)[:, None, None] * np.eye(d)
        return (4 * self.theta * self.beta * (iso - 2 * self.beta * outer)).reshape(shape + (d,))


def effective_potential(plan, params):
    if params.kernel_kind == "coulomb":
        raise UnsupportedError("effective potentials are only available for the gaussian kernel")
    if not params.active:
        return ZeroPotential()
    _, w, stack = plan.atoms()
    return CrowdPotential(w, stack, plan.grid, params.theta, params.beta)


def combined_potential(plan, params, base_potential=None):
    crowd = effective_potential(plan, params)
    if base_potential is None or isinstance(base_potential, ZeroPotential):
        return crowd
    if isinstance(crowd, ZeroPotential):
        return base_potential
    return base_potential + crowd


def effective_cost_matrix(plan, params, grid=None, base_potential=None, tol=ENDPOINT_TOL,
                          initial=None, workers=None):
    """c_eff over spt(mu0) x spt(mu1) for the crowd ``plan``, and the minimal paths.

    ``initial`` optionally warm-starts every pair's Picard iteration with a
    table ``initial[i][j]`` of paths.
    """
    grid = plan.grid if grid is None else grid
    if grid != plan.grid:
        raise InvalidArgument("plan paths live on a different grid")
    pot = combined_potential(plan, params, base_potential)
    return endpoint_cost_matrix(plan.source, plan.target, pot, grid, tol=tol,
                                workers=workers, initial=initial)


def total_energy(plan, base_potential, params):
    base_potential = ZeroPotential() if base_potential is None else base_potential
    pairs, w, stack = plan.atoms()
    base = float(sum(wi * action_cost(plan.paths[ij], base_potential)
                     for ij, wi in zip(pairs, w)))
    quad = float(w @ kernel_matrix(stack, stack, plan.grid, params) @ w)
    return InteractionEnergyBreakdown(base, quad, base + quad)


@dataclass
class TraceRecord:
    iteration: int
    energy: float
    base: float
    quadratic: float
    l1_change: float
    path_change: float


@dataclass
class Certificate:
    """Self-consistency evidence for a converged plan."""

    cost: CostMatrix
    duals: object
    plan_value: float
    lp_value: float
    duality_gap: float
    best_response_change: float
    path_change: float
    uniqueness_certified: bool

    def passed(self, gap_tol=1e-8, tol=OUTER_TOL):
        return self.duality_gap <= gap_tol and self.path_change <= tol


@dataclass
class FixedPointTrace:
    records: list = field(default_factory=list)
    converged: bool = False
    certificate: Certificate | None = None
    scheme: str = "best-response"
    switched_at: int | None = None

    @property
    def energies(self):
        return [r.energy for r in self.records]

    @property
    def outer_iterations(self):
        return len(self.records) - 1


def _max_path_change(new, old):
    return max(float(np.max(np.linalg.norm(a.points - b.points, axis=1)))
               for row_new, row_old in zip(new, old) for a, b in zip(row_new, row_old))


def _record(k, plan, base_potential, params, l1, dpath):
    e = total_energy(plan, base_potential, params)
    return TraceRecord(k, e.total, e.base, e.quadratic, l1, dpath)


def theta0_bound(d):
    """Interaction strength below which the effective cost keeps the twist property."""
    if d < 1:
        raise InvalidArgument("dimension must be positive")
    return d ** (-1.25) / math.sqrt(2)


def uniqueness_certifiable(params, d):
    return params.kernel_kind == "gaussian" and params.beta == 1.0 and params.theta < theta0_bound(d)


def _simplex_qp(lin, quad):
    """argmin lin . lam + lam' quad lam over the probability simplex.

    Every face is tried; the stationary point of the face that is feasible
    and satisfies the outer multiplier conditions is the global minimiser of
    this convex problem.  Intended for a handful of atoms.
    """
    r = len(lin)
    best = None
    for size in range(1, r + 1):
        for face in itertools.combinations(range(r), size):
            f = list(face)
            kkt = np.zeros((size + 1, size + 1))
            kkt[:size, :size] = 2 * quad[np.ix_(f, f)]
            kkt[:size, size] = -1.0
            kkt[size, :size] = 1.0
            rhs = np.concatenate([-lin[f], [1.0]])
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
            if np.max(np.abs(kkt @ sol - rhs)) > 1e-10 or np.min(sol[:size]) < -1e-13:
                continue
            lam = np.zeros(r)
            lam[f] = np.clip(sol[:size], 0.0, None)
            lam /= lam.sum()
            grad = lin + 2 * quad @ lam
            value = float(lin @ lam + lam @ quad @ lam)
            if np.min(grad) >= sol[size] - 1e-12:
                return lam
            if best is None or value < best[0]:
                best = (value, lam)
    return best[1]


def _corrective_step(atoms, candidate, table, base_potential, params, grid):
    """Energy-minimising mixture of the stored couplings and ``candidate`` under ``table``."""
    if not any(np.array_equal(candidate, a) for a in atoms):
        atoms = atoms + [candidate]
    n0, n1 = candidate.shape
    flat_paths = [table[i][j] for i in range(n0) for j in range(n1)]
    stack = np.stack([q.points for q in flat_paths])
    costs = np.array([action_cost(q, base_potential) for q in flat_paths])
    kmat = kernel_matrix(stack, stack, grid, params)
    verts = np.stack([a.ravel() for a in atoms])
    lam = _simplex_qp(verts @ costs, verts @ kmat @ verts.T)
    keep = [a for a, w in zip(atoms, lam) if w > 0]
    return (lam @ verts).reshape(n0, n1), keep


SCHEMES = ("auto", "best-response", "corrective")


def solve_problem_b(mu0, mu1, base_potential, params, grid, damping=1.0, tol=OUTER_TOL,
                    max_outer=MAX_OUTER, bvp_tol=ENDPOINT_TOL, require_certificate=False,
                    workers=None, scheme="auto"):
    """Best-response fixed point for transport with interacting paths.

    Starting from the non-interacting optimum, each sweep prices every pair
    with the effective cost induced by the current plan, solves the linear
    transport problem, and mixes the answer in with weight ``damping``.
    Stored paths are the effective minimal paths of the previous plan.  The
    loop stops once both the coupling (l1) and the paths (sup norm) move by
    at most ``tol``.

    Best response only ever proposes vertex couplings, so it cycles when the
    equilibrium is a genuine mixture.  ``scheme="corrective"`` instead keeps
    every proposed coupling and moves to the energy-minimising mixture of
    them (simplicial decomposition); ``"auto"`` starts with best response and
    switches the first time the energy goes up.
    """
    if not 0 < damping <= 1:
        raise InvalidArgument("damping must lie in (0, 1]")
    if scheme not in SCHEMES:
        raise InvalidArgument(f"scheme must be one of {SCHEMES}")
    if params.kernel_kind == "coulomb":
        raise UnsupportedError("the fixed-point solver supports the gaussian kernel only")
    d = mu0.dim
    certifiable = uniqueness_certifiable(params, d)
    if require_certificate and not certifiable:
        raise InvalidArgument(
            f"uniqueness certificate needs beta = 1 and theta < {theta0_bound(d):.6f}")
    base_potential = ZeroPotential() if base_potential is None else base_potential

    cost, table = endpoint_cost_matrix(mu0, mu1, base_potential, grid, tol=bvp_tol,
                                       workers=workers)
    coupling, _ = solve_exact(cost)
    plan = PathPlan.from_paths(coupling, table, mu0, mu1)
    trace = FixedPointTrace([_record(0, plan, base_potential, params, math.nan, math.nan)])
    mode = "corrective" if scheme == "corrective" else "best-response"
    trace.scheme = mode
    atoms = [coupling.matrix]

    for k in range(1, max_outer + 1):
        cost, new_table = effective_cost_matrix(plan, params, grid, base_potential,
                                                tol=bvp_tol, initial=table, workers=workers)
        best, _ = solve_exact(cost)
        p_old = plan.coupling.matrix
        if mode == "best-response":
            p_new = (1 - damping) * p_old + damping * best.matrix
        else:
            p_new, atoms = _corrective_step(atoms, best.matrix, new_table, base_potential,
                                            params, grid)
        l1 = float(np.sum(np.abs(p_new - p_old)))
        dpath = _max_path_change(new_table, table)
        table = new_table
        plan = PathPlan.from_paths(p_new, table, mu0, mu1)
        rec = _record(k, plan, base_potential, params, l1, dpath)
        trace.records.append(rec)
        if l1 <= tol and dpath <= tol:
            trace.converged = True
            break
        if (scheme == "auto" and mode == "best-response" and k >= 2
                and rec.energy > trace.records[-2].energy + ENERGY_SLACK):
            mode = "corrective"
            trace.scheme = mode
            trace.switched_at = k
            atoms = [p_new, best.matrix]
    if not trace.converged:
        raise ConvergenceError(
            f"fixed point not reached in {max_outer} outer iterations", trace)

    cost, final_table = effective_cost_matrix(plan, params, grid, base_potential,
                                              tol=bvp_tol, initial=table, workers=workers)
    best, duals = solve_exact(cost)
    plan_value = transport_cost(plan.coupling, cost)
    lp_value = transport_cost(best, cost)
    support_change = max(
        (plan.paths[ij].sup_distance(final_table[ij[0]][ij[1]]) for ij in plan.coupling.support()),
        default=0.0)
    trace.certificate = Certificate(
        cost, duals, plan_value, lp_value, plan_value - duals.value(mu0, mu1),
        float(np.sum(np.abs(best.matrix - plan.coupling.matrix))), support_change,
        certifiable)
    return plan, trace


@dataclass
class ConvexityReport:
    s: np.ndarray
    quadratic: np.ndarray
    second_differences: np.ndarray
    base_second_differences: np.ndarray | None = None

    @property
    def min_second_difference(self):
        return float(np.min(self.second_differences))


def convexity_probe(plan_a, plan_b, params, samples=20, base_potential=None):
    """Quadratic energy along the segment (1 - s) A + s B, s = k / samples."""
    if plan_a.grid != plan_b.grid:
        raise InvalidArgument("plans live on different grids")
    pa, pb = plan_a.coupling.matrix, plan_b.coupling.matrix
    if pa.shape != pb.shape or (
            np.max(np.abs(pa.sum(axis=1) - pb.sum(axis=1))) > 1e-10
            or np.max(np.abs(pa.sum(axis=0) - pb.sum(axis=0))) > 1e-10):
        raise InvalidArgument("plans do not share marginals")
    grid = plan_a.grid
    pairs_a, wa, sa = plan_a.atoms()
    pairs_b, wb, sb = plan_b.atoms()
    stack = np.concatenate([sa, sb])
    kmat = kernel_matrix(stack, stack, grid, params)
    s = np.arange(samples + 1) / samples
    weights = np.concatenate([np.outer(1 - s, wa), np.outer(s, wb)], axis=1)
    quad = np.einsum("sa,ab,sb->s", weights, kmat, weights)
    second = quad[:-2] - 2 * quad[1:-1] + quad[2:]
    base_second = None
    if base_potential is not None:
        costs = np.array([action_cost(plan_a.paths[ij], base_potential) for ij in pairs_a]
                         + [action_cost(plan_b.paths[ij], base_potential) for ij in pairs_b])
        lin = weights @ costs
        base_second = lin[:-2] - 2 * lin[1:-1] + lin[2:]
    return ConvexityReport(s, quad, second, base_second)


@dataclass
class KKTReport:
    max_feasibility_violation: float
    max_slackness_violation: float
    duality_gap: float
    violations: list = field(default_factory=list)

    @property
    def max_violation(self):
        return max(self.max_feasibility_violation, self.max_slackness_violation)

    def passed(self, tol=1e-8):
        return self.max_violation <= tol and abs(self.duality_gap) <= tol


def kkt_audit(plan, duals, base_potential, params, tol=1e-8, bvp_tol=ENDPOINT_TOL):
    """phi_i + psi_j <= c_eff(x_i, y_j) everywhere, with equality where the plan has mass."""
    cost, _ = effective_cost_matrix(plan, params, base_potential=base_potential, tol=bvp_tol)
    slack = cost.entries - duals.phi[:, None] - duals.psi[None, :]
    mask = plan.coupling.matrix > SUPPORT_TOL
    feas = float(max(0.0, -np.min(slack)))
    comp = float(np.max(np.abs(slack[mask]))) if mask.any() else 0.0
    report = KKTReport(feas, comp,
                       transport_cost(plan.coupling, cost)
                       - duals.value(plan.source, plan.target))
    for i, j in np.argwhere(slack < -tol):
        report.violations.append(((int(i), int(j)), "feasibility", float(-slack[i, j])))
    for i, j in np.argwhere(mask & (np.abs(slack) > tol)):
        report.violations.append(((int(i), int(j)), "slackness", float(abs(slack[i, j]))))
    return report


def tz_map(w, z):
    """exp(-|w - z|^2) (w - z), batched over leading axes."""
    r = np.asarray(w, dtype=float) - np.asarray(z, dtype=float)
    return np.exp(-np.sum(r * r, axis=-1))[..., None] * r


@dataclass
class LipschitzAudit:
    dim: int
    samples: int
    max_ratio: float
    bound: float

    @property
    def passed(self):
        return self.max_ratio <= self.bound


def tz_lipschitz_check(samples, d, seed=0, scale=2.0):
    """Monte Carlo audit of |T_z(w) - T_z(u)| <= d^2 |w - u|."""
    rng = np.random.default_rng(seed)
    w, u, z = (rng.uniform(-scale, scale, size=(samples, d)) for _ in range(3))
    # Half the draws use close pairs, where the local slope is largest.
    close = rng.random(samples) < 0.5
    u[close] = w[close] + 1e-3 * rng.standard_normal((int(close.sum()), d))
    num = np.linalg.norm(tz_map(w, z) - tz_map(u, z), axis=-1)
    den = np.linalg.norm(w - u, axis=-1)
    ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return LipschitzAudit(d, samples, float(np.max(ratio)), float(d * d))


def effective_twist_bound(d, theta):
    """Lower-bound coefficient 1 - 2 d^(5/2) theta^2 for the effective twist margin."""
    return 1 - 2 * d**2.5 * theta**2


def twist_margin_effective(x1, x2, y, plan, params, grid=None, base_potential=None,
                           h=1e-5, tol=ENDPOINT_TOL):
    """Finite-difference |grad_y c_eff(x1, y) - grad_y c_eff(x2, y)| under the crowd ``plan``."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if np.array_equal(x1, x2):
        raise InvalidArgument("twist margin needs two distinct source points")
    d = x1.shape[0]
    if params.active and not uniqueness_certifiable(params, d):
        raise InvalidArgument(
            f"effective twist bound is only certified for beta = 1 and theta < {theta0_bound(d):.6f}")
    grid = plan.grid if grid is None else grid
    pot = combined_potential(plan, params, base_potential)
    g1 = fd_grad_y(x1, y, pot, grid, h=h, tol=tol)
    g2 = fd_grad_y(x2, y, pot, grid, h=h, tol=tol)
    return float(np.linalg.norm(g1 - g2))


def straight_plan(coupling, source, target, grid):
    """PathPlan whose supported pairs travel along straight lines."""
    paths = {(i, j): linear_path(source.points[i], target.points[j], grid)
             for (i, j) in coupling.support()}
    return PathPlan(coupling, paths, source, target)
