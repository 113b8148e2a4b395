"""Exact discrete Kantorovich problem: transportation simplex, duals, audits.

The solver is a transportation (network) simplex on the bipartite spanning
tree of basic cells.  Degeneracy is removed by the classical perturbation
``a_i + eps``, ``b_last + n0 * eps`` with ``eps`` kept symbolic: flows are
``(Fraction, int)`` pairs compared lexicographically, so the perturbed
problem is solved exactly and the reported plan is its ``eps -> 0`` limit.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import InfeasibleError, InvalidArgument
from .minpath import action_cost, solve_bvp

FEAS_TOL = 1e-10
GAP_TOL = 1e-9
SUPPORT_TOL = 1e-12
ORACLE_MAX_N = 8
MAX_CYCLE = 6
CHUNK = 4096


@dataclass(frozen=True)
class CostMatrix:
    entries: np.ndarray
    source: object
    target: object

    def __post_init__(self):
        c = np.array(self.entries, dtype=float)
        if c.shape != (self.source.size, self.target.size):
            raise InvalidArgument(
                f"cost shape {c.shape} does not match marginals "
                f"({self.source.size}, {self.target.size})")
        if not np.all(np.isfinite(c)):
            raise InvalidArgument("cost entries must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "entries", c)

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True)
class Coupling:
    matrix: np.ndarray

    def __post_init__(self):
        p = np.array(self.matrix, dtype=float)
        if p.ndim != 2 or np.any(p < 0) or not np.all(np.isfinite(p)):
            raise InvalidArgument("coupling must be a finite nonnegative matrix")
        p.setflags(write=False)
        object.__setattr__(self, "matrix", p)

    def marginal_error(self, source, target):
        rows = np.abs(self.matrix.sum(axis=1) - source.weights)
        cols = np.abs(self.matrix.sum(axis=0) - target.weights)
        return float(max(rows.max(), cols.max()))

    def support(self, tol=SUPPORT_TOL):
        return [tuple(int(k) for k in ij) for ij in np.argwhere(self.matrix > tol)]


@dataclass(frozen=True)
class DualPotentials:
    phi: np.ndarray
    psi: np.ndarray

    def violation(self, cost):
        """max_ij (phi_i + psi_j - C_ij); nonpositive when feasible."""
        c = cost.entries if isinstance(cost, CostMatrix) else np.asarray(cost)
        return float(np.max(self.phi[:, None] + self.psi[None, :] - c))

    def value(self, source, target):
        return float(self.phi @ source.weights + self.psi @ target.weights)


def transport_cost(coupling, cost):
    return float(np.sum(coupling.matrix * cost.entries))


def _balanced_fractions(a, b):
    fa = [Fraction(float(w)) for w in a]
    fb = [Fraction(float(w)) for w in b]
    diff = sum(fa) - sum(fb)
    if abs(diff) > FEAS_TOL:
        raise InfeasibleError(
            f"marginal masses differ by {float(diff):.3e} (tolerance {FEAS_TOL})")
    k = max(range(len(fb)), key=lambda j: fb[j])
    fb[k] += diff
    return fa, fb


def _northwest_corner(supply, demand):
    supply, demand = list(supply), list(demand)
    flows = {}
    i = j = 0
    n0, n1 = len(supply), len(demand)
    while i < n0 and j < n1:
        q = min(supply[i], demand[j])
        flows[(i, j)] = q
        supply[i] = (supply[i][0] - q[0], supply[i][1] - q[1])
        demand[j] = (demand[j][0] - q[0], demand[j][1] - q[1])
        if i == n0 - 1 and j == n1 - 1:
            break
        if supply[i] == (0, 0):
            i += 1
        else:
            j += 1
    return flows


def _tree_duals(basis, cost, n0, n1):
    rows = [[] for _ in range(n0)]
    cols = [[] for _ in range(n1)]
    for i, j in basis:
        rows[i].append(j)
        cols[j].append(i)
    u = np.full(n0, np.nan)
    v = np.full(n1, np.nan)
    u[0] = 0.0
    queue = deque([("r", 0)])
    while queue:
        side, k = queue.popleft()
        if side == "r":
            for j in rows[k]:
                if np.isnan(v[j]):
                    v[j] = cost[k, j] - u[k]
                    queue.append(("c", j))
        else:
            for i in cols[k]:
                if np.isnan(u[i]):
                    u[i] = cost[i, k] - v[k]
                    queue.append(("r", i))
    return u, v, rows, cols


def _tree_path(rows, cols, i, j):
    """Cells on the tree path from row ``i`` to column ``j``, in order from row i."""
    parent = {("r", i): None}
    queue = deque([("r", i)])
    while queue:
        node = queue.popleft()
        if node == ("c", j):
            break
        side, k = node
        nbrs = [("c", c) for c in rows[k]] if side == "r" else [("r", r) for r in cols[k]]
        for nb in nbrs:
            if nb not in parent:
                parent[nb] = node
                queue.append(nb)
    cells = []
    node = ("c", j)
    while parent[node] is not None:
        prev = parent[node]
        cell = (prev[1], node[1]) if prev[0] == "r" else (node[1], prev[1])
        cells.append(cell)
        node = prev
    return cells[::-1]


def _transport_simplex(a, b, cost):
    n0, n1 = cost.shape
    fa, fb = _balanced_fractions(a, b)
    supply = [(w, 1) for w in fa]
    demand = [(w, 0) for w in fb]
    demand[-1] = (fb[-1], n0)
    flows = _northwest_corner(supply, demand)
    eps = 1e-12 * max(1.0, float(np.max(np.abs(cost))))
    max_pivots = 50 * (n0 + n1) * n0 * n1 + 100
    for _ in range(max_pivots):
        u, v, rows, cols = _tree_duals(flows, cost, n0, n1)
        reduced = cost - u[:, None] - v[None, :]
        k = int(np.argmin(reduced))
        if reduced.flat[k] >= -eps:
            return flows, u, v
        i, j = divmod(k, n1)
        path = _tree_path(rows, cols, i, j)
        # Walking back from column j, tree cells alternate -, +, -, ...
        minus = path[::-1][0::2]
        plus = path[::-1][1::2]
        step, leave = min((flows[c], c) for c in minus)
        for c in minus:
            f = flows[c]
            flows[c] = (f[0] - step[0], f[1] - step[1])
        for c in plus:
            f = flows[c]
            flows[c] = (f[0] + step[0], f[1] + step[1])
        del flows[leave]
        flows[(i, j)] = step
    raise RuntimeError("transportation simplex exceeded its pivot budget")


def solve_exact(cost):
    """Optimal vertex coupling and dual potentials for a CostMatrix.

    Returns ``(Coupling, DualPotentials)``; primal and dual values agree to
    rounding, and ``P_ij > 0`` implies ``phi_i + psi_j = C_ij`` on the tree.
    """
    c = cost.entries
    flows, u, v = _transport_simplex(cost.source.weights, cost.target.weights, c)
    p = np.zeros(c.shape)
    for (i, j), (val, _) in flows.items():
        p[i, j] = float(val)
    return Coupling(p), DualPotentials(u, v)


def brute_force_oracle(cost):
    """Minimum over all permutations of the average matched cost (n <= 8, uniform)."""
    n0, n1 = cost.shape
    if n0 != n1:
        raise InvalidArgument("oracle needs equally many sources and targets")
    if n0 > ORACLE_MAX_N:
        raise InvalidArgument(f"oracle refuses n = {n0} > {ORACLE_MAX_N}")
    if not (cost.source.is_uniform() and cost.target.is_uniform()):
        raise InvalidArgument("oracle needs uniform marginals")
    c = cost.entries
    rows = np.arange(n0)
    perms = np.array(list(itertools.permutations(range(n0))))
    return float(np.min(c[rows, perms].sum(axis=1)) / n0)


def c_transform(values, cost, side="source"):
    """c-transform of a potential living on the sources (default) or the targets.

    ``side="source"``: phi -> min_i (C_ij - phi_i), a function on targets.
    ``side="target"``: psi -> min_j (C_ij - psi_j), a function on sources.
    """
    c = cost.entries if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=float)
    values = np.asarray(values, dtype=float)
    if side == "source":
        return np.min(c - values[:, None], axis=0)
    if side == "target":
        return np.min(c - values[None, :], axis=1)
    raise InvalidArgument(f"side must be 'source' or 'target', got {side!r}")


def duality_gap(coupling, duals, cost, feas_tol=FEAS_TOL, dual_tol=GAP_TOL):
    err = coupling.marginal_error(cost.source, cost.target)
    if err > feas_tol:
        raise InvalidArgument(f"coupling violates marginals by {err:.3e}")
    viol = duals.violation(cost)
    if viol > dual_tol:
        raise InvalidArgument(f"dual potentials infeasible by {viol:.3e}")
    return transport_cost(coupling, cost) - duals.value(cost.source, cost.target)


@dataclass
class CyclicalReport:
    cycles_checked: int = 0
    violation_count: int = 0
    max_excess: float = 0.0
    violations: list = field(default_factory=list)

    @property
    def passed(self):
        return self.violation_count == 0


def check_cyclical_monotonicity(coupling, cost, max_cycle=5, tol=GAP_TOL,
                                support_tol=SUPPORT_TOL, keep=50):
    """Exhaustively test every subset of support pairs of size <= max_cycle.

    A violation is a subset and permutation whose rerouted cost undercuts
    the supported one by more than ``tol``.
    """
    if max_cycle > MAX_CYCLE:
        raise InvalidArgument(f"max_cycle {max_cycle} exceeds {MAX_CYCLE}")
    c = cost.entries if isinstance(cost, CostMatrix) else np.asarray(cost)
    support = np.array(coupling.support(support_tol), dtype=int).reshape(-1, 2)
    report = CyclicalReport()
    for k in range(2, min(max_cycle, len(support)) + 1):
        perms = np.array([p for p in itertools.permutations(range(k))
                          if p != tuple(range(k))])
        combos = itertools.combinations(range(len(support)), k)
        while True:
            subsets = np.array(list(itertools.islice(combos, CHUNK)), dtype=int)
            if not len(subsets):
                break
            ii = support[subsets, 0]
            jj = support[subsets, 1]
            direct = c[ii, jj].sum(axis=1)
            rerouted = c[ii[:, None, :], jj[:, perms]].sum(axis=2)
            excess = direct[:, None] - rerouted
            report.cycles_checked += excess.size
            bad = np.argwhere(excess > tol)
            report.violation_count += len(bad)
            report.max_excess = max(report.max_excess, float(excess.max()))
            for s, q in bad[: max(0, keep - len(report.violations))]:
                pairs = [tuple(int(z) for z in support[idx]) for idx in subsets[s]]
                report.violations.append((pairs, tuple(int(z) for z in perms[q]),
                                          float(excess[s, q])))
    return report


@dataclass
class PairAudit:
    pair: tuple
    stored_cost: float
    minimal_cost: float
    passed: bool


@dataclass
class MinimalityReport:
    entries: list = field(default_factory=list)

    @property
    def failures(self):
        return [e for e in self.entries if not e.passed]

    @property
    def passed(self):
        return not self.failures


def minimality_audit(plan, potential, tol=1e-8, bvp_tol=1e-12):
    """Check every supported path against a fresh minimal-path solve."""
    report = MinimalityReport()
    for (i, j) in plan.coupling.support():
        path = plan.paths[(i, j)]
        stored = action_cost(path, potential)
        best = solve_bvp(plan.source.points[i], plan.target.points[j], potential,
                         path.grid, tol=bvp_tol).path
        minimal = action_cost(best, potential)
        ok = stored <= minimal + tol and abs(stored - minimal) <= tol
        report.entries.append(PairAudit((i, j), stored, minimal, ok))
    return report
