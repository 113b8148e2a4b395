"""Deterministic transport maps read off map-like couplings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonMapLikeError
from .minpath import action_cost

MAP_TOL = 1e-9
MASS_TOL = 1e-10


@dataclass(frozen=True)
class PathMap:
    """Source index -> target index, with the path each source travels along."""

    assignment: dict
    paths: dict

    def target_of(self, i):
        return self.assignment[i]

    def position(self, i, node):
        """Location of source ``i`` at grid node ``node``."""
        return self.paths[i].points[node]

    def is_bijection(self, n_targets):
        return sorted(self.assignment.values()) == list(range(n_targets))


def extract_map(plan, tol=MAP_TOL):
    """The map T with P_{i, T(i)} > 0, provided each row has a single such column.

    A column counts when it carries more than ``tol`` times the row's mass.
    """
    p = plan.coupling.matrix
    row_mass = plan.source.weights
    assignment, paths, bad = {}, {}, []
    for i in range(p.shape[0]):
        cols = np.flatnonzero(p[i] > tol * row_mass[i])
        if len(cols) != 1:
            bad.append((i, cols.tolist()))
            continue
        j = int(cols[0])
        assignment[i] = j
        paths[i] = plan.paths[(i, j)]
    if bad:
        detail = "; ".join(f"row {i} -> columns {c}" for i, c in bad)
        raise NonMapLikeError(f"coupling is not induced by a map: {detail}", [i for i, _ in bad])
    return PathMap(assignment, paths)


@dataclass
class PushforwardReport:
    mismatches: list = field(default_factory=list)
    max_error: float = 0.0

    @property
    def passed(self):
        return not self.mismatches


def pushforward_check(path_map, mu0, mu1, tol=MASS_TOL):
    """Mass delivered to each target atom against mu1.

    The time-0 marginal matches mu0 by construction; each path is also
    checked to start and end on its atoms.
    """
    delivered = np.zeros(mu1.size)
    report = PushforwardReport()
    for i in range(mu0.size):
        if i not in path_map.assignment:
            report.mismatches.append(("unassigned source", i, float(mu0.weights[i])))
            continue
        j = path_map.assignment[i]
        delivered[j] += mu0.weights[i]
        path = path_map.paths[i]
        if not (np.array_equal(path.start, mu0.points[i])
                and np.array_equal(path.end, mu1.points[j])):
            report.mismatches.append(("endpoint", i, j))
    err = np.abs(delivered - mu1.weights)
    report.max_error = float(err.max()) if err.size else 0.0
    for j in np.flatnonzero(err > tol):
        report.mismatches.append(("target mass", int(j), float(delivered[j]), float(mu1.weights[j])))
    return report


def monge_value(path_map, mu0, potential):
    """sum_i mu0_i * action of the path source i travels along."""
    return float(sum(mu0.weights[i] * action_cost(path_map.paths[i], potential)
                     for i in path_map.assignment))
