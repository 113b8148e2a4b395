import math

import numpy as np
import pytest
from scipy.optimize import minimize

from pathot.core import DiscreteMeasure, DiscretePath, InteractionParams, linear_path, make_grid
from pathot.endpoint import endpoint_cost, fd_grad_y, twist_margin
from pathot.errors import ConvergenceError, InvalidArgument, SingularityError, UnsupportedError
from pathot.interaction import (CrowdPotential, PathPlan, convexity_probe, effective_cost_matrix,
                                effective_potential, effective_twist_bound, interaction_potential_U,
                                kernel_matrix, kernel_value, kkt_audit, lipschitz_factor,
                                solve_problem_b, straight_plan, theta0_bound, total_energy,
                                twist_margin_effective, tz_lipschitz_check, tz_map)
from pathot.minpath import action_cost
from pathot.mkp import Coupling, DualPotentials, solve_exact, transport_cost
from pathot.potentials import GaussianWell, ZeroPotential

GAUSS = InteractionParams("gaussian", 0.1, 1.0)
NONE = InteractionParams("none", 0.0)

# Instances whose equilibrium mixes two couplings, so plain best response cycles.
MIXED = [
    (0.268, [[0.492, -0.485], [-0.168, 0.278], [-0.177, -0.422], [0.152, -0.081]],
     [[-0.225, -0.379], [0.446, 0.195], [0.434, 0.435], [-0.239, -0.42]]),
    (0.215, [[0.291, -0.387], [-0.422, 0.349], [-0.411, -0.346]],
     [[0.017, 0.065], [0.286, 0.225], [-0.426, 0.061]]),
]


def single_plan(path):
    src = DiscreteMeasure.uniform([path.start])
    tgt = DiscreteMeasure.uniform([path.end])
    return PathPlan(Coupling([[1.0]]), {(0, 0): path}, src, tgt)


def two_body():
    return (DiscreteMeasure.uniform([[0, 0], [1, 0]]), DiscreteMeasure.uniform([[0, 1], [1, 1]]))


# ---------------------------------------------------------------- kernels

def test_kernel_self_value_is_theta():
    p = linear_path([0, 0], [1, 2], make_grid(8))
    assert kernel_value(p, p, GAUSS) == pytest.approx(0.1, abs=1e-16)


def test_kernel_at_constant_distance():
    g = make_grid(8)
    a = linear_path([0, 0], [1, 0], g)
    b = linear_path([0, 0.7], [1, 0.7], g)
    params = InteractionParams("gaussian", 0.3, 2.0)
    assert kernel_value(a, b, params) == pytest.approx(0.3 * math.exp(-2 * 0.49), abs=1e-15)


def test_kernel_symmetric_bit_exact(rng):
    g = make_grid(16)
    a = DiscretePath(g, rng.normal(size=(17, 2)))
    b = DiscretePath(g, rng.normal(size=(17, 2)))
    assert kernel_value(a, b, GAUSS) == kernel_value(b, a, GAUSS)


def test_coulomb_kernel():
    g = make_grid(4)
    a = linear_path([0, 0, 0], [1, 0, 0], g)
    b = linear_path([0, 2, 0], [1, 2, 0], g)
    c = InteractionParams("coulomb", 1.5, coulomb_smoothing=0.0)
    assert kernel_value(a, b, c) == pytest.approx(1.5 / 2)
    smooth = InteractionParams("coulomb", 1.0, coulomb_smoothing=1.0)
    assert kernel_value(a, a, smooth) == pytest.approx(1.0)
    with pytest.raises(SingularityError):
        kernel_value(a, a, c)
    flat = linear_path([0, 0], [1, 0], g)
    with pytest.raises(InvalidArgument):
        kernel_value(flat, flat, smooth)


def test_kernel_requires_shared_grid():
    with pytest.raises(InvalidArgument):
        kernel_value(linear_path([0], [1], make_grid(4)), linear_path([0], [1], make_grid(5)), GAUSS)


def test_kernel_matrix_matches_pairwise(rng):
    g = make_grid(8)
    paths = [DiscretePath(g, rng.normal(size=(9, 2))) for _ in range(4)]
    stack = np.stack([p.points for p in paths])
    k = kernel_matrix(stack, stack, g, GAUSS)
    for i, a in enumerate(paths):
        for j, b in enumerate(paths):
            assert k[i, j] == pytest.approx(kernel_value(a, b, GAUSS), abs=1e-16)


# ---------------------------------------------------------------- U and crowd potential

def test_u_examples():
    g = make_grid(8)
    sigma = linear_path([0, 0], [1, 0], g)
    assert interaction_potential_U(sigma, single_plan(sigma), GAUSS) == pytest.approx(0.1)
    assert interaction_potential_U(sigma, single_plan(sigma), InteractionParams("gaussian", 0.0)) == 0
    src = DiscreteMeasure.uniform([[0, 0.5], [0, -1.0]])
    tgt = DiscreteMeasure.uniform([[1, 0.5], [1, -1.0]])
    plan = straight_plan(Coupling([[0.5, 0], [0, 0.5]]), src, tgt, g)
    expected = 0.05 * (math.exp(-0.25) + math.exp(-1.0))
    assert interaction_potential_U(sigma, plan, GAUSS) == pytest.approx(expected, abs=1e-15)


def test_zero_theta_gives_zero_potential():
    plan = single_plan(linear_path([0, 0], [1, 0], make_grid(8)))
    pot = effective_potential(plan, InteractionParams("gaussian", 0.0))
    assert isinstance(pot, ZeroPotential)
    assert np.all(pot.gradient(np.ones((3, 2)), 0.5) == 0)


def test_crowd_gradient_for_single_path(rng):
    g = make_grid(8)
    sigma = linear_path([0, 0], [1, 1], g)
    theta = 0.2
    pot = effective_potential(single_plan(sigma), InteractionParams("gaussian", theta))
    for _ in range(20):
        x = rng.uniform(-2, 2, 2)
        j = int(rng.integers(9))
        r = x - sigma.points[j]
        expected = 4 * theta * math.exp(-r @ r) * r
        assert np.allclose(pot.gradient(x, g.nodes[j]), expected, atol=1e-15)
        assert np.linalg.norm(pot.gradient(x, g.nodes[j])) <= 4 * theta * math.exp(-0.5) / math.sqrt(2)


def test_crowd_gradient_and_hessian_match_differences(rng):
    g = make_grid(8)
    src = DiscreteMeasure.uniform([[0, 0], [1, 0], [0, 1]])
    tgt = DiscreteMeasure.uniform([[1, 1], [0, 2], [2, 0]])
    plan = straight_plan(Coupling(np.eye(3) / 3), src, tgt, g)
    pot = effective_potential(plan, InteractionParams("gaussian", 0.2, 1.7))
    # Probe exactly on nodes so the time snapping is constant nearby.
    for _ in range(20):
        x = rng.uniform(-1, 2, 2)
        t = g.nodes[int(rng.integers(9))]
        fd = np.array([(pot.value(x + e, t) - pot.value(x - e, t)) / 2e-6
                       for e in np.eye(2) * 1e-6])
        grad = pot.gradient(x, t)
        assert np.linalg.norm(grad - fd) <= 1e-6 * max(1.0, np.linalg.norm(grad))
        fdh = np.stack([(pot.gradient(x + e, t) - pot.gradient(x - e, t)) / 2e-6
                        for e in np.eye(2) * 1e-6], axis=-1)
        assert np.allclose(pot.hessian(x, t), fdh, atol=1e-7)


def test_crowd_time_snapping():
    g = make_grid(4)
    pot = CrowdPotential([1.0], linear_path([0.0], [1.0], g).points[None], g, 0.1)
    assert pot.value(np.array([0.5]), 0.49) == pot.value(np.array([0.5]), 0.5)
    assert pot.value(np.array([0.5]), 0.3) != pot.value(np.array([0.5]), 0.5)


@pytest.mark.parametrize("beta", [0.1, 0.5, 1.0, 2.0, 7.0])
def test_lipschitz_factor_bounds_jacobian(beta):
    r = np.linspace(0, 10, 200001)
    radial = np.exp(-beta * r**2) * np.abs(1 - 2 * beta * r**2)
    assert radial.max() <= lipschitz_factor(beta) + 1e-12
    assert np.exp(-beta * r**2).max() <= lipschitz_factor(beta)


def test_crowd_declared_bounds(rng):
    g = make_grid(8)
    theta, beta = 0.15, 1.3
    plan = single_plan(linear_path([0, 0], [1, 1], g))
    pot = effective_potential(plan, InteractionParams("gaussian", theta, beta))
    assert pot.value_bound == pytest.approx(2 * theta)
    assert pot.lipschitz == pytest.approx(4 * theta * beta * lipschitz_factor(beta))
    x = rng.uniform(-2, 3, (2000, 2))
    t = rng.choice(g.nodes, 2000)
    assert np.max(np.abs(pot.value(x, t))) <= pot.value_bound
    assert np.max(np.linalg.norm(pot.gradient(x, t), axis=-1)) <= pot.grad_bound + 1e-15
    assert np.max(np.linalg.norm(pot.hessian(x, t), ord=2, axis=(-2, -1))) <= pot.lipschitz


def test_coulomb_effective_potential_unsupported():
    plan = single_plan(linear_path([0, 0, 0], [1, 0, 0], make_grid(4)))
    with pytest.raises(UnsupportedError):
        effective_potential(plan, InteractionParams("coulomb", 0.1, coulomb_smoothing=0.1))


# ---------------------------------------------------------------- effective cost

def test_effective_cost_reduces_to_free_cost():
    g = make_grid(8)
    mu0, mu1 = two_body()
    plan = straight_plan(Coupling([[0.5, 0], [0, 0.5]]), mu0, mu1, g)
    cost, paths = effective_cost_matrix(plan, InteractionParams("gaussian", 0.0), g)
    diff = mu0.points[:, None] - mu1.points[None]
    assert np.allclose(cost.entries, 0.5 * np.sum(diff**2, axis=-1), atol=1e-15)
    assert paths[0][1].sup_distance(linear_path(mu0.points[0], mu1.points[1], g)) == 0


@pytest.mark.parametrize("theta", [0.05, 0.1, 0.25])
def test_single_atom_perturbation_bound(theta, rng):
    g = make_grid(32)
    params = InteractionParams("gaussian", theta)
    for _ in range(5):
        a, b = rng.uniform(-1, 1, (2, 2))
        sigma = linear_path(a, b, g)
        x, y = a + rng.normal(scale=0.5, size=2), b + rng.normal(scale=0.5, size=2)
        crowd = PathPlan(Coupling([[1.0]]), {(0, 0): sigma}, DiscreteMeasure.uniform([a]),
                         DiscreteMeasure.uniform([b]))
        pot = effective_potential(crowd, params)
        path = endpoint_cost(x, y, pot, g).path
        assert path.sup_distance(linear_path(x, y, g)) <= math.sqrt(2) * theta + 10 * g.h**2


def test_effective_gradient_matches_finite_differences(rng):
    g = make_grid(24)
    mu0 = DiscreteMeasure.uniform([[0, 0], [1, 0.2], [0.4, -0.5]])
    mu1 = DiscreteMeasure.uniform([[0.2, 1], [1, 1.1], [0.5, 0.4]])
    plan = straight_plan(Coupling(np.eye(3) / 3), mu0, mu1, g)
    params = InteractionParams("gaussian", 0.2)
    base = GaussianWell([0.5, 0.5], 0.1, 1.0)
    pot = base + effective_potential(plan, params)
    for _ in range(5):
        x, y = rng.uniform(-0.5, 1.5, (2, 2))
        grad = endpoint_cost(x, y, pot, g).grad_y
        fd = fd_grad_y(x, y, pot, g)
        assert np.linalg.norm(grad - fd) <= 1e-5 * max(1.0, np.linalg.norm(grad))


def test_effective_cost_below_straight_line_action():
    g = make_grid(16)
    mu0 = DiscreteMeasure.uniform([[0, 0], [1, 0.2], [0.4, -0.5]])
    mu1 = DiscreteMeasure.uniform([[0.2, 1], [1, 1.1], [0.5, 0.4]])
    plan = straight_plan(Coupling(np.eye(3) / 3), mu0, mu1, g)
    params = InteractionParams("gaussian", 0.25)
    base = GaussianWell([0.5, 0.5], 0.1, 1.0)
    cost, _ = effective_cost_matrix(plan, params, g, base)
    pot = base + effective_potential(plan, params)
    for i in range(3):
        for j in range(3):
            line = linear_path(mu0.points[i], mu1.points[j], g)
            assert cost.entries[i, j] <= action_cost(line, pot) + 1e-12


def test_effective_cost_parallel_matches_serial():
    g = make_grid(16)
    mu0, mu1 = two_body()
    plan = straight_plan(Coupling([[0.5, 0], [0, 0.5]]), mu0, mu1, g)
    a, _ = effective_cost_matrix(plan, GAUSS, g)
    b, _ = effective_cost_matrix(plan, GAUSS, g, workers=3)
    assert np.array_equal(a.entries, b.entries)


def test_effective_cost_grid_mismatch():
    mu0, mu1 = two_body()
    plan = straight_plan(Coupling([[0.5, 0], [0, 0.5]]), mu0, mu1, make_grid(8))
    with pytest.raises(InvalidArgument):
        effective_cost_matrix(plan, GAUSS, make_grid(16))


# ---------------------------------------------------------------- energy

def test_total_energy_examples():
    g = make_grid(8)
    plan = single_plan(linear_path([0, 0], [1, 0], g))
    e = total_energy(plan, ZeroPotential(), GAUSS)
    assert e.quadratic == pytest.approx(0.1) and e.base == pytest.approx(0.5)
    assert e.total == e.base + e.quadratic
    e0 = total_energy(plan, ZeroPotential(), InteractionParams("gaussian", 0.0))
    assert e0.quadratic == 0 and e0.total == e0.base


def test_total_energy_relabel_invariant(rng):
    g = make_grid(8)
    pts0, pts1 = rng.normal(size=(2, 4, 2))
    p = rng.permutation(4)
    q = rng.permutation(4)
    cpl = rng.permutation(np.eye(4)) / 4
    a = straight_plan(Coupling(cpl), DiscreteMeasure.uniform(pts0), DiscreteMeasure.uniform(pts1), g)
    b = straight_plan(Coupling(cpl[np.ix_(p, q)]), DiscreteMeasure.uniform(pts0[p]),
                      DiscreteMeasure.uniform(pts1[q]), g)
    ea, eb = total_energy(a, None, GAUSS), total_energy(b, None, GAUSS)
    assert ea.total == pytest.approx(eb.total, abs=1e-14)


def test_quadratic_energy_of_coincident_paths():
    # Every atom travels the same curve: the quadratic term attains theta * (total mass)^2.
    g = make_grid(8)
    src = DiscreteMeasure([[0.0, 0.0]], [1.0])
    plan = PathPlan(Coupling([[1.0]]), {(0, 0): linear_path([0, 0], [0, 0], g)}, src, src)
    assert total_energy(plan, None, GAUSS).quadratic == pytest.approx(0.1)


# ---------------------------------------------------------------- fixed point

def test_zero_theta_stops_after_one_sweep():
    g = make_grid(16)
    mu0 = DiscreteMeasure.uniform([[0, 0], [1, 0], [0.3, 0.8]])
    mu1 = DiscreteMeasure.uniform([[1, 1], [0, 1], [0.2, -0.4]])
    plan, trace = solve_problem_b(mu0, mu1, None, InteractionParams("gaussian", 0.0), g)
    assert trace.outer_iterations == 1
    direct, _ = solve_exact(trace.certificate.cost)
    assert np.array_equal(plan.coupling.matrix, direct.matrix)


def test_two_body_identity_pairing():
    g = make_grid(32)
    mu0, mu1 = two_body()
    params = InteractionParams("gaussian", 0.1, 1.0)
    plan, trace = solve_problem_b(mu0, mu1, None, params, g)
    assert np.array_equal(plan.coupling.matrix, [[0.5, 0], [0, 0.5]])
    # Oracle: the crossing pairing has strictly larger total energy.
    straight = straight_plan(Coupling([[0.5, 0], [0, 0.5]]), mu0, mu1, g)
    crossed = straight_plan(Coupling([[0, 0.5], [0.5, 0]]), mu0, mu1, g)
    assert total_energy(straight, None, params).total < total_energy(crossed, None, params).total
    assert total_energy(plan, None, params).total <= total_energy(straight, None, params).total
    damped, _ = solve_problem_b(mu0, mu1, None, params, g, damping=0.5)
    assert np.max(np.abs(damped.coupling.matrix - plan.coupling.matrix)) <= 1e-8
    energies = np.array(trace.energies)
    assert np.all(np.diff(energies[1:]) <= 1e-9)


def test_certificate_and_self_consistency():
    g = make_grid(16)
    mu0 = DiscreteMeasure.uniform([[0, 0], [1, 0], [0.3, 0.8]])
    mu1 = DiscreteMeasure.uniform([[1, 1], [0, 1], [0.2, -0.4]])
    params = InteractionParams("gaussian", 0.2)
    plan, trace = solve_problem_b(mu0, mu1, GaussianWell([0.5, 0.5], 0.1, 1.0), params, g)
    cert = trace.certificate
    assert cert.passed() and cert.uniqueness_certified
    assert cert.best_response_change <= 1e-8
    assert cert.plan_value == pytest.approx(cert.lp_value, abs=1e-9)


def test_require_certificate_gates_theta():
    mu0, mu1 = two_body()
    with pytest.raises(InvalidArgument):
        solve_problem_b(mu0, mu1, None, InteractionParams("gaussian", 0.5), make_grid(8),
                        require_certificate=True)
    with pytest.raises(InvalidArgument):
        solve_problem_b(mu0, mu1, None, InteractionParams("gaussian", 0.1, 2.0), make_grid(8),
                        require_certificate=True)


@pytest.mark.parametrize("kw", [dict(damping=0.0), dict(damping=1.5), dict(scheme="newton")])
def test_solver_argument_validation(kw):
    mu0, mu1 = two_body()
    with pytest.raises(InvalidArgument):
        solve_problem_b(mu0, mu1, None, GAUSS, make_grid(8), **kw)


def test_coulomb_fixed_point_unsupported():
    mu = DiscreteMeasure.uniform([[0, 0, 0]])
    with pytest.raises(UnsupportedError):
        solve_problem_b(mu, mu, None, InteractionParams("coulomb", 0.1, coulomb_smoothing=1), make_grid(8))


def test_budget_exhaustion_carries_trace():
    theta, src, tgt = MIXED[0]
    mu0, mu1 = DiscreteMeasure.uniform(src), DiscreteMeasure.uniform(tgt)
    with pytest.raises(ConvergenceError) as info:
        solve_problem_b(mu0, mu1, None, InteractionParams("gaussian", theta), make_grid(16),
                        scheme="best-response", max_outer=30)
    assert len(info.value.trace.records) == 31


def _qp_oracle(plan, params, grid):
    """Minimise the energy over couplings with the plan's own path table frozen."""
    src, tgt = plan.source, plan.target
    n0, n1 = src.size, tgt.size
    cost, table = effective_cost_matrix(plan, params, grid, tol=1e-13)
    flat = [table[i][j] for i in range(n0) for j in range(n1)]
    lin = np.array([action_cost(p, ZeroPotential()) for p in flat])
    stack = np.stack([p.points for p in flat])
    k = kernel_matrix(stack, stack, grid, params)
    cons = [{"type": "eq", "fun": lambda v, i=i: v.reshape(n0, n1)[i].sum() - src.weights[i]}
            for i in range(n0)]
    cons += [{"type": "eq", "fun": lambda v, j=j: v.reshape(n0, n1)[:, j].sum() - tgt.weights[j]}
             for j in range(n1 - 1)]
    start = np.outer(src.weights, tgt.weights).ravel()
    res = minimize(lambda v: lin @ v + v @ k @ v, start, jac=lambda v: lin + 2 * k @ v,
                   bounds=[(0, None)] * len(start), constraints=cons, method="SLSQP",
                   options={"ftol": 1e-15, "maxiter": 1000})
    return res.x.reshape(n0, n1)


@pytest.mark.parametrize("case", range(len(MIXED)))
def test_mixed_equilibrium(case):
    theta, src, tgt = MIXED[case]
    g = make_grid(16)
    mu0, mu1 = DiscreteMeasure.uniform(src), DiscreteMeasure.uniform(tgt)
    params = InteractionParams("gaussian", theta)
    with pytest.raises(ConvergenceError):
        solve_problem_b(mu0, mu1, None, params, g, scheme="best-response", max_outer=40)
    plan, trace = solve_problem_b(mu0, mu1, None, params, g)
    assert trace.switched_at is not None and trace.scheme == "corrective"
    assert len(plan.coupling.support()) > mu0.size
    kkt = kkt_audit(plan, trace.certificate.duals, None, params)
    assert kkt.passed() and not kkt.violations
    damped, _ = solve_problem_b(mu0, mu1, None, params, g, damping=0.5)
    assert np.max(np.abs(damped.coupling.matrix - plan.coupling.matrix)) <= 1e-6
    corrective, _ = solve_problem_b(mu0, mu1, None, params, g, scheme="corrective")
    assert np.max(np.abs(corrective.coupling.matrix - plan.coupling.matrix)) <= 1e-6
    assert np.max(np.abs(_qp_oracle(plan, params, g) - plan.coupling.matrix)) <= 1e-5


def test_energy_descent_on_random_fixtures(rng):
    g = make_grid(16)
    for _ in range(6):
        n = int(rng.integers(2, 5))
        mu0 = DiscreteMeasure.uniform(rng.uniform(-1, 1, (n, 2)))
        mu1 = DiscreteMeasure.uniform(rng.uniform(-1, 1, (n, 2)))
        params = InteractionParams("gaussian", float(rng.uniform(0.05, 0.29)))
        _, trace = solve_problem_b(mu0, mu1, None, params, g)
        assert trace.switched_at is None
        assert np.all(np.diff(trace.energies[1:]) <= 1e-9)


# ---------------------------------------------------------------- convexity and KKT

def _random_plan(rng, mu0, mu1, g, wiggle=0.3):
    n = mu0.size
    w = np.zeros((n, n))
    for _ in range(3):
        w += rng.random() * np.eye(n)[rng.permutation(n)]
    w = w / w.sum(axis=1, keepdims=True) / n
    paths = {}
    for (i, j) in Coupling(w).support():
        base = linear_path(mu0.points[i], mu1.points[j], g).points.copy()
        bump = np.sin(np.pi * g.nodes)[:, None] * rng.normal(scale=wiggle, size=mu0.dim)
        bump[[0, -1]] = 0.0
        paths[(i, j)] = DiscretePath(g, base + bump)
    return PathPlan(Coupling(w), paths, mu0, mu1)


def test_convexity_identical_plans_flat(rng):
    g = make_grid(8)
    mu0 = DiscreteMeasure.uniform(rng.normal(size=(3, 2)))
    mu1 = DiscreteMeasure.uniform(rng.normal(size=(3, 2)))
    a = _random_plan(rng, mu0, mu1, g)
    rep = convexity_probe(a, a, GAUSS, samples=20, base_potential=ZeroPotential())
    assert np.max(np.abs(rep.second_differences)) <= 1e-15
    assert np.max(np.abs(rep.base_second_differences)) <= 1e-15


@pytest.mark.parametrize("params", [
    InteractionParams("gaussian", 0.3, 1.0),
    InteractionParams("gaussian", 1.0, 4.0),
    InteractionParams("coulomb", 0.5, coulomb_smoothing=0.2),
], ids=["gaussian", "narrow-gaussian", "smoothed-coulomb"])
def test_convexity_random_plans(params, rng):
    d = 3 if params.kernel_kind == "coulomb" else 2
    g = make_grid(16)
    for _ in range(10):
        mu0 = DiscreteMeasure.uniform(rng.normal(size=(3, d)))
        mu1 = DiscreteMeasure.uniform(rng.normal(size=(3, d)))
        rep = convexity_probe(_random_plan(rng, mu0, mu1, g), _random_plan(rng, mu0, mu1, g),
                              params, samples=20, base_potential=GaussianWell(np.zeros(d), 0.2, 1.0))
        assert rep.min_second_difference >= -1e-9
        assert np.max(np.abs(rep.base_second_differences)) <= 1e-13
        assert np.all(rep.quadratic >= 0)


def test_convexity_rejects_mismatched_marginals(rng):
    g = make_grid(8)
    mu0, mu1 = two_body()
    other = DiscreteMeasure([[0, 1], [1, 1]], [0.3, 0.7])
    a = straight_plan(Coupling([[0.5, 0], [0, 0.5]]), mu0, mu1, g)
    b = straight_plan(Coupling([[0.3, 0.2], [0, 0.5]]), mu0, other, g)
    with pytest.raises(InvalidArgument):
        convexity_probe(a, b, GAUSS)


def test_kkt_audit_flags_perturbed_duals():
    g = make_grid(16)
    mu0, mu1 = two_body()
    plan, trace = solve_problem_b(mu0, mu1, None, GAUSS, g)
    duals = trace.certificate.duals
    assert kkt_audit(plan, duals, None, GAUSS).passed()
    bumped = DualPotentials(duals.phi + np.array([0.1, 0.0]), duals.psi)
    rep = kkt_audit(plan, bumped, None, GAUSS)
    assert not rep.passed()
    assert rep.max_feasibility_violation == pytest.approx(0.1, abs=1e-9)
    assert {kind for _, kind, _ in rep.violations} >= {"feasibility"}


def test_kkt_audit_without_interaction_is_lp_slackness(rng):
    g = make_grid(8)
    mu0 = DiscreteMeasure.uniform(rng.normal(size=(4, 2)))
    mu1 = DiscreteMeasure.uniform(rng.normal(size=(4, 2)))
    plan, trace = solve_problem_b(mu0, mu1, None, NONE, g)
    rep = kkt_audit(plan, trace.certificate.duals, None, NONE)
    assert rep.passed() and abs(rep.duality_gap) <= 1e-12
    assert transport_cost(plan.coupling, trace.certificate.cost) == pytest.approx(
        trace.certificate.duals.value(mu0, mu1), abs=1e-12)


# ---------------------------------------------------------------- bounds

@pytest.mark.parametrize("d, expected", [(1, 0.7071067811865475), (2, 0.29730177875068026),
                                         (4, 0.125)])
def test_theta0(d, expected):
    assert theta0_bound(d) == pytest.approx(expected, rel=1e-15)


def test_theta0_rejects_zero_dimension():
    with pytest.raises(InvalidArgument):
        theta0_bound(0)


def test_tz_examples():
    assert np.all(tz_map([0.3, 0.2], [0.3, 0.2]) == 0)
    assert tz_map([1.0], [0.0])[0] == pytest.approx(math.exp(-1))


@pytest.mark.parametrize("d", [1, 2, 3, 5])
def test_tz_lipschitz_audit(d):
    rep = tz_lipschitz_check(10_000, d, seed=d)
    assert rep.passed and rep.max_ratio <= 1.0 + 1e-9


def test_effective_twist_reduces_without_interaction():
    g = make_grid(16)
    plan = single_plan(linear_path([0, 0], [1, 1], g))
    free = InteractionParams("gaussian", 0.0)
    m = twist_margin_effective([0, 0], [0.5, 0.1], [1, 1], plan, free, g)
    assert m == pytest.approx(twist_margin([0, 0], [0.5, 0.1], [1, 1], ZeroPotential(), g), abs=1e-8)


def test_effective_twist_bound_in_2d(rng):
    g = make_grid(16)
    params = InteractionParams("gaussian", 0.2)
    coef = effective_twist_bound(2, 0.2)
    assert coef == pytest.approx(1 - 2 * 2**2.5 * 0.04)
    plan = straight_plan(Coupling(np.eye(3) / 3), DiscreteMeasure.uniform(rng.normal(size=(3, 2))),
                         DiscreteMeasure.uniform(rng.normal(size=(3, 2))), g)
    for _ in range(4):
        x1, x2, y = rng.uniform(-1, 1, (3, 2))
        margin = twist_margin_effective(x1, x2, y, plan, params, g)
        assert margin >= coef * np.linalg.norm(x1 - x2) - 10 * g.h**2 - 1e-4


def test_effective_twist_preconditions():
    g = make_grid(8)
    plan = single_plan(linear_path([0, 0], [1, 1], g))
    with pytest.raises(InvalidArgument):
        twist_margin_effective([0, 0], [0, 0], [1, 1], plan, GAUSS, g)
    with pytest.raises(InvalidArgument):
        twist_margin_effective([0, 0], [1, 0], [1, 1], plan, InteractionParams("gaussian", 0.4), g)
    with pytest.raises(InvalidArgument):
        twist_margin_effective([0, 0], [1, 0], [1, 1], plan, InteractionParams("gaussian", 0.1, 2.0), g)
