"""Command-line driver: ``pathot {minpath,solve,verify} --instance FILE --out DIR``.

Exit codes: 0 ok, 1 parse error, 2 solver divergence / non-convergence,
3 infeasible marginals, 4 verification failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from .core import as_point, linear_path
from .endpoint import endpoint_cost, endpoint_cost_matrix, fd_grad_y, twist_lower_bound, twist_margin
from .errors import (ConvergenceError, DivergenceError, InfeasibleError, InvalidArgument,
                     NonMapLikeError, SingularityError, UnsupportedError)
from .interaction import (PathPlan, convexity_probe, effective_twist_bound, kkt_audit,
                          solve_problem_b, theta0_bound, twist_margin_effective,
                          tz_lipschitz_check, uniqueness_certifiable)
from .io import ParseError, fmt, load_instance, write_matrix, write_report
from .minpath import holder_constant, max_holder_ratio, solve_bvp
from .mkp import check_cyclical_monotonicity, duality_gap, solve_exact, transport_cost
from .transportmap import extract_map, monge_value, pushforward_check

EXIT_OK, EXIT_PARSE, EXIT_DIVERGED, EXIT_INFEASIBLE, EXIT_VERIFY = 0, 1, 2, 3, 4
MASS_TOL = 1e-10


def _point_arg(text):
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from exc


def build_parser():
    parser = argparse.ArgumentParser(prog="pathot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--instance", required=True, help="instance file (JSON)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--grid-m", type=int, help="number of time intervals")
        p.add_argument("--tol", type=float, help="solver tolerance")
        p.add_argument("--theta", type=float, help="interaction strength")
        p.add_argument("--beta", type=float, help="gaussian kernel inverse width")
        p.add_argument("--damping", type=float, help="fixed-point damping in (0, 1]")
        p.add_argument("--seed", type=int, help="seed for sampled checks")
        p.add_argument("--max-cycle", type=int, help="longest cycle in the monotonicity audit")
        return p

    mp = common(sub.add_parser("minpath", help="minimal path between two points"))
    mp.add_argument("--x", type=_point_arg, help="start point, e.g. 0,0 (default: first source atom)")
    mp.add_argument("--y", type=_point_arg, help="end point (default: first target atom)")
    common(sub.add_parser("solve", help="optimal coupling, duals and diagnostics"))
    common(sub.add_parser("verify", help="run the bound and invariant battery"))
    return parser


def _load(args):
    spec = load_instance(args.instance)
    over = dict(grid_m=args.grid_m, theta=args.theta, beta=args.beta, damping=args.damping,
                seed=args.seed, max_cycle=args.max_cycle)
    if args.tol is not None:
        over["bvp_tol" if args.command == "minpath" else "tol"] = args.tol
    spec = spec.with_overrides(**over)
    if not 0 < spec.solver.damping <= 1:
        raise ParseError("damping", "must lie in (0, 1]")
    if spec.interaction.kernel == "coulomb" and spec.dimension < 3:
        raise ParseError("interaction.kernel", "the Coulomb kernel needs dimension >= 3")
    return spec


def _checked_measures(spec):
    mu0, mu1 = spec.measures()
    if abs(mu0.mass - mu1.mass) > MASS_TOL:
        raise InfeasibleError(f"source mass {mu0.mass!r} differs from target mass {mu1.mass!r}")
    if abs(mu0.mass - 1.0) > MASS_TOL:
        raise InfeasibleError(f"measures carry mass {mu0.mass!r}, not 1")
    return mu0, mu1


def write_paths(path, entries):
    """Blocks of ``label``, then one ``t x_1 ... x_d`` line per node."""
    with open(path, "w", encoding="utf-8") as fh:
        for label, p in entries:
            fh.write(f"# {label}\n")
            for t, row in zip(p.grid.nodes, p.points):
                fh.write(fmt(t) + " " + " ".join(fmt(v) for v in row) + "\n")


def write_trace(path, trace):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# iteration energy base quadratic l1_change path_change\n")
        for r in trace.records:
            fh.write(" ".join([str(r.iteration), fmt(r.energy), fmt(r.base), fmt(r.quadratic),
                               fmt(r.l1_change), fmt(r.path_change)]) + "\n")


# ---------------------------------------------------------------- minpath

def cmd_minpath(spec, args, out):
    pot = spec.potential.build()
    grid = spec.grid()
    mu0, mu1 = spec.measures()
    x = mu0.points[0] if args.x is None else args.x
    y = mu1.points[0] if args.y is None else args.y
    x = as_point(x, spec.dimension)
    y = as_point(y, spec.dimension)
    items = [("command", "minpath"), ("x", x), ("y", y), ("grid_m", grid.m),
             ("tol", spec.solver.bvp_tol), ("declared_lipschitz", pot.lipschitz)]
    try:
        rep = solve_bvp(x, y, pot, grid, tol=spec.solver.bvp_tol, max_iter=spec.solver.max_iter)
    except DivergenceError as exc:
        items += [("status", "diverged"), ("converged", "false"),
                  ("last_change", exc.last_change), ("message", str(exc))]
        if exc.report is not None:
            items += [("iterations", exc.report.iterations)]
            if exc.report.warning:
                items += [("warning", exc.report.warning)]
        write_report(os.path.join(out, "report.txt"), items)
        return EXIT_DIVERGED
    write_paths(os.path.join(out, "paths.txt"), [("path 0 0", rep.path)])
    items += [("status", "ok"), ("converged", "true"), ("iterations", rep.iterations),
              ("final_change", rep.final_change), ("newton_residual", rep.newton_residual),
              ("action", endpoint_cost(x, y, pot, grid, tol=spec.solver.bvp_tol).value)]
    if rep.warning:
        items.append(("warning", rep.warning))
    write_report(os.path.join(out, "report.txt"), items)
    return EXIT_OK


# ---------------------------------------------------------------- solve

def _map_items(plan, pot=None):
    """Map extraction summary; the Monge value is only meaningful without interaction."""
    try:
        pmap = extract_map(plan)
    except NonMapLikeError as exc:
        return [("map", "not map-like"), ("map_rows", list(exc.rows))]
    push = pushforward_check(pmap, plan.source, plan.target)
    items = [("map", "ok"),
             ("map_assignment", [pmap.assignment[i] for i in range(plan.source.size)]),
             ("map_pushforward", "pass" if push.passed else "fail")]
    if pot is not None:
        items.append(("map_monge_value", monge_value(pmap, plan.source, pot)))
    return items


def cmd_solve(spec, args, out):
    pot = spec.potential.build()
    params = spec.interaction.build()
    grid = spec.grid()
    mu0, mu1 = _checked_measures(spec)
    sv = spec.solver
    workers = sv.workers if sv.workers > 1 else None
    items = [("command", "solve"), ("grid_m", grid.m), ("n_source", mu0.size),
             ("n_target", mu1.size)]
    if not params.active:
        cost, table = endpoint_cost_matrix(mu0, mu1, pot, grid, tol=sv.bvp_tol, workers=workers)
        coupling, duals = solve_exact(cost)
        plan = PathPlan.from_paths(coupling, table, mu0, mu1)
        items += [("problem", "A")]
        trace = None
    else:
        items += [("problem", "B"), ("theta", params.theta), ("beta", params.beta),
                  ("damping", sv.damping)]
        try:
            plan, trace = solve_problem_b(mu0, mu1, pot, params, grid, damping=sv.damping,
                                          tol=sv.tol, max_outer=sv.max_outer,
                                          bvp_tol=sv.bvp_tol, workers=workers,
                                          scheme=sv.scheme)
        except ConvergenceError as exc:
            if exc.trace is not None:
                write_trace(os.path.join(out, "trace.txt"), exc.trace)
            write_report(os.path.join(out, "report.txt"),
                         items + [("status", "not converged"), ("message", str(exc))])
            return EXIT_DIVERGED
        cert = trace.certificate
        cost, duals = cert.cost, cert.duals
        write_trace(os.path.join(out, "trace.txt"), trace)
        energies = np.array(trace.energies)
        rises = np.diff(energies[1:])
        kkt = kkt_audit(plan, duals, pot, params, bvp_tol=sv.bvp_tol)
        items += [("outer_iterations", trace.outer_iterations), ("scheme", trace.scheme),
                  ("scheme_switched_at", -1 if trace.switched_at is None else trace.switched_at),
                  ("energy_final", energies[-1]),
                  ("energy_max_rise", float(rises.max()) if rises.size else 0.0),
                  ("certificate_gap", cert.duality_gap),
                  ("certificate_path_change", cert.path_change),
                  ("uniqueness_certifiable", "true" if cert.uniqueness_certified else "false"),
                  ("kkt_max_violation", kkt.max_violation), ("kkt_gap", kkt.duality_gap),
                  ("kkt", "pass" if kkt.passed() else "fail")]
    gap = duality_gap(plan.coupling, duals, cost)
    cyc = check_cyclical_monotonicity(plan.coupling, cost, max_cycle=sv.max_cycle)
    write_matrix(os.path.join(out, "coupling.txt"), plan.coupling.matrix)
    with open(os.path.join(out, "duals.txt"), "w", encoding="utf-8") as fh:
        fh.write("phi " + " ".join(fmt(v) for v in duals.phi) + "\n")
        fh.write("psi " + " ".join(fmt(v) for v in duals.psi) + "\n")
    write_paths(os.path.join(out, "paths.txt"),
                [(f"path {i} {j} mass {fmt(plan.coupling.matrix[i, j])}", plan.paths[(i, j)])
                 for (i, j) in plan.coupling.support()])
    items += [("status", "ok"), ("value", transport_cost(plan.coupling, cost)),
              ("duality_gap", gap),
              ("marginal_error", plan.coupling.marginal_error(mu0, mu1)),
              ("cyclical_max_cycle", sv.max_cycle),
              ("cyclical_cycles_checked", cyc.cycles_checked),
              ("cyclical_violations", cyc.violation_count)]
    items += _map_items(plan, pot if trace is None else None)
    write_report(os.path.join(out, "report.txt"), items)
    return EXIT_OK


# ---------------------------------------------------------------- verify

class Battery:
    def __init__(self):
        self.rows = []

    def add(self, name, status, observed=math.nan, allowed=math.nan, note=""):
        self.rows.append((name, status, observed, allowed, note))

    def check(self, name, observed, allowed, note=""):
        self.add(name, "pass" if observed <= allowed else "fail", observed, allowed, note)

    @property
    def failed(self):
        return [r for r in self.rows if r[1] == "fail"]


def _pairs(mu0, mu1, rng, count):
    idx = [(int(rng.integers(mu0.size)), int(rng.integers(mu1.size))) for _ in range(count)]
    return [(mu0.points[i], mu1.points[j]) for i, j in idx]


def run_battery(spec):
    pot = spec.potential.build()
    params = spec.interaction.build()
    grid = spec.grid()
    mu0, mu1 = _checked_measures(spec)
    sv = spec.solver
    d = spec.dimension
    rng = np.random.default_rng(sv.seed)
    slack = 10 * grid.h**2
    bat = Battery()
    L = pot.lipschitz

    bat.check("potential_gradient_fd", pot.self_check(d, seed=sv.seed), 1e-5,
              "relative gradient vs central differences")

    pairs = _pairs(mu0, mu1, rng, 4)
    solved = []
    if L < 1:
        for x, y in pairs:
            solved.append((x, y, solve_bvp(x, y, pot, grid, tol=sv.bvp_tol)))
    else:
        bat.add("bvp_contraction", "uncertified", L, 1.0, "declared L >= 1")

    if solved and L <= 0.5:
        worst = 0.0
        for _, _, rep in solved:
            ch = np.array(rep.changes[1:])
            if len(ch) > 1:
                # Increase relative to the previous change, ignoring rounding level moves.
                live = ch[:-1] > 1e-13
                if live.any():
                    worst = max(worst, float(np.max((ch[1:] - ch[:-1])[live])))
        bat.check("bvp_contraction", worst, 0.0, "max increase of Picard change after sweep 2")
    elif solved:
        bat.add("bvp_contraction", "skipped", L, 0.5, "monotone decay asserted for L <= 0.5")

    if solved:
        worst = -math.inf
        for _ in range(20):
            (x1, y1, r1) = solved[int(rng.integers(len(solved)))]
            x2 = x1 + 0.1 * rng.standard_normal(d)
            y2 = y1 + 0.1 * rng.standard_normal(d)
            r2 = solve_bvp(x2, y2, pot, grid, tol=sv.bvp_tol)
            bound = (np.linalg.norm(x1 - x2) + np.linalg.norm(y1 - y2)) / (1 - L) + slack
            worst = max(worst, r1.path.sup_distance(r2.path) - bound)
        bat.check("stability_bound", worst, 0.0, "sup distance minus (|dx|+|dy|)/(1-L) + 10h^2")

        if math.isfinite(pot.grad_bound):
            dev = max(rep.path.sup_distance(linear_path(x, y, grid)) for x, y, rep in solved)
            bat.check("linear_proximity", dev, math.sqrt(d) * pot.grad_bound + slack,
                      "sup distance to the straight line")
        if math.isfinite(pot.value_bound):
            worst = max(max_holder_ratio(rep.path) - holder_constant(rep.path, pot)
                        for _, _, rep in solved)
            bat.check("holder_modulus", worst, 0.0, "max ratio minus sqrt(2c + 2K + 1)")

        worst = 0.0
        for x, y, _ in solved[:2]:
            g = endpoint_cost(x, y, pot, grid, tol=sv.bvp_tol).grad_y
            fd = fd_grad_y(x, y, pot, grid)
            worst = max(worst, float(np.max(np.abs(g - fd)) / (1 + np.linalg.norm(g))))
        bat.check("gradient_fd", worst, 1e-6, "grad_y formula vs central differences")

    if L < 2 / 3 and mu0.size >= 2:
        x1, x2 = mu0.points[0], mu0.points[1]
        y = mu1.points[0]
        margin = twist_margin(x1, x2, y, pot, grid, tol=sv.bvp_tol)
        bound = twist_lower_bound(L, np.linalg.norm(x1 - x2)) - slack
        bat.add("twist_margin", "pass" if margin >= bound else "fail", margin, bound,
                "margin must exceed the bound")
    else:
        bat.add("twist_margin", "uncertified" if L >= 2 / 3 else "skipped", L, 2 / 3,
                "needs L < 2/3 and two source atoms")

    if L < 1:
        cost, table = endpoint_cost_matrix(mu0, mu1, pot, grid, tol=sv.bvp_tol)
        coupling, duals = solve_exact(cost)
        bat.check("lp_duality_gap", abs(duality_gap(coupling, duals, cost)), 1e-9)
        cyc = check_cyclical_monotonicity(coupling, cost, max_cycle=sv.max_cycle)
        bat.check("cyclical_monotonicity", cyc.violation_count, 0,
                  f"violations up to cycle length {sv.max_cycle}")
        plan_a = PathPlan.from_paths(coupling, table, mu0, mu1)
        try:
            pmap = extract_map(plan_a)
            bat.check("monge_equals_kantorovich",
                      abs(monge_value(pmap, mu0, pot) - transport_cost(coupling, cost)), 1e-9)
        except NonMapLikeError:
            bat.add("monge_equals_kantorovich", "skipped", note="plan is not map-like")
        if params.kernel_kind != "none" and params.theta > 0:
            product = np.outer(mu0.weights, mu1.weights)
            try:
                probe = convexity_probe(plan_a, PathPlan.from_paths(product, table, mu0, mu1),
                                        params, samples=20)
                bat.check("convexity_probe", -probe.min_second_difference, 1e-9,
                          "negated min second difference of the quadratic energy")
            except SingularityError as exc:
                bat.add("convexity_probe", "skipped", note=str(exc))
    else:
        bat.add("lp_duality_gap", "skipped", note="cost matrix needs L < 1")

    audit = tz_lipschitz_check(10_000, d, seed=sv.seed)
    bat.check("tz_lipschitz", audit.max_ratio, audit.bound, "max |dT|/|dw| over 1e4 triples")

    if params.active and L < 1:
        _interaction_checks(bat, spec, pot, params, grid, mu0, mu1, slack)
    return bat


def _interaction_checks(bat, spec, pot, params, grid, mu0, mu1, slack):
    sv = spec.solver
    d = spec.dimension
    if params.kernel_kind != "gaussian":
        bat.add("fixed_point", "skipped", note="fixed point needs the gaussian kernel")
        return
    try:
        plan, trace = solve_problem_b(mu0, mu1, pot, params, grid, damping=sv.damping,
                                      tol=sv.tol, max_outer=sv.max_outer, bvp_tol=sv.bvp_tol,
                                      scheme=sv.scheme)
    except (ConvergenceError, DivergenceError) as exc:
        bat.add("fixed_point", "fail", note=str(exc))
        return
    bat.add("fixed_point", "pass", trace.outer_iterations, sv.max_outer, "outer iterations")
    kkt = kkt_audit(plan, trace.certificate.duals, pot, params, bvp_tol=sv.bvp_tol)
    bat.check("kkt", max(kkt.max_violation, abs(kkt.duality_gap)), 1e-8)
    energies = np.array(trace.energies)
    rises = np.diff(energies[1:])
    certified = uniqueness_certifiable(params, d)
    if certified and sv.damping == 1 and trace.switched_at is None:
        bat.check("energy_descent", float(rises.max()) if rises.size else 0.0, 1e-9,
                  "largest per-step energy increase")
    else:
        bat.add("energy_descent", "uncertified", note="needs beta = 1, theta < theta0, damping 1")
    theta0 = theta0_bound(d)
    if certified and mu0.size >= 2:
        x1, x2 = mu0.points[0], mu0.points[1]
        y = mu1.points[0]
        # The bound concerns the cost shaped by the crowd alone.
        margin = twist_margin_effective(x1, x2, y, plan, params, grid)
        bound = effective_twist_bound(d, params.theta) * np.linalg.norm(x1 - x2) - slack - 1e-4
        bat.add("effective_twist_margin", "pass" if margin >= bound else "fail", margin, bound,
                "interaction-only effective cost; margin must exceed the bound")
    else:
        bat.add("effective_twist_margin", "uncertified", params.theta, theta0,
                "needs beta = 1 and theta < theta0")


def cmd_verify(spec, args, out):
    bat = run_battery(spec)
    items = [("command", "verify")]
    for name, status, observed, allowed, note in bat.rows:
        items += [(f"{name}.status", status), (f"{name}.observed", observed),
                  (f"{name}.allowed", allowed)]
        if note:
            items.append((f"{name}.note", note))
    items += [("failed", len(bat.failed)), ("status", "fail" if bat.failed else "pass")]
    write_report(os.path.join(out, "report.txt"), items)
    return EXIT_VERIFY if bat.failed else EXIT_OK


COMMANDS = {"minpath": cmd_minpath, "solve": cmd_solve, "verify": cmd_verify}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        spec = _load(args)
    except (ParseError, InvalidArgument, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    os.makedirs(args.out, exist_ok=True)
    try:
        code = COMMANDS[args.command](spec, args, args.out)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InfeasibleError as exc:
        write_report(os.path.join(args.out, "report.txt"),
                     [("command", args.command), ("status", "infeasible"), ("message", str(exc))])
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DivergenceError, ConvergenceError) as exc:
        write_report(os.path.join(args.out, "report.txt"),
                     [("command", args.command), ("status", "diverged"), ("message", str(exc))])
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InvalidArgument, UnsupportedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    with open(os.path.join(args.out, "report.txt"), encoding="utf-8") as fh:
        print(fh.read(), end="")
    return code


if __name__ == "__main__":
    sys.exit(main())
