"""Instance files and numeric dumps.

Instances are JSON documents; every float is written with 17 significant
digits so that ``parse_instance(emit_instance(spec)) == spec`` exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .core import DiscreteMeasure, InteractionParams, make_grid
from .errors import InvalidArgument
from .potentials import GaussianWell, LinearPotential, TablePotential, ZeroPotential

POTENTIAL_KINDS = ("zero", "linear-gradient", "gaussian-well", "custom-table")
KERNEL_KINDS = ("none", "gaussian", "coulomb")
BOUND_SLACK = 1e-12


class ParseError(InvalidArgument):
    """Malformed instance; ``field`` names the offending entry."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def fmt(x):
    """17 significant digits, which round-trips any double."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


@dataclass(frozen=True)
class MeasureSpec:
    points: tuple
    weights: tuple | None = None

    def build(self):
        pts = np.array(self.points, dtype=float)
        if self.weights is None:
            w = np.full(len(pts), 1.0 / len(pts))
        else:
            w = np.array(self.weights, dtype=float)
        return DiscreteMeasure(pts, w, normalized=False)


@dataclass(frozen=True)
class PotentialSpec:
    kind: str = "zero"
    gradient: tuple | None = None
    offset: float = 0.0
    center: tuple | None = None
    depth: float | None = None
    width: float | None = None
    drift: tuple | None = None
    axes: tuple | None = None
    values: tuple | None = None
    gradients: tuple | None = None
    declared_value_bound: float | None = None
    declared_lipschitz: float | None = None

    def build(self):
        if self.kind == "zero":
            pot = ZeroPotential()
        elif self.kind == "linear-gradient":
            pot = LinearPotential(self.gradient, self.offset)
        elif self.kind == "gaussian-well":
            pot = GaussianWell(self.center, self.depth, self.width, self.drift)
        else:
            pot = TablePotential(self.axes, self.values, self.gradients)
        # Declared bounds may only loosen the analytic ones.
        for name, attr in (("declared_value_bound", "value_bound"),
                           ("declared_lipschitz", "lipschitz")):
            declared = getattr(self, name)
            if declared is None:
                continue
            analytic = getattr(pot, attr)
            if declared < analytic - BOUND_SLACK * max(1.0, abs(analytic)):
                raise ParseError(f"potential.{name}",
                                 f"{declared!r} is below the analytic bound {analytic!r}")
            setattr(pot, attr, float(declared))
        return pot


@dataclass(frozen=True)
class InteractionSpec:
    kernel: str = "none"
    theta: float = 0.0
    beta: float = 1.0
    coulomb_smoothing: float = 0.0

    def build(self):
        return InteractionParams(self.kernel, self.theta, self.beta, self.coulomb_smoothing)


@dataclass(frozen=True)
class SolverSpec:
    tol: float = 1e-8
    bvp_tol: float = 1e-12
    max_iter: int = 10000
    max_outer: int = 500
    damping: float = 1.0
    seed: int = 0
    max_cycle: int = 5
    scheme: str = "auto"
    workers: int = 1


@dataclass(frozen=True)
class InstanceSpec:
    dimension: int
    grid_m: int
    source: MeasureSpec
    target: MeasureSpec
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    interaction: InteractionSpec = field(default_factory=InteractionSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)

    def grid(self):
        return make_grid(self.grid_m)

    def measures(self):
        return self.source.build(), self.target.build()

    def with_overrides(self, **kw):
        """Copy with solver / interaction / grid settings replaced where given."""
        kw = {k: v for k, v in kw.items() if v is not None}
        spec = self
        if "grid_m" in kw:
            spec = replace(spec, grid_m=int(kw.pop("grid_m")))
        inter = {k: kw.pop(k) for k in ("theta", "beta") if k in kw}
        if inter:
            new = replace(spec.interaction, **{k: float(v) for k, v in inter.items()})
            if new.theta > 0 and new.kernel == "none":
                new = replace(new, kernel="gaussian")
            spec = replace(spec, interaction=new)
        if kw:
            spec = replace(spec, solver=replace(spec.solver, **kw))
        return spec


# ---------------------------------------------------------------- parsing

def _number(value, name, integer=False, positive=False, nonneg=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(name, f"expected a number, got {value!r}")
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise ParseError(name, f"expected an integer, got {value!r}")
        value = int(value)
    else:
        value = float(value)
        if not math.isfinite(value):
            raise ParseError(name, "must be finite")
    if positive and not value > 0:
        raise ParseError(name, "must be positive")
    if nonneg and value < 0:
        raise ParseError(name, "must be nonnegative")
    return value


def _vector(value, name, length=None):
    if not isinstance(value, list) or not value:
        raise ParseError(name, "expected a non-empty array of numbers")
    out = tuple(_number(v, f"{name}[{k}]") for k, v in enumerate(value))
    if length is not None and len(out) != length:
        raise ParseError(name, f"expected {length} entries, got {len(out)}")
    return out


def _nested(value, name, shape):
    """Rectangular nested array of the given shape, as nested tuples."""
    if not shape:
        return _number(value, name)
    if not isinstance(value, list) or len(value) != shape[0]:
        raise ParseError(name, f"expected an array of length {shape[0]}")
    return tuple(_nested(v, f"{name}[{k}]", shape[1:]) for k, v in enumerate(value))


def _section(doc, key, required=False):
    if key not in doc:
        if required:
            raise ParseError(key, "missing")
        return {}
    sec = doc[key]
    if not isinstance(sec, dict):
        raise ParseError(key, "expected an object")
    return sec


def _check_keys(sec, allowed, prefix):
    for k in sec:
        if k not in allowed:
            raise ParseError(f"{prefix}.{k}" if prefix else k, "unknown field")


def _measure(doc, key, d):
    sec = _section(doc, key, required=True)
    _check_keys(sec, ("points", "weights"), key)
    if "points" not in sec:
        raise ParseError(f"{key}.points", "missing")
    pts = sec["points"]
    if not isinstance(pts, list) or not pts:
        raise ParseError(f"{key}.points", "expected a non-empty array of points")
    points = tuple(_vector(p, f"{key}.points[{k}]", d) for k, p in enumerate(pts))
    weights = None
    if sec.get("weights") is not None:
        weights = _vector(sec["weights"], f"{key}.weights", len(points))
        if min(weights) < 0:
            raise ParseError(f"{key}.weights", "weights must be nonnegative")
    return MeasureSpec(points, weights)


def _potential(doc, d):
    sec = _section(doc, "potential")
    allowed = [f.name for f in fields(PotentialSpec)]
    _check_keys(sec, allowed, "potential")
    kind = sec.get("kind", "zero")
    if kind not in POTENTIAL_KINDS:
        raise ParseError("potential.kind", f"expected one of {POTENTIAL_KINDS}, got {kind!r}")
    kw = {"kind": kind}
    for name in ("declared_value_bound", "declared_lipschitz"):
        if sec.get(name) is not None:
            kw[name] = _number(sec[name], f"potential.{name}", nonneg=True)
    if kind == "linear-gradient":
        if "gradient" not in sec:
            raise ParseError("potential.gradient", "missing")
        kw["gradient"] = _vector(sec["gradient"], "potential.gradient", d)
        kw["offset"] = _number(sec.get("offset", 0.0), "potential.offset")
    elif kind == "gaussian-well":
        for name in ("center", "depth", "width"):
            if name not in sec:
                raise ParseError(f"potential.{name}", "missing")
        kw["center"] = _vector(sec["center"], "potential.center", d)
        kw["depth"] = _number(sec["depth"], "potential.depth")
        kw["width"] = _number(sec["width"], "potential.width", positive=True)
        if sec.get("drift") is not None:
            kw["drift"] = _vector(sec["drift"], "potential.drift", d)
    elif kind == "custom-table":
        for name in ("axes", "values", "gradients"):
            if name not in sec:
                raise ParseError(f"potential.{name}", "missing")
        if not isinstance(sec["axes"], list) or len(sec["axes"]) != d:
            raise ParseError("potential.axes", f"expected {d} axes")
        axes = tuple(_vector(a, f"potential.axes[{k}]") for k, a in enumerate(sec["axes"]))
        for k, a in enumerate(axes):
            if len(a) < 2 or any(b <= a_ for a_, b in zip(a, a[1:])):
                raise ParseError(f"potential.axes[{k}]",
                                 "must be strictly increasing with at least 2 nodes")
        shape = tuple(len(a) for a in axes)
        kw["axes"] = axes
        kw["values"] = _nested(sec["values"], "potential.values", shape)
        kw["gradients"] = _nested(sec["gradients"], "potential.gradients", shape + (d,))
    return PotentialSpec(**kw)


def _interaction(doc):
    sec = _section(doc, "interaction")
    _check_keys(sec, [f.name for f in fields(InteractionSpec)], "interaction")
    kernel = sec.get("kernel", "none")
    if kernel not in KERNEL_KINDS:
        raise ParseError("interaction.kernel", f"expected one of {KERNEL_KINDS}, got {kernel!r}")
    return InteractionSpec(
        kernel,
        _number(sec.get("theta", 0.0), "interaction.theta", nonneg=True),
        _number(sec.get("beta", 1.0), "interaction.beta", positive=True),
        _number(sec.get("coulomb_smoothing", 0.0), "interaction.coulomb_smoothing", nonneg=True),
    )


def _solver(doc):
    sec = _section(doc, "solver")
    _check_keys(sec, [f.name for f in fields(SolverSpec)], "solver")
    base = SolverSpec()
    kw = {}
    for f in fields(SolverSpec):
        if f.name not in sec:
            continue
        name = f"solver.{f.name}"
        if f.name == "scheme":
            if sec[f.name] not in ("auto", "best-response", "corrective"):
                raise ParseError(name, f"unknown scheme {sec[f.name]!r}")
            kw[f.name] = sec[f.name]
        elif isinstance(getattr(base, f.name), int):
            kw[f.name] = _number(sec[f.name], name, integer=True, nonneg=True)
        else:
            kw[f.name] = _number(sec[f.name], name, positive=True)
    if kw.get("damping", 1.0) > 1:
        raise ParseError("solver.damping", "must lie in (0, 1]")
    return SolverSpec(**kw)


def instance_from_dict(doc):
    if not isinstance(doc, dict):
        raise ParseError("<root>", "expected an object")
    _check_keys(doc, [f.name for f in fields(InstanceSpec)], "")
    for key in ("dimension", "grid_m"):
        if key not in doc:
            raise ParseError(key, "missing")
    d = _number(doc["dimension"], "dimension", integer=True, positive=True)
    m = _number(doc["grid_m"], "grid_m", integer=True)
    if m < 2:
        raise ParseError("grid_m", "needs at least 2 intervals")
    return InstanceSpec(d, m, _measure(doc, "source", d), _measure(doc, "target", d),
                        _potential(doc, d), _interaction(doc), _solver(doc))


def parse_instance(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError("<document>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return instance_from_dict(doc)


def load_instance(path):
    with open(path, encoding="utf-8") as fh:
        return parse_instance(fh.read())


# ---------------------------------------------------------------- emitting

def _emit_value(v, indent):
    if isinstance(v, dict):
        if not v:
            return "{}"
        pad = " " * (indent + 2)
        items = [f'{pad}{json.dumps(k)}: {_emit_value(x, indent + 2)}' for k, x in v.items()]
        return "{\n" + ",\n".join(items) + "\n" + " " * indent + "}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_emit_value(x, indent) for x in v) + "]"
    if isinstance(v, str):
        return json.dumps(v)
    return fmt(v)


def _spec_dict(obj):
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        if v is None:
            continue
        out[f.name] = _spec_dict(v) if hasattr(v, "__dataclass_fields__") else v
    return out


def emit_instance(spec):
    return _emit_value(_spec_dict(spec), 0) + "\n"


def write_matrix(path, matrix, header=None):
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"# {header}\n")
        for row in np.atleast_2d(matrix):
            fh.write(" ".join(fmt(x) for x in row) + "\n")


def write_report(path, items):
    """One ``key = value`` line per item; sequences are space separated."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in items:
            if isinstance(value, (list, tuple, np.ndarray)):
                value = " ".join(fmt(x) for x in np.ravel(value))
            elif not isinstance(value, str):
                value = fmt(value)
            fh.write(f"{key} = {value}\n")


def read_report(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if " = " in line:
                k, v = line.rstrip("\n").split(" = ", 1)
                out[k] = v
    return out
