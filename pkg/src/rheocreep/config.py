"""Run configuration: flat ``key = value`` files with dotted section prefixes.

Example::

    dim = 2
    grid.lengths = 1 1
    grid.cells = 8 8
    grid.periodic = true false
    material.nu_kv = 1
    loads.dirichlet.x2+ = 0:0 0, 0.5:0.1 0
    time.T = 0.5
    time.mode = dynamic

Vector loads are either constant (``0.001 0``) or piecewise linear in time
(``t0:v, t1:v, ...``, held constant outside the knots). ``#`` starts a
comment.
"""

from dataclasses import dataclass, fields
import math
import re

from .constitutive import MaterialParams, validate_params
from .galerkin.splines import Grid, _parse_side

MODES = ("dynamic", "quasi_static")
_FIELD_SELECTORS = {"y": ("reference", "shear"), "v": ("zero", "shear"), "P": ("identity", "shear")}


class ParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ConfigInvalid(ValueError):
    """Raised with every violated requirement, not only the first."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.violations))


@dataclass(frozen=True)
class Ramp:
    """Piecewise-linear vector function of time given by (t, value) knots."""
    knots: tuple

    def __call__(self, t):
        ts = [k[0] for k in self.knots]
        if t <= ts[0]:
            return list(self.knots[0][1])
        if t >= ts[-1]:
            return list(self.knots[-1][1])
        for (t0, v0), (t1, v1) in zip(self.knots, self.knots[1:]):
            if t0 <= t <= t1:
                s = (t - t0) / (t1 - t0)
                return [a + s * (b - a) for a, b in zip(v0, v1)]
        raise AssertionError("unreachable")

    @property
    def size(self):
        return len(self.knots[0][1])


@dataclass(frozen=True)
class FieldSelector:
    """Initial field: a named analytic field with an optional amplitude."""
    name: str
    amplitude: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    dim: int = 2
    lengths: tuple = (1.0, 1.0)
    cells: tuple = (8, 8)
    periodic: tuple = (True, False)
    material: MaterialParams = MaterialParams()
    initial_y: FieldSelector = FieldSelector("reference")
    initial_v: FieldSelector = FieldSelector("zero")
    initial_P: FieldSelector = FieldSelector("identity")
    restart: str = ""
    body_force: Ramp = None
    traction: tuple = ()      # ((side, Ramp), ...)
    dirichlet: tuple = ()     # ((side, Ramp), ...)
    T: float = 1.0
    dt0: float = 0.01
    dt_max: float = 0.01
    mode: str = "dynamic"
    dump_every: int = 0
    tol: float = 1e-10
    max_iter: int = 25
    max_halvings: int = 8
    fd_step: float = 1e-7
    det_min: float = 1e-6
    nquad: int = 4

    @property
    def grid(self):
        return Grid(self.lengths, self.cells, self.periodic)

    @property
    def effective_rho(self):
        return 0.0 if self.mode == "quasi_static" else self.material.rho


# -- value parsing -------------------------------------------------------------

def _float(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"non-finite number {text!r}")
    return v


def _int(text):
    v = float(text)
    if v != int(v):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def _bool(text):
    low = text.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _vector(text, conv=_float):
    return tuple(conv(x) for x in text.replace(",", " ").split())


def _ramp(text):
    text = text.strip()
    if ":" not in text:
        return Ramp(((0.0, _vector(text)),))
    knots = []
    for part in text.split(","):
        if ":" not in part:
            raise ValueError(f"ramp knot {part.strip()!r} lacks 't:'")
        t, vals = part.split(":", 1)
        knots.append((_float(t), _vector(vals)))
    if any(b[0] <= a[0] for a, b in zip(knots, knots[1:])):
        raise ValueError("ramp knot times must increase")
    if len({len(k[1]) for k in knots}) != 1:
        raise ValueError("ramp knots must have equal vector sizes")
    return Ramp(tuple(knots))


def _selector(kind):
    def parse(text):
        parts = text.split(":")
        name = parts[0].strip()
        if name not in _FIELD_SELECTORS[kind]:
            raise ValueError(f"initial.{kind} must be one of {_FIELD_SELECTORS[kind]}, got {name!r}")
        amp = _float(parts[1]) if len(parts) > 1 else 0.0
        return FieldSelector(name, amp)
    return parse


_MATERIAL_INT = {"s_h"}
_SCALARS = {
    "dim": ("dim", _int),
    "grid.lengths": ("lengths", _vector),
    "grid.cells": ("cells", lambda s: _vector(s, _int)),
    "grid.periodic": ("periodic", lambda s: _vector(s, _bool)),
    "grid.nquad": ("nquad", _int),
    "initial.y": ("initial_y", _selector("y")),
    "initial.v": ("initial_v", _selector("v")),
    "initial.P": ("initial_P", _selector("P")),
    "initial.restart": ("restart", str),
    "loads.body_force": ("body_force", _ramp),
    "time.T": ("T", _float),
    "time.dt0": ("dt0", _float),
    "time.dt_max": ("dt_max", _float),
    "time.mode": ("mode", str),
    "output.dump_every": ("dump_every", _int),
    "solver.tol": ("tol", _float),
    "solver.max_iter": ("max_iter", _int),
    "solver.max_halvings": ("max_halvings", _int),
    "solver.fd_step": ("fd_step", _float),
    "solver.det_min": ("det_min", _float),
}
_LINE = re.compile(r"^\s*([A-Za-z_][\w.+\-]*)\s*=\s*(.*?)\s*$")


def parse_config_text(text):
    """Parse configuration text into a validated RunConfig.

    Raises ParseError for malformed lines, ConfigInvalid listing every
    violated requirement otherwise.
    """
    values, material, traction, dirichlet = {}, {}, {}, {}
    seen = {}
    problems = []
    material_names = {f.name for f in fields(MaterialParams)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _LINE.match(line)
        if not m:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, val = m.group(1), m.group(2)
        if not val:
            raise ParseError(f"missing value for {key!r}", lineno)
        if key in seen:
            raise ParseError(f"duplicate key {key!r} (first on line {seen[key]})", lineno)
        seen[key] = lineno
        try:
            if key in _SCALARS:
                name, conv = _SCALARS[key]
                values[name] = conv(val)
            elif key.startswith("material."):
                name = key[len("material."):]
                if name not in material_names:
                    problems.append(f"line {lineno}: unknown material parameter {name!r}")
                    continue
                v = _float(val)
                # integral exponents stay ints; others are left for the validator to reject
                material[name] = int(v) if name in _MATERIAL_INT and v == int(v) else v
            elif key.startswith("loads.traction."):
                traction[key[len("loads.traction."):]] = _ramp(val)
            elif key.startswith("loads.dirichlet."):
                dirichlet[key[len("loads.dirichlet."):]] = _ramp(val)
            else:
                problems.append(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            raise ParseError(f"{key}: {exc}", lineno) from exc

    values["material"] = MaterialParams(**material)
    values["traction"] = tuple(sorted(traction.items()))
    values["dirichlet"] = tuple(sorted(dirichlet.items()))
    cfg = RunConfig(**values)
    problems += config_violations(cfg)
    if problems:
        raise ConfigInvalid(problems)
    return cfg


def parse_config(path):
    with open(path) as fh:
        return parse_config_text(fh.read())


def config_violations(cfg):
    """All violated requirements of a RunConfig (empty when admissible)."""
    out = []
    d = cfg.dim
    if d not in (2, 3):
        out.append(f"dim must be 2 or 3, got {d}")
    if not (len(cfg.lengths) == len(cfg.cells) == len(cfg.periodic) == d):
        out.append(f"grid.lengths/cells/periodic need {d} entries each")
    else:
        try:
            Grid(cfg.lengths, cfg.cells, cfg.periodic)
        except ValueError as exc:
            out.append(f"grid: {exc}")
    if cfg.mode not in MODES:
        out.append(f"time.mode must be one of {MODES}, got {cfg.mode!r}")
    out += validate_params(cfg.material, d, cfg.mode if cfg.mode in MODES else None)
    if not cfg.T > 0:
        out.append("time.T must be > 0")
    if not cfg.dt0 > 0:
        out.append("time.dt0 must be > 0")
    if not cfg.dt_max >= cfg.dt0:
        out.append("time.dt_max must be >= time.dt0")
    if cfg.dump_every < 0:
        out.append("output.dump_every must be >= 0")
    if not cfg.tol > 0:
        out.append("solver.tol must be > 0")
    if cfg.max_iter < 1 or cfg.max_halvings < 0:
        out.append("solver.max_iter must be >= 1 and solver.max_halvings >= 0")
    if not cfg.fd_step > 0 or not cfg.det_min > 0:
        out.append("solver.fd_step and solver.det_min must be > 0")
    if cfg.nquad < 2:
        out.append("grid.nquad must be >= 2")
    if cfg.body_force is not None and cfg.body_force.size != d:
        out.append(f"loads.body_force needs {d} components")
    for kind, entries in (("traction", cfg.traction), ("dirichlet", cfg.dirichlet)):
        for side, ramp in entries:
            try:
                axis, _ = _parse_side(side, d)
            except ValueError as exc:
                out.append(f"loads.{kind}.{side}: {exc}")
                continue
            if len(cfg.periodic) == d and cfg.periodic[axis]:
                out.append(f"loads.{kind}.{side}: side lies in a periodic direction")
            if ramp.size != d:
                out.append(f"loads.{kind}.{side} needs {d} components")
    overlap = {s for s, _ in cfg.traction} & {s for s, _ in cfg.dirichlet}
    for side in sorted(overlap):
        out.append(f"side {side} has both traction and Dirichlet data")
    return out


# -- writing -------------------------------------------------------------------

def _num(v):
    return f"{v:.17g}" if isinstance(v, float) else str(v)


def _vec(vals):
    return " ".join(_num(v) for v in vals)


def _ramp_text(r):
    if len(r.knots) == 1 and r.knots[0][0] == 0.0:
        return _vec(r.knots[0][1])
    return ", ".join(f"{_num(t)}:{_vec(v)}" for t, v in r.knots)


def _selector_text(s):
    return s.name if s.amplitude == 0.0 else f"{s.name}:{_num(float(s.amplitude))}"


def format_config(cfg):
    """Text that parses back to an identical RunConfig (17 significant digits)."""
    lines = [f"dim = {cfg.dim}",
             f"grid.lengths = {_vec(cfg.lengths)}",
             f"grid.cells = {_vec(cfg.cells)}",
             "grid.periodic = " + " ".join("true" if p else "false" for p in cfg.periodic),
             f"grid.nquad = {cfg.nquad}"]
    for f in fields(MaterialParams):
        lines.append(f"material.{f.name} = {_num(getattr(cfg.material, f.name))}")
    lines += [f"initial.y = {_selector_text(cfg.initial_y)}",
              f"initial.v = {_selector_text(cfg.initial_v)}",
              f"initial.P = {_selector_text(cfg.initial_P)}"]
    if cfg.restart:
        lines.append(f"initial.restart = {cfg.restart}")
    if cfg.body_force is not None:
        lines.append(f"loads.body_force = {_ramp_text(cfg.body_force)}")
    for side, r in cfg.traction:
        lines.append(f"loads.traction.{side} = {_ramp_text(r)}")
    for side, r in cfg.dirichlet:
        lines.append(f"loads.dirichlet.{side} = {_ramp_text(r)}")
    lines += [f"time.T = {_num(cfg.T)}", f"time.dt0 = {_num(cfg.dt0)}",
              f"time.dt_max = {_num(cfg.dt_max)}", f"time.mode = {cfg.mode}",
              f"output.dump_every = {cfg.dump_every}",
              f"solver.tol = {_num(cfg.tol)}", f"solver.max_iter = {cfg.max_iter}",
              f"solver.max_halvings = {cfg.max_halvings}", f"solver.fd_step = {_num(cfg.fd_step)}",
              f"solver.det_min = {_num(cfg.det_min)}"]
    return "\n".join(lines) + "\n"


def write_config(cfg, path):
    with open(path, "w") as fh:
        fh.write(format_config(cfg))
