"""Run configuration: flat ``key = value`` sections read with configparser."""

import configparser
from dataclasses import dataclass, field
import os
from pathlib import Path

from .expr import ExpressionError, compile_expression

OUTPUT_ENV = "COMPATFE_OUTPUT_DIR"

MODELS = ("euler2d", "swe-linear", "swe-nonlinear")
INITIAL = ("rest", "geostrophic-jet", "gaussian-vortex", "custom-expression")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    nx: int = 16
    ny: int = 16
    Lx: float = 1.0
    Ly: float = 1.0
    model: str = "swe-nonlinear"
    scheme: str = "poisson"
    stabilization: str = "none"
    tau: float | None = None
    k_max: int = 4
    upwind: bool = True
    velocity_form: str = "pv-flux"
    f: str = "0"  # number or expression
    g: float = 10.0
    H: float = 1.0
    b: str = "0"
    dt: float = 0.01
    steps: int = 10
    initial: str = "rest"
    amplitude: float = 0.1
    expressions: dict = field(default_factory=dict)  # u, v, D, eta, omega
    output_dir: str = "output"
    dump_interval: int = 0
    dump_format: str = "text"
    rtol: float = 1e-13
    atol: float = 1e-300
    max_iter: int = 50
    dispersion: dict = field(default_factory=dict)

    def output_path(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output_dir)

    def f_is_constant(self) -> bool:
        try:
            float(self.f)
            return True
        except ValueError:
            return False


def _get(sec, key, conv, default):
    if sec is None or key not in sec:
        return default
    raw = sec[key].strip()
    try:
        return conv(raw)
    except ValueError as e:
        raise ConfigError(f"[{sec.name}] {key} = {raw!r}: {e}") from None


def _bool(s):
    v = s.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean")


def _check_expr(text, what):
    try:
        compile_expression(text)
    except ExpressionError as e:
        raise ConfigError(f"{what}: {e}") from None


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    s = {name: cp[name] for name in cp.sections()}
    c = RunConfig()
    mesh = s.get("mesh")
    c.nx = _get(mesh, "nx", int, c.nx)
    c.ny = _get(mesh, "ny", int, c.ny)
    c.Lx = _get(mesh, "Lx", float, c.Lx)
    c.Ly = _get(mesh, "Ly", float, c.Ly)
    model = s.get("model")
    c.model = _get(model, "name", str, c.model)
    c.scheme = _get(model, "scheme", str, "midpoint" if c.model != "swe-nonlinear" else c.scheme)
    c.stabilization = _get(model, "stabilization", str, c.stabilization).lower()
    c.tau = _get(model, "tau", float, c.tau)
    c.k_max = _get(model, "k_max", int, c.k_max)
    c.upwind = _get(model, "upwind", _bool, c.upwind)
    c.velocity_form = _get(model, "velocity_form", str, c.velocity_form)
    phys = s.get("physics")
    c.f = _get(phys, "f", str, c.f)
    c.g = _get(phys, "g", float, c.g)
    c.H = _get(phys, "H", float, c.H)
    c.b = _get(phys, "b", str, c.b)
    time = s.get("time")
    c.dt = _get(time, "dt", float, c.dt)
    c.steps = _get(time, "steps", int, c.steps)
    ini = s.get("initial")
    c.initial = _get(ini, "type", str, c.initial)
    c.amplitude = _get(ini, "amplitude", float, c.amplitude)
    if ini is not None:
        c.expressions = {k: ini[k].strip() for k in ("u", "v", "D", "eta", "omega") if k in ini}
    out = s.get("output")
    c.output_dir = _get(out, "directory", str, c.output_dir)
    c.dump_interval = _get(out, "dump_interval", int, c.dump_interval)
    c.dump_format = _get(out, "dump_format", str, c.dump_format)
    sol = s.get("solver")
    c.rtol = _get(sol, "rtol", float, c.rtol)
    c.atol = _get(sol, "atol", float, c.atol)
    c.max_iter = _get(sol, "max_iter", int, c.max_iter)
    if "dispersion" in s:
        c.dispersion = dict(s["dispersion"])
    validate(c)
    return c


def validate(c: RunConfig):
    if c.model not in MODELS:
        raise ConfigError(f"unknown model {c.model!r}; expected one of {', '.join(MODELS)}")
    if c.initial not in INITIAL:
        raise ConfigError(f"unknown initial condition {c.initial!r}")
    if c.nx < 3 or c.ny < 3:
        raise ConfigError("mesh needs at least 3 cells per direction")
    if not (c.Lx > 0 and c.Ly > 0):
        raise ConfigError("domain extents must be positive")
    if c.steps < 0:
        raise ConfigError("step count must be >= 0")
    if not c.dt > 0:
        raise ConfigError("dt must be positive")
    if c.dump_interval < 0:
        raise ConfigError("dump_interval must be >= 0")
    if c.dump_format not in ("text", "vtk"):
        raise ConfigError(f"unknown dump format {c.dump_format!r}")
    if c.model != "euler2d" and not (c.g > 0 and c.H > 0):
        raise ConfigError("g and H must be positive")
    if c.model == "swe-nonlinear":
        if c.scheme not in ("midpoint", "poisson", "semi-implicit"):
            raise ConfigError(f"unknown scheme {c.scheme!r}")
        if c.stabilization not in ("none", "apvm", "supg-q"):
            raise ConfigError(f"unknown stabilization {c.stabilization!r}")
        if c.velocity_form not in ("pv-flux", "vector-invariant"):
            raise ConfigError(f"unknown velocity form {c.velocity_form!r}")
        if c.k_max < 1:
            raise ConfigError("k_max must be >= 1")
    elif c.scheme != "midpoint":
        raise ConfigError(f"model {c.model} only supports the midpoint scheme")
    if c.model == "swe-linear" and not c.f_is_constant():
        raise ConfigError("the linear model needs a constant f")
    if c.tau is not None and c.tau < 0:
        raise ConfigError("tau must be non-negative")
    _check_expr(c.f, "f")
    _check_expr(c.b, "b")
    for k, v in c.expressions.items():
        _check_expr(v, f"initial {k}")
    if c.initial == "custom-expression":
        need = {"euler2d": ("omega",), "swe-linear": ("u", "v", "eta"), "swe-nonlinear": ("u", "v", "D")}[c.model]
        missing = [k for k in need if k not in c.expressions]
        if missing:
            raise ConfigError(f"custom-expression initial condition needs {', '.join(missing)}")


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e.strerror}") from None
    return parse_config(text)
