"""Command line front end: ``compatfe run|verify|dispersion|dump``."""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..linalg import SolverError
from ..swe_linear import NonRealFrequencyError, dispersion
from ..swe_nonlinear import DepthError
from .config import ConfigError, load_config
from .drivers import make_driver
from .io import DiagnosticsWriter, dump_fields, write_vtk
from .verify import LADDER, format_table, run_checks

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_INVARIANT = 4

log = logging.getLogger("compatfe")


def _dump(driver, st, outdir: Path, step: int, fmt: str):
    flds = driver.fields(st)
    if fmt == "vtk":
        write_vtk(flds, outdir / f"fields_{step:06d}.vtk")
        return
    for name, fld in flds.items():
        dump_fields(fld, outdir / f"{name}_{step:06d}.txt")


def run(cfg) -> Path:
    outdir = cfg.output_path()
    outdir.mkdir(parents=True, exist_ok=True)
    driver = make_driver(cfg)
    st = driver.initial_state()
    path = outdir / "diagnostics.csv"
    with DiagnosticsWriter(path) as w:
        w.write({"step": 0, "time": 0.0, **driver.diagnostics(st), "newton_iters": 0, "residual_norm": 0.0})
        if cfg.dump_interval:
            _dump(driver, st, outdir, 0, cfg.dump_format)
        for n in range(1, cfg.steps + 1):
            st = driver.step(st)
            its, res = driver.solver_stats()
            w.write({"step": n, "time": n * cfg.dt, **driver.diagnostics(st),
                     "newton_iters": its, "residual_norm": res})
            if cfg.dump_interval and n % cfg.dump_interval == 0:
                _dump(driver, st, outdir, n, cfg.dump_format)
    return path


def _krange(kcfg: dict, key: str, default_max: float, default_n: int):
    lo = float(kcfg.get(f"{key}_min", 0.0))
    hi = float(kcfg.get(f"{key}_max", default_max))
    n = int(kcfg.get(f"n{key}", default_n))
    if n < 1:
        raise ConfigError(f"n{key} must be >= 1")
    return np.linspace(lo, hi, n) if n > 1 else np.array([lo])


def dispersion_table(cfg):
    dx, dy = cfg.Lx / cfg.nx, cfg.Ly / cfg.ny
    kcfg = cfg.dispersion
    kxs = _krange(kcfg, "kx", np.pi / dx, 16)
    kys = _krange(kcfg, "ky", 0.0, 1)
    if np.abs(kxs).max() > np.pi / dx * (1 + 1e-12) or np.abs(kys).max() > np.pi / dy * (1 + 1e-12):
        raise ConfigError("k range leaves the first Brillouin zone")
    params = {"f": float(cfg.f), "g": cfg.g, "H": cfg.H}
    rows = []
    for ky in kys:
        for kx in kxs:
            rows.append((kx, ky, *dispersion(kx, ky, params, dx, dy)))
    return rows


def _cmd_run(args):
    cfg = load_config(args.config)
    path = run(cfg)
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_verify(args):
    results = run_checks(tuple(args.ladder), fault=args.inject_fault)
    print(format_table(results))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_VERIFY


def _cmd_dispersion(args):
    cfg = load_config(args.config)
    if not cfg.f_is_constant():
        raise ConfigError("dispersion analysis needs a constant f")
    rows = dispersion_table(cfg)
    lines = ["kx,ky,omega1,omega2,omega3"] + [",".join(repr(float(v)) for v in r) for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
        return EXIT_OK
    out = Path(args.out) if args.out else cfg.output_path() / "dispersion.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(f"wrote {out}")
    return EXIT_OK


def _cmd_dump(args):
    cfg = load_config(args.config)
    outdir = cfg.output_path()
    outdir.mkdir(parents=True, exist_ok=True)
    driver = make_driver(cfg)
    st = driver.initial_state()
    steps = 0 if args.initial else cfg.steps
    for _ in range(steps):
        st = driver.step(st)
    _dump(driver, st, outdir, steps, args.format or cfg.dump_format)
    print(f"wrote fields for step {steps} to {outdir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="compatfe", description="Compatible finite element models on a periodic quad mesh.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a configured experiment and write diagnostics.csv")
    r.add_argument("config")
    r.set_defaults(func=_cmd_run)
    v = sub.add_parser("verify", help="run the built-in invariant checks")
    v.add_argument("--ladder", type=int, nargs="+", default=list(LADDER))
    v.add_argument("--inject-fault", choices=["div"], default=None, help=argparse.SUPPRESS)
    v.set_defaults(func=_cmd_verify)
    d = sub.add_parser("dispersion", help="tabulate the discrete linear dispersion relation")
    d.add_argument("config")
    d.add_argument("--out", default=None, help="output CSV path, '-' for stdout")
    d.set_defaults(func=_cmd_dispersion)
    u = sub.add_parser("dump", help="write the fields of a run's final (or initial) state")
    u.add_argument("config")
    u.add_argument("--format", choices=["text", "vtk"], default=None)
    u.add_argument("--initial", action="store_true")
    u.set_defaults(func=_cmd_dump)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"compatfe: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DepthError as e:
        print(f"compatfe: invariant violation: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except (SolverError, NonRealFrequencyError) as e:
        print(f"compatfe: solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as e:
        print(f"compatfe: I/O error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
