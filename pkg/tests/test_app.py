import subprocess
import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compatfe.app.cli import EXIT_CONFIG, EXIT_OK, EXIT_VERIFY, main
from compatfe.app.config import OUTPUT_ENV, ConfigError, parse_config
from compatfe.app.expr import ExpressionError, compile_expression, evaluate
from compatfe.app.io import CSV_HEADER, dump_fields, read_diagnostics, read_dump, write_vtk
from compatfe.app.verify import run_checks
from compatfe.fespace import Field, make_complex
from compatfe.mesh import build


def _write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


# -- expression language ----------------------------------------------------------


@pytest.mark.parametrize("text, expect", [
    ("1 + 2 * 3", 7.0),
    ("(1 + 2) * 3", 9.0),
    ("2 ^ 3 ^ 2", 512.0),
    ("-2 ^ 2", -4.0),
    ("8 / 4 / 2", 1.0),
    ("2 * pi", 2 * np.pi),
    ("exp(0) + cos(0) - sin(0)", 2.0),
    ("1e-3 * 1000", 1.0),
    ("x * 10 + y", 23.0),
])
def test_expression_values(text, expect):
    assert evaluate(text, 2.0, 3.0) == pytest.approx(expect, rel=1e-15)


@pytest.mark.parametrize("text", ["", "1 +", "sin 2", "tan(1)", "z", "(1", "1 2", "3 $ 4", "cos()"])
def test_expression_errors(text):
    with pytest.raises(ExpressionError):
        compile_expression(text)


def test_expression_vectorised():
    f = compile_expression("sin(2*pi*x) * cos(2*pi*y)")
    x = np.linspace(0, 1, 7)
    y = np.linspace(0, 1, 7)[:, None]
    assert np.allclose(f(x, y), np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y))
    assert compile_expression("3")(x, y).shape == (7, 7)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.5, 3))
def test_expression_matches_python(a, b, c):
    text = f"({a!r}) * x - ({b!r}) / ({c!r}) + ({c!r}) ^ 2 * y"
    x, y = 0.3, -1.7
    assert evaluate(text, x, y) == pytest.approx(a * x - b / c + c**2 * y, rel=1e-12, abs=1e-12)


# -- configuration ------------------------------------------------------------------


def test_parse_config_defaults_and_values():
    c = parse_config("""
[mesh]
nx = 8
ny = 6
Lx = 2
[model]
name = swe-nonlinear
scheme = semi-implicit
stabilization = APVM
k_max = 3
upwind = no
[physics]
f = 10 + sin(2*pi*y)
[time]
dt = 0.05
steps = 4
""")
    assert (c.nx, c.ny, c.Lx, c.Ly) == (8, 6, 2.0, 1.0)
    assert c.scheme == "semi-implicit" and c.stabilization == "apvm"
    assert c.k_max == 3 and c.upwind is False
    assert not c.f_is_constant()


@pytest.mark.parametrize("text", [
    "[mesh]\nnx = 2\n",
    "[mesh]\nnx = eight\n",
    "[model]\nname = quasi-geostrophic\n",
    "[model]\nname = swe-nonlinear\nscheme = rk4\n",
    "[model]\nname = swe-linear\n[physics]\nf = 1 + y\n",
    "[physics]\nf = 1 +* 2\n",
    "[time]\ndt = -1\n",
    "[initial]\ntype = custom-expression\nu = 0\n",
    "not a section\n",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_config_exit_code(tmp_path, capsys):
    assert main(["run", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG
    assert "cannot read config" in capsys.readouterr().err


def test_missing_config_subprocess(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "compatfe", "run", str(tmp_path / "nope.cfg")],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_CONFIG
    assert proc.stderr.strip() and not proc.stdout.strip()


# -- run ------------------------------------------------------------------------------

REST = """
[mesh]
nx = 8
ny = 8
[model]
name = swe-nonlinear
scheme = {scheme}
[physics]
f = 10
g = 10
H = 1
[time]
dt = 0.01
steps = 10
[initial]
type = rest
[output]
directory = {out}
"""


@pytest.mark.parametrize("scheme", ["poisson", "midpoint", "semi-implicit"])
def test_rest_run_constant_columns(tmp_path, scheme):
    cfg = _write(tmp_path, REST.format(scheme=scheme, out=tmp_path / "out"))
    assert main(["run", str(cfg)]) == EXIT_OK
    d = read_diagnostics(tmp_path / "out" / "diagnostics.csv")
    assert list(d) == CSV_HEADER
    assert np.array_equal(d["step"], np.arange(11))
    for col in ("energy", "enstrophy", "mass", "total_vorticity", "div_l2"):
        assert np.ptp(d[col]) <= 1e-12 * max(1.0, abs(d[col][0])), col


def test_csv_header_exact(tmp_path):
    cfg = _write(tmp_path, REST.format(scheme="poisson", out=tmp_path / "o"))
    main(["run", str(cfg)])
    first = (tmp_path / "o" / "diagnostics.csv").read_text().splitlines()[0]
    assert first == "step,time,energy,enstrophy,mass,total_vorticity,div_l2,newton_iters,residual_norm"


def test_linear_jet_energy_constant(tmp_path):
    cfg = _write(tmp_path, f"""
[mesh]
nx = 16
ny = 16
[model]
name = swe-linear
[physics]
f = 10
g = 10
H = 1
[time]
dt = 0.01
steps = 100
[initial]
type = geostrophic-jet
amplitude = 0.1
[output]
directory = {tmp_path / "lin"}
""")
    assert main(["run", str(cfg)]) == EXIT_OK
    e = read_diagnostics(tmp_path / "lin" / "diagnostics.csv")["energy"]
    assert e.size == 101
    assert np.abs(e - e[0]).max() <= 1e-11 * e[0]


def test_euler_custom_expression_run(tmp_path):
    cfg = _write(tmp_path, f"""
[mesh]
nx = 12
ny = 12
[model]
name = euler2d
[time]
dt = 0.01
steps = 5
[initial]
type = custom-expression
omega = sin(2*pi*x)*sin(2*pi*y) + 0.5*cos(2*pi*(x+y))
[output]
directory = {tmp_path / "eu"}
dump_interval = 5
""")
    assert main(["run", str(cfg)]) == EXIT_OK
    d = read_diagnostics(tmp_path / "eu" / "diagnostics.csv")
    assert np.abs(d["energy"] - d["energy"][0]).max() <= 1e-10 * d["energy"][0]
    assert (tmp_path / "eu" / "omega_000005.txt").exists()


def test_output_env_override(tmp_path, monkeypatch):
    cfg = _write(tmp_path, REST.format(scheme="poisson", out=tmp_path / "ignored"))
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert main(["run", str(cfg)]) == EXIT_OK
    assert (tmp_path / "env" / "diagnostics.csv").exists()
    assert not (tmp_path / "ignored").exists()


def test_run_is_deterministic(tmp_path):
    text = """
[mesh]
nx = 8
ny = 8
[model]
name = swe-nonlinear
scheme = semi-implicit
[physics]
f = 10 + sin(2*pi*y)
b = 0.05*exp(-((x-0.5)^2+(y-0.5)^2)/0.02)
[time]
dt = 0.02
steps = 5
[initial]
type = gaussian-vortex
amplitude = 0.05
[output]
directory = {out}
"""
    outs = []
    for k in range(2):
        cfg = _write(tmp_path, text.format(out=tmp_path / f"r{k}"), f"r{k}.cfg")
        assert main(["run", str(cfg)]) == EXIT_OK
        outs.append((tmp_path / f"r{k}" / "diagnostics.csv").read_bytes())
    assert outs[0] == outs[1]


# -- verify ---------------------------------------------------------------------------


def test_verify_passes_and_reports_harmonic_dimension():
    res = run_checks((8, 16))
    assert all(r.passed for r in res)
    dims = [r for r in res if r.name.startswith("harmonic dimension")]
    assert len(dims) == 2 and all(r.value == 0 for r in dims)


def test_verify_fault_injection(capsys):
    assert main(["verify", "--ladder", "8", "--inject-fault", "div"]) == EXIT_VERIFY
    out = capsys.readouterr().out
    line = next(l for l in out.splitlines() if "complex identity" in l)
    assert line.rstrip().endswith("FAIL")


def test_verify_cli_default_ladder(capsys):
    assert main(["verify"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "32x32" in out and "FAIL" not in out


# -- dispersion -----------------------------------------------------------------------


def _disp_cfg(tmp_path, f, nkx, kx_max=None, nky=1, ky_max=0.0):
    kx_max = np.pi * 16 if kx_max is None else kx_max
    return _write(tmp_path, f"""
[mesh]
nx = 16
ny = 16
[physics]
f = {f}
g = 10
H = 1
[dispersion]
kx_min = 0
kx_max = {kx_max!r}
nkx = {nkx}
ky_min = 0
ky_max = {ky_max!r}
nky = {nky}
""", "disp.cfg")


def _read_csv(text):
    lines = text.strip().splitlines()
    return lines[0], np.array([[float(v) for v in l.split(",")] for l in lines[1:]])


def test_dispersion_k0_row(tmp_path, capsys):
    cfg = _disp_cfg(tmp_path, 10, 1)
    assert main(["dispersion", str(cfg), "--out", "-"]) == EXIT_OK
    head, rows = _read_csv(capsys.readouterr().out)
    assert head == "kx,ky,omega1,omega2,omega3"
    assert rows.shape == (1, 5)
    assert np.allclose(rows[0, 2:], [-10, 0, 10], atol=1e-10)


def test_dispersion_grid_and_monotone_gravity_branch(tmp_path):
    cfg = _disp_cfg(tmp_path, 0, 17, nky=3, ky_max=np.pi * 8)
    out = tmp_path / "d.csv"
    assert main(["dispersion", str(cfg), "--out", str(out)]) == EXIT_OK
    _, rows = _read_csv(out.read_text())
    assert rows.shape == (17 * 3, 5)
    sweep = rows[rows[:, 1] == 0]
    assert np.all(np.diff(sweep[:, 4]) > 0)
    assert sweep[-1, 0] == pytest.approx(np.pi * 16)


def test_dispersion_rejects_bad_range(tmp_path):
    cfg = _disp_cfg(tmp_path, 0, 4, kx_max=np.pi * 16 * 1.5)
    assert main(["dispersion", str(cfg), "--out", "-"]) == EXIT_CONFIG


# -- dumps ----------------------------------------------------------------------------


def test_rest_depth_dump(tmp_path):
    cfg = _write(tmp_path, REST.format(scheme="poisson", out=tmp_path / "dump"))
    assert main(["dump", str(cfg), "--initial"]) == EXIT_OK
    fam, coeffs, nx, ny = read_dump(tmp_path / "dump" / "D_000000.txt")
    assert fam.value == "V2" and (nx, ny) == (8, 8)
    assert coeffs.size == 64 and np.all(coeffs == coeffs[0])


def test_dump_round_trip_bit_exact(tmp_path):
    V = make_complex(build(5, 4, 1.0, 0.7))
    rng = np.random.default_rng(0)
    for space in (V.V0, V.V1, V.V2):
        fld = Field(space, rng.standard_normal(space.dim) * 10.0 ** rng.integers(-300, 300, space.dim))
        p = dump_fields(fld, tmp_path / f"{space.family.value}.txt")
        fam, coeffs, nx, ny = read_dump(p)
        assert fam is space.family and (nx, ny) == (5, 4)
        assert np.array_equal(coeffs, fld.coeffs)


def test_vtk_structure(tmp_path):
    V = make_complex(build(4, 3, 1.0, 1.0))
    flds = {"D": Field(V.V2, np.arange(12.0)), "u": Field(V.V1, np.ones(24)),
            "q": Field(V.V0, np.ones(12))}
    lines = write_vtk(flds, tmp_path / "f.vtk").read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[2] == "ASCII" and lines[3] == "DATASET UNSTRUCTURED_GRID"
    n_pts = int(lines[4].split()[1])
    assert n_pts == 5 * 4
    k = 5 + n_pts
    assert lines[k] == "CELLS 12 60"
    cells = [list(map(int, l.split())) for l in lines[k + 1:k + 13]]
    assert all(c[0] == 4 and max(c[1:]) < n_pts for c in cells)
    assert lines[k + 13] == "CELL_TYPES 12"
    assert all(l == "9" for l in lines[k + 14:k + 26])
    assert lines[k + 26] == "CELL_DATA 12"
    assert "SCALARS D double 1" in lines and "VECTORS u double" in lines
    i = lines.index("SCALARS D double 1")
    assert [float(v) for v in lines[i + 2:i + 14]] == list(np.arange(12.0))


def test_inline_comments_allowed():
    c = parse_config("[mesh]\nnx = 12   # cells\n[physics]\nf = 2*pi ; rad/s\n")
    assert c.nx == 12 and c.f == "2*pi"


def test_newton_iteration_cap(tmp_path):
    cfg = _write(tmp_path, f"""
[mesh]
nx = 8
ny = 8
[model]
name = swe-nonlinear
[physics]
f = 10
[time]
dt = 0.01
steps = 2
[initial]
type = gaussian-vortex
amplitude = 0.05
[solver]
max_iter = 1
[output]
directory = {tmp_path / "cap"}
""")
    assert main(["run", str(cfg)]) == 3
