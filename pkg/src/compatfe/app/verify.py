"""Built-in invariant checks run by ``compatfe verify``."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..assembly import Operators
from ..euler2d import Euler2D
from ..fespace import interpolate, make_complex
from ..hodge import HodgeError, harmonic_basis, harmonic_dimension
from ..mesh import build
from ..swe_linear import LinearParams, LinearSWE
from ..swe_nonlinear import NonlinearSWE, SweParams

LADDER = (8, 16, 32)
EPS = np.finfo(float).eps


@dataclass
class CheckResult:
    mesh: int
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)


def _inject(ops: Operators, fault: str | None):
    if fault is None:
        return
    if fault != "div":
        raise ValueError(f"unknown fault {fault!r}")
    Div = ops.Div.tolil(copy=True)
    Div[0, 0] = Div[0, 0] * (1 + 1e-3)
    ops._cache["Div"] = sp.csr_matrix(Div)
    ops._cache.pop("B", None)


def _smooth_fields(mesh, spaces):
    k = 2 * np.pi
    psi = interpolate(spaces.V0, lambda x, y: 0.05 * np.sin(k * x) * np.cos(2 * k * y)).coeffs
    extra = interpolate(spaces.V1, lambda x, y: (0.02 * np.sin(k * y), 0.02 * np.cos(k * x))).coeffs
    D = interpolate(spaces.V2, lambda x, y: 1 + 0.1 * np.sin(k * x) * np.sin(k * y)).coeffs
    return psi, extra, D


def check_mesh(n: int, fault: str | None = None) -> list[CheckResult]:
    mesh = build(n, n)
    spaces = make_complex(mesh)
    ops = Operators(spaces)
    _inject(ops, fault)
    out = []
    DG = ops.Div @ ops.G
    scale = abs(ops.Div).max() * abs(ops.G).max()
    out.append(CheckResult(n, "complex identity |div grad_perp|", float(abs(DG).max()),
                           8 * EPS * scale))
    out.append(CheckResult(n, "harmonic dimension - 2", float(abs(harmonic_dimension(ops) - 2)), 0.0))
    try:
        harmonic_basis(ops)
        hb = 0.0
    except HodgeError:
        hb = np.inf
    out.append(CheckResult(n, "harmonic basis = constants", hb, 0.0))
    W = ops.coriolis(1.0)
    out.append(CheckResult(n, "Coriolis antisymmetry", float(abs(W + W.T).max()),
                           8 * EPS * abs(W).max()))

    psi, extra, D = _smooth_fields(mesh, spaces)
    lin = LinearSWE(mesh, LinearParams(f=2.0, g=10.0, H=1.0, dt=0.01))
    lin.ops = ops
    st = lin.geostrophic_state(psi)
    t = lin.tendency(st)
    rel = np.linalg.norm(t.vector()) / max(np.linalg.norm(ops.G @ psi), 1e-300)
    out.append(CheckResult(n, "geostrophic tendency (rel)", float(rel), 1e-12))

    eu = Euler2D(mesh)
    eu.ops = ops
    est = eu.state(interpolate(spaces.V0, lambda x, y: np.sin(2 * np.pi * x) * np.sin(4 * np.pi * y)
                                    + 0.5 * np.cos(2 * np.pi * (x + y))))
    tend = eu.semidiscrete_tendency(est).coeffs
    Mt = ops.M0 @ tend
    nrm = np.linalg.norm(Mt)
    out.append(CheckResult(n, "Euler energy orthogonality", abs(est.psi.coeffs @ Mt) / (nrm * np.linalg.norm(est.psi.coeffs)), 1e-10))
    out.append(CheckResult(n, "Euler enstrophy orthogonality", abs(est.omega.coeffs @ Mt) / (nrm * np.linalg.norm(est.omega.coeffs)), 1e-10))

    for stab in ("none", "apvm"):
        swe = NonlinearSWE(mesh, SweParams(g=10.0, dt=0.01, f=5.0, stabilization=stab))
        swe.ops = ops
        swe._f_rhs = ops.M0 @ swe.f
        sst = swe.state(ops.G @ psi + extra, D)
        td = swe.semidiscrete_tendency(sst)
        m = swe.diagnose_m(sst.u, sst.D)
        Mu, MD = ops.M1 @ td.u.coeffs, ops.M2 @ td.D.coeffs
        pi = swe._bernoulli(sst.u.coeffs, sst.D.coeffs)
        scale_e = np.linalg.norm(m) * np.linalg.norm(Mu) + np.linalg.norm(pi) * np.linalg.norm(MD)
        out.append(CheckResult(n, f"SWE energy budget ({stab})", abs(swe.energy_tendency(sst, td)) / scale_e, 1e-10))
        if stab == "none":
            q = swe.diagnose_q(sst.u, sst.D)
            q2 = (spaces.V0.at_quadrature(q) ** 2) @ spaces.V0.qp_weights
            sc = 2 * np.linalg.norm(ops.G @ q) * np.linalg.norm(Mu) + np.linalg.norm(q2) * np.linalg.norm(td.D.coeffs)
            out.append(CheckResult(n, "SWE enstrophy budget", abs(swe.enstrophy_tendency(sst, td)) / sc, 1e-10))
            mass_rate = abs(np.sum(td.D.coeffs)) / np.abs(td.D.coeffs).sum()
            out.append(CheckResult(n, "SWE mass budget", float(mass_rate), 1e-12))
        else:
            out.append(CheckResult(n, "APVM dissipation sign", max(swe.apvm_dissipation(sst), 0.0), 0.0))
    return out


def run_checks(ladder=LADDER, fault: str | None = None) -> list[CheckResult]:
    res = []
    for n in ladder:
        res.extend(check_mesh(n, fault))
    return res


def format_table(results) -> str:
    w = max(len(r.name) for r in results)
    lines = [f"{'mesh':>6}  {'check':<{w}}  {'value':>10}  {'tol':>10}  result"]
    for r in results:
        lines.append(f"{r.mesh:>3}x{r.mesh:<2}  {r.name:<{w}}  {r.value:10.3e}  {r.tol:10.3e}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
