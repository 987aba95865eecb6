"""Experiment drivers: build a model from a RunConfig, step it, report diagnostics."""

import numpy as np

from ..assembly import project_rhs
from ..euler2d import Euler2D
from ..fespace import interpolate, make_complex
from ..hodge import weak_curl
from ..linalg import SolverConfig, cg
from ..mesh import build
from ..swe_linear import LinearParams, LinearSWE
from ..swe_nonlinear import NonlinearSWE, SweParams, balanced_jet
from .config import RunConfig
from .expr import compile_expression


def _gaussian(cfg: RunConfig, width: float = 0.1):
    x0, y0 = 0.5 * cfg.Lx, 0.5 * cfg.Ly
    s2 = (width * min(cfg.Lx, cfg.Ly)) ** 2
    return lambda x, y: np.exp(-((x - x0) ** 2 + (y - y0) ** 2) / s2)


def _jet_psi(cfg: RunConfig, U: float):
    """Zonal jet ``u = U cos(2 pi y / Ly)`` with a weak wave-1 meander."""
    k = 2 * np.pi / cfg.Ly
    kx = 2 * np.pi / cfg.Lx
    return lambda x, y: -(U / k) * np.sin(k * y) * (1 + 0.1 * np.cos(kx * x))


class Driver:
    """Common interface; subclasses own one model instance."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.mesh = build(cfg.nx, cfg.ny, cfg.Lx, cfg.Ly)
        self.newton = SolverConfig(rtol=cfg.rtol, atol=cfg.atol, max_iter=cfg.max_iter)

    def initial_state(self):
        raise NotImplementedError

    def step(self, st):
        raise NotImplementedError

    def diagnostics(self, st) -> dict:
        raise NotImplementedError

    def fields(self, st) -> dict:
        raise NotImplementedError

    def solver_stats(self):
        return 0, 0.0


class EulerDriver(Driver):
    def __init__(self, cfg):
        super().__init__(cfg)
        self.model = Euler2D(self.mesh, tau=cfg.tau or 0.0, newton_config=self.newton)
        self._report = None

    def initial_state(self):
        c = self.cfg
        V0 = self.model.spaces.V0
        if c.initial == "rest":
            return self.model.state(np.zeros(V0.dim))
        if c.initial == "custom-expression":
            return self.model.state(interpolate(V0, compile_expression(c.expressions["omega"])))
        if c.initial == "gaussian-vortex":
            g = _gaussian(c)
            om = interpolate(V0, lambda x, y: c.amplitude * g(x, y)).coeffs
        else:
            k = 2 * np.pi / c.Ly
            kx = 2 * np.pi / c.Lx
            om = interpolate(V0, lambda x, y: c.amplitude * k * np.sin(k * y)
                             + 0.1 * c.amplitude * k * np.cos(kx * x)).coeffs
        # the elliptic problem needs zero-mean vorticity on the torus
        w = np.asarray(self.model.ops.M0.sum(axis=0)).ravel()
        om = om - (w @ om) / w.sum()
        return self.model.state(om)

    def step(self, st):
        new = self.model.step_midpoint(st, self.cfg.dt)
        self._report = self.model.last_report
        return new

    def solver_stats(self):
        r = self._report
        return (r.iterations, float(r.residual_norm)) if r else (0, 0.0)

    def diagnostics(self, st):
        m = self.model
        return {
            "energy": m.energy(st),
            "enstrophy": m.enstrophy(st),
            "mass": self.mesh.Lx * self.mesh.Ly,
            "total_vorticity": m.total_vorticity(st),
            "div_l2": float(np.linalg.norm(m.ops.Div @ (m.ops.G @ st.psi.coeffs))),
        }

    def fields(self, st):
        return {"omega": st.omega, "psi": st.psi}


class LinearDriver(Driver):
    def __init__(self, cfg):
        super().__init__(cfg)
        self.params = LinearParams(float(cfg.f), cfg.g, cfg.H, cfg.dt)
        self.model = LinearSWE(self.mesh, self.params)
        self._res = 0.0

    def initial_state(self):
        c = self.cfg
        m = self.model
        V0, V1, V2 = m.spaces.V0, m.spaces.V1, m.spaces.V2
        if c.initial == "rest":
            return m.rest()
        if c.initial == "custom-expression":
            fu, fv = compile_expression(c.expressions["u"]), compile_expression(c.expressions["v"])
            u = interpolate(V1, lambda x, y: (fu(x, y), fv(x, y)))
            return m.state(u, interpolate(V2, compile_expression(c.expressions["eta"])))
        if c.initial == "gaussian-vortex":
            g = _gaussian(c)
            psi = interpolate(V0, lambda x, y: c.amplitude * g(x, y))
        else:
            psi = interpolate(V0, _jet_psi(c, c.amplitude))
        if self.params.f == 0:
            return m.state(m.ops.G @ psi.coeffs, np.zeros(V2.dim))
        return m.geostrophic_state(psi)

    def step(self, st):
        new = self.model.step_midpoint(st)
        lhs, rhs = self.model._blocks()
        z0, z1 = st.vector(), new.vector()
        b = rhs @ z0
        self._res = float(np.linalg.norm(lhs @ z1 - b))
        return new

    def solver_stats(self):
        return 0, self._res

    def diagnostics(self, st):
        m = self.model
        ops = m.ops
        p = self.params
        u, eta = st.u.coeffs, st.eta.coeffs
        zeta = weak_curl(ops, u)
        # linear PV projected into V0: zeta - (f/H) P0(eta); its V0 projection is invariant
        eta0 = cg(ops.M0, project_rhs(m.spaces.V0, st.eta), SolverConfig(rtol=1e-14, atol=1e-300))
        qlin = zeta - (p.f / p.H) * eta0
        area = self.mesh.cell_area
        d = ops.Div @ u
        return {
            "energy": m.energy(st),
            "enstrophy": 0.5 * float(qlin @ (ops.M0 @ qlin)),
            "mass": float(area * eta.sum()),
            "total_vorticity": float(np.sum(ops.M0 @ zeta)),
            "div_l2": float(np.sqrt(area * d @ d)),
        }

    def fields(self, st):
        return {"u": st.u, "eta": st.eta}


class NonlinearDriver(Driver):
    def __init__(self, cfg):
        super().__init__(cfg)
        sp = make_complex(self.mesh)
        f = float(cfg.f) if cfg.f_is_constant() else interpolate(sp.V0, compile_expression(cfg.f)).coeffs
        b = interpolate(sp.V2, compile_expression(cfg.b)).coeffs
        self.params = SweParams(
            g=cfg.g, dt=cfg.dt, f=f, b=b, tau=cfg.tau, stabilization=cfg.stabilization,
            integrator=cfg.scheme, k_max=cfg.k_max, upwind=cfg.upwind, velocity_form=cfg.velocity_form,
        )
        self.model = NonlinearSWE(self.mesh, self.params, newton_config=self.newton)
        self._report = None

    def initial_state(self):
        c = self.cfg
        m = self.model
        V0, V1, V2 = m.spaces.V0, m.spaces.V1, m.spaces.V2
        if c.initial == "rest":
            # lake at rest over topography: D + b = H + mean(b)
            return m.state(np.zeros(V1.dim), c.H + np.mean(m.b) - m.b)
        if c.initial == "custom-expression":
            fu, fv = compile_expression(c.expressions["u"]), compile_expression(c.expressions["v"])
            u = interpolate(V1, lambda x, y: (fu(x, y), fv(x, y)))
            return m.state(u, interpolate(V2, compile_expression(c.expressions["D"])))
        if c.initial == "geostrophic-jet":
            return balanced_jet(m, H=c.H, U=c.amplitude)
        g = _gaussian(c)
        psi = interpolate(V0, lambda x, y: c.amplitude * g(x, y)).coeffs
        f0 = float(np.mean(m.f))
        D = c.H + (f0 / c.g) * V0.local(psi).mean(axis=1) - m.b + np.mean(m.b)
        return m.state(m.ops.G @ psi, D)

    def step(self, st):
        new = self.model.step(st)
        self._report = self.model.last_report
        return new

    def solver_stats(self):
        r = self._report
        if r is None:
            return 0, 0.0
        if self.params.integrator.value == "semi-implicit":
            return 0, float(r.residual_norm)
        return r.iterations, float(r.residual_norm)

    def diagnostics(self, st):
        m = self.model
        return {
            "energy": m.energy(st),
            "enstrophy": m.enstrophy(st),
            "mass": m.mass(st),
            "total_vorticity": m.total_vorticity(st),
            "div_l2": m.div_l2(st),
        }

    def fields(self, st):
        aux = self.model.aux(st)
        return {"u": st.u, "D": st.D, "q": aux.q}


def make_driver(cfg: RunConfig) -> Driver:
    return {"euler2d": EulerDriver, "swe-linear": LinearDriver, "swe-nonlinear": NonlinearDriver}[cfg.model](cfg)
