"""Energy-enstrophy conserving vorticity-streamfunction scheme for 2D incompressible Euler.

Vorticity ``omega`` and streamfunction ``psi`` both live in V0 with
``<gamma, omega> = -<grad gamma, grad psi>`` and ``u = grad_perp psi``. The
semi-discrete equation, optionally with SUPG test functions
``phi + tau u.grad phi``, is

    <phi + tau u.grad phi, omega_t + u.grad omega> = 0.

With ``tau = 0`` the tendency is orthogonal to both ``psi`` and ``omega``, so
the implicit midpoint rule conserves the energy ``1/2 |grad psi|^2`` and the
enstrophy ``1/2 |omega|^2`` up to the Newton tolerance.
"""

from dataclasses import dataclass

import numpy as np

from .assembly import Operators, assemble_matrix, assemble_vector
from .fespace import Field, make_complex
from .hodge import solve_streamfunction
from .linalg import EPS, NewtonReport, SolverConfig, cg, gmres, newton


@dataclass
class EulerState:
    omega: Field
    psi: Field
    tau: float = 0.0


class Euler2D:
    def __init__(self, mesh, tau: float = 0.0, newton_config: SolverConfig | None = None):
        if tau < 0:
            raise ValueError("SUPG timescale must be non-negative")
        self.spaces = make_complex(mesh)
        self.ops = Operators(self.spaces)
        self.tau = float(tau)
        self.newton_config = newton_config or SolverConfig(rtol=1e-13, atol=1e-15, max_iter=50)
        self.last_report: NewtonReport | None = None
        V0 = self.spaces.V0
        self._phi = V0.qp_values  # (nq, nb)
        self._dphi = V0.qp_grads  # (nq, nb, 2)
        self._w = V0.qp_weights
        self._m0_diag = self.ops.M0.diagonal()

    # -- elliptic problem ----------------------------------------------------

    def elliptic_solve(self, omega) -> Field:
        """Zero-mean ``psi`` with ``-<grad gamma, grad psi> = <gamma, omega>``."""
        w = _coeffs(omega)
        return Field(self.spaces.V0, solve_streamfunction(self.ops, -(self.ops.M0 @ w)))

    def state(self, omega, tau: float | None = None) -> EulerState:
        om = Field(self.spaces.V0, _coeffs(omega))
        return EulerState(om, self.elliptic_solve(om), self.tau if tau is None else tau)

    # -- quadrature-level helpers -------------------------------------------

    def _velocity_qp(self, psi):
        """``u = grad_perp psi`` at quadrature points."""
        gp = self.spaces.V0.grad_at_quadrature(psi)
        return np.stack([-gp[..., 1], gp[..., 0]], axis=-1)

    def _grad_qp(self, omega):
        return self.spaces.V0.grad_at_quadrature(omega)

    def _test_weights(self, a, tau):
        """``phi_i + tau a.grad phi_i`` at quadrature points, ``(nc, nq, nb)``."""
        adv = np.einsum("cqk,qbk->cqb", a, self._dphi)
        return self._phi[None] + tau * adv

    def _rhs(self, test, vals):
        local = np.einsum("cqb,cq,q->cb", test, vals, self._w)
        return assemble_vector(self.spaces.V0, local)

    # -- semi-discrete tendency ---------------------------------------------

    def semidiscrete_tendency(self, st: EulerState) -> Field:
        tau = st.tau
        a = self._velocity_qp(st.psi.coeffs)
        adv = np.einsum("cqk,cqk->cq", a, self._grad_qp(st.omega.coeffs))
        test = self._test_weights(a, tau)
        rhs = -self._rhs(test, adv)
        V0 = self.spaces.V0
        if tau == 0:
            cfg = SolverConfig(rtol=1e-14, atol=1e-300)
            return Field(V0, cg(self.ops.M0, rhs, cfg, precond=lambda r: r / self._m0_diag))
        local = np.einsum("cqi,qj,q->cij", test, self._phi, self._w)
        Mt = assemble_matrix(V0, V0, local)
        cfg = SolverConfig(rtol=1e-14, atol=1e-300, max_iter=2000, restart=50)
        return Field(V0, gmres(Mt, rhs, lambda r: r / self._m0_diag, cfg))

    def streamwise_diffusion(self, st: EulerState) -> float:
        """``-tau ||u.grad omega||^2``, the definite part of the SUPG enstrophy budget."""
        a = self._velocity_qp(st.psi.coeffs)
        adv = np.einsum("cqk,cqk->cq", a, self._grad_qp(st.omega.coeffs))
        return -st.tau * float(np.einsum("cq,cq,q->", adv, adv, self._w))

    # -- implicit midpoint ---------------------------------------------------

    def _psi(self, omega):
        return solve_streamfunction(self.ops, -(self.ops.M0 @ omega))

    def midpoint_residual(self, omega1, omega0, dt, tau):
        om_bar = 0.5 * (omega0 + omega1)
        a = self._velocity_qp(self._psi(om_bar))
        delta = self.spaces.V0.at_quadrature(omega1 - omega0)
        adv = np.einsum("cqk,cqk->cq", a, self._grad_qp(om_bar))
        return self._rhs(self._test_weights(a, tau), delta + dt * adv)

    def midpoint_jacobian(self, omega1, omega0, dt, tau):
        """Exact directional derivative of :meth:`midpoint_residual` in ``omega1``."""
        V0 = self.spaces.V0
        om_bar = 0.5 * (omega0 + omega1)
        a = self._velocity_qp(self._psi(om_bar))
        delta = V0.at_quadrature(omega1 - omega0)
        grad_bar = self._grad_qp(om_bar)
        adv = np.einsum("cqk,cqk->cq", a, grad_bar)
        test = self._test_weights(a, tau)

        def apply(v):
            da = self._velocity_qp(self._psi(0.5 * v))
            vq = V0.at_quadrature(v)
            dadv = np.einsum("cqk,cqk->cq", da, grad_bar) + 0.5 * np.einsum(
                "cqk,cqk->cq", a, self._grad_qp(v)
            )
            out = self._rhs(test, vq + dt * dadv)
            if tau:
                dtest = tau * np.einsum("cqk,qbk->cqb", da, self._dphi)
                out += self._rhs(dtest, delta + dt * adv)
            return out

        return apply

    def step_midpoint(self, st: EulerState, dt: float) -> EulerState:
        w0 = st.omega.coeffs
        tau = st.tau
        if not np.any(w0):
            self.last_report = NewtonReport(0, 0.0, True)
            return EulerState(st.omega.copy(), st.psi.copy(), tau)

        def lin_solve(J, rhs, x, tol):
            hist = []
            cfg = SolverConfig(rtol=tol / max(np.linalg.norm(rhs), 1e-300), atol=1e-300,
                               max_iter=2000, restart=50)
            dx = gmres(J, rhs, lambda r: r / self._m0_diag, cfg, history=hist)
            return dx, len(hist) - 1

        # a residual below round-off of M0 omega cannot be reduced further
        floor = 16 * EPS * np.linalg.norm(self.ops.M0 @ w0)
        cfg = self.newton_config.with_(atol=max(self.newton_config.atol, floor))
        w1, rep = newton(
            lambda x: self.midpoint_residual(x, w0, dt, tau),
            lambda x: self.midpoint_jacobian(x, w0, dt, tau),
            w0.copy(), cfg, linear_solver=lin_solve, max_iter=cfg.max_iter,
        )
        self.last_report = rep
        return self.state(w1, tau)

    # -- functionals ---------------------------------------------------------

    def energy(self, st: EulerState) -> float:
        """``1/2 |grad psi|^2 = -1/2 <psi, omega>``."""
        return 0.5 * float(st.psi.coeffs @ (self.ops.K0 @ st.psi.coeffs))

    def enstrophy(self, st: EulerState) -> float:
        return 0.5 * float(st.omega.coeffs @ (self.ops.M0 @ st.omega.coeffs))

    def total_vorticity(self, st: EulerState) -> float:
        return float(np.sum(self.ops.M0 @ st.omega.coeffs))


def _coeffs(f):
    return f.coeffs if isinstance(f, Field) else np.asarray(f, dtype=float)
