"""Nonlinear rotating shallow water equations.

Prognostic ``(u, D)`` in V1 x V2 with diagnostic potential vorticity ``q`` in
V0 and mass flux ``m`` in V1:

    <gamma, q D> = -<grad_perp gamma, u> + <gamma, f>        for all gamma in V0
    <v, m>       = <v, D u>                                  for all v in V1
    <w, u_t> + <q* w, m^perp> - <div w, 1/2 |u|^2 + g (D + b)> = 0
    D_t + div m = 0                                          cellwise

``q*`` is ``q`` (no stabilisation), the APVM value ``q - tau (m/D).grad q`` or
the SUPG value ``q - tau (q_t + (m/D).grad q)``. It is evaluated at quadrature
points, so the energy identity holds for every choice.

Time integrators: implicit midpoint on the tendency, the Poisson integrator
with time-averaged variational derivatives of the cubic Hamiltonian, and a
semi-implicit scheme that takes a fixed number of Picard sweeps of an upwind
transport step followed by a correction from the rest-state linearisation.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .assembly import Operators, cell_mean_dot, finalize, perp_flux_vector
from .fespace import Field, make_complex
from .linalg import EPS, NewtonReport, SchurPreconditioner, SolverConfig, cg, gmres, newton


class DepthError(ValueError):
    """The layer depth became non-positive."""


class Stabilization(str, Enum):
    NONE = "none"
    APVM = "apvm"
    SUPG_Q = "supg-q"


class Integrator(str, Enum):
    MIDPOINT = "midpoint"
    POISSON = "poisson"
    SEMI_IMPLICIT = "semi-implicit"


@dataclass(frozen=True)
class SweParams:
    g: float
    dt: float
    f: float | np.ndarray = 0.0  # constant or V0 coefficients
    b: float | np.ndarray = 0.0  # constant or V2 coefficients
    tau: float | None = None  # stabilisation timescale, default dt/2
    stabilization: Stabilization = Stabilization.NONE
    integrator: Integrator = Integrator.POISSON
    k_max: int = 4
    upwind: bool = True  # semi-implicit transport only
    velocity_form: str = "pv-flux"  # semi-implicit: "pv-flux" or "vector-invariant"

    def __post_init__(self):
        object.__setattr__(self, "stabilization", Stabilization(self.stabilization))
        object.__setattr__(self, "integrator", Integrator(self.integrator))
        if not self.g > 0:
            raise ValueError("g must be positive")
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if self.tau is not None and not (np.isfinite(self.tau) and self.tau >= 0):
            raise ValueError("stabilisation timescale must be finite and non-negative")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.velocity_form not in ("pv-flux", "vector-invariant"):
            raise ValueError(f"unknown velocity form {self.velocity_form!r}")

    @property
    def tau_stab(self) -> float:
        if self.stabilization is Stabilization.NONE:
            return 0.0
        return 0.5 * self.dt if self.tau is None else float(self.tau)


@dataclass
class SweState:
    u: Field
    D: Field

    def vector(self) -> np.ndarray:
        return np.concatenate([self.u.coeffs, self.D.coeffs])

    def copy(self) -> "SweState":
        return SweState(self.u.copy(), self.D.copy())


@dataclass
class AuxFields:
    q: Field
    m: Field


@dataclass
class StepRecord:
    """What one step did, kept for the PV consistency check."""

    before: SweState
    after: SweState
    dt: float
    m: np.ndarray | None = None  # mass flux used by the step
    qstar: np.ndarray | None = None  # PV weight at quadrature points
    flux_form: bool = False  # velocity update is exactly of the form M1 du = -dt K(q*, m) + grad


@dataclass
class PVReport:
    max_flux_residual: float
    max_constant_deviation: float | None
    steps: int
    flux_residuals: list = field(default_factory=list)


class NonlinearSWE:
    def __init__(self, mesh, params: SweParams, newton_config: SolverConfig | None = None):
        self.mesh = mesh
        self.params = params
        self.spaces = make_complex(mesh)
        self.ops = Operators(self.spaces)
        self.newton_config = newton_config or SolverConfig(rtol=1e-13, atol=1e-300, max_iter=50)
        self._inner = SolverConfig(rtol=1e-14, atol=1e-300, max_iter=2000)
        V0, V1, V2 = self.spaces.V0, self.spaces.V1, self.spaces.V2
        self.f = _broadcast(params.f, V0.dim)
        self.b = _broadcast(params.b, V2.dim)
        self._f_rhs = self.ops.M0 @ self.f
        self._m1_local = np.einsum("q,qik,qjk->ij", V1.qp_weights, V1.qp_values, V1.qp_values)
        self._m0_local = np.einsum("q,qi,qj->ij", V0.qp_weights, V0.qp_values, V0.qp_values)
        self._m1_diag = self.ops.M1.diagonal()
        self.area = mesh.cell_area
        self.last_report: NewtonReport | None = None
        self.last_record: StepRecord | None = None
        self._q_t = None  # lagged q_t for SUPG-q
        self._pc_cache = {}
        self._edge_tables = None

    # -- construction helpers -----------------------------------------------

    def state(self, u, D) -> SweState:
        return SweState(Field(self.spaces.V1, _coeffs(u)), Field(self.spaces.V2, _coeffs(D)))

    def rest(self, H: float = 1.0) -> SweState:
        return self.state(np.zeros(self.spaces.V1.dim), np.full(self.spaces.V2.dim, float(H)))

    def split(self, z) -> SweState:
        n = self.spaces.V1.dim
        return self.state(z[:n], z[n:])

    def reset(self):
        """Forget the lagged PV tendency used by SUPG-q."""
        self._q_t = None

    # -- D-weighted mass matrices applied cellwise ---------------------------

    def _m1_weighted(self, D, u):
        V1 = self.spaces.V1
        loc = D[:, None] * (V1.local(u) @ self._m1_local.T)
        return _scatter(V1, loc)

    def _m0_weighted(self, D, q):
        V0 = self.spaces.V0
        loc = D[:, None] * (V0.local(q) @ self._m0_local.T)
        return _scatter(V0, loc)

    def _solve_m1(self, rhs):
        return cg(self.ops.M1, rhs, self._inner, precond=lambda r: r / self._m1_diag)

    def _solve_m0_weighted(self, D, rhs):
        _check_depth(D)
        V0 = self.spaces.V0
        diag = _scatter(V0, D[:, None] * np.diag(self._m0_local)[None])
        return cg(lambda x: self._m0_weighted(D, x), rhs, self._inner, precond=lambda r: r / diag)

    # -- diagnostic fields ---------------------------------------------------

    def diagnose_q(self, u, D) -> np.ndarray:
        """``q`` with ``<gamma, q D> = -<grad_perp gamma, u> + <gamma, f>``."""
        u, D = _coeffs(u), _coeffs(D)
        rhs = -(self.ops.curl_pairing @ u) + self._f_rhs
        return self._solve_m0_weighted(D, rhs)

    def diagnose_m(self, u, D) -> np.ndarray:
        """``m = P1(D u)``."""
        u, D = _coeffs(u), _coeffs(D)
        if not np.any(u):
            return np.zeros_like(u)
        return self._solve_m1(self._m1_weighted(D, u))

    def aux(self, st: SweState) -> AuxFields:
        return AuxFields(
            Field(self.spaces.V0, self.diagnose_q(st.u, st.D)),
            Field(self.spaces.V1, self.diagnose_m(st.u, st.D)),
        )

    def _bernoulli(self, u, D):
        """Cell averages of ``1/2 |u|^2 + g (D + b)``, i.e. the V2 projection."""
        return 0.5 * cell_mean_dot(self.spaces.V1, u, u) + self.params.g * (D + self.b)

    # -- stabilised PV at quadrature points ---------------------------------

    def _qstar(self, q, m, D, q_t=None):
        V0, V1 = self.spaces.V0, self.spaces.V1
        qq = V0.at_quadrature(q)
        p = self.params
        if p.stabilization is Stabilization.NONE or p.tau_stab == 0:
            return qq
        adv = np.einsum("cqk,cqk->cq", V1.at_quadrature(m), V0.grad_at_quadrature(q)) / D[:, None]
        if p.stabilization is Stabilization.SUPG_Q and q_t is not None:
            adv = adv + V0.at_quadrature(q_t)
        return qq - p.tau_stab * adv

    def _dqstar(self, q, m, D, dq, dm, dD):
        """Directional derivative of :meth:`_qstar` (``q_t`` is lagged, so fixed)."""
        V0, V1 = self.spaces.V0, self.spaces.V1
        dqq = V0.at_quadrature(dq)
        p = self.params
        if p.stabilization is Stabilization.NONE or p.tau_stab == 0:
            return dqq
        mq = V1.at_quadrature(m)
        gq = V0.grad_at_quadrature(q)
        adv = np.einsum("cqk,cqk->cq", mq, gq)
        dadv = np.einsum("cqk,cqk->cq", V1.at_quadrature(dm), gq)
        dadv += np.einsum("cqk,cqk->cq", mq, V0.grad_at_quadrature(dq))
        d = dadv / D[:, None] - adv * (dD / D**2)[:, None]
        return dqq - p.tau_stab * d

    def _K(self, qs, m):
        return perp_flux_vector(self.spaces.V1, qs, m)

    # -- semi-discrete tendency ---------------------------------------------

    def semidiscrete_tendency(self, st: SweState, q_t=None) -> SweState:
        u, D = st.u.coeffs, st.D.coeffs
        _check_depth(D)
        q = self.diagnose_q(u, D)
        m = self.diagnose_m(u, D)
        qs = self._qstar(q, m, D, q_t)
        rhs = -self._K(qs, m) + self.ops.div_pairing.T @ self._bernoulli(u, D)
        udot = self._solve_m1(rhs)
        Ddot = -(self.ops.Div @ m)
        return self.state(udot, Ddot)

    def energy_tendency(self, st: SweState, tend: SweState) -> float:
        """``<dH/du, u_t> + <dH/dD, D_t>`` with ``dH/du = m`` and ``dH/dD = pi``."""
        u, D = st.u.coeffs, st.D.coeffs
        m = self.diagnose_m(u, D)
        pi = self._bernoulli(u, D)
        return float(m @ (self.ops.M1 @ tend.u.coeffs) + pi @ (self.ops.M2 @ tend.D.coeffs))

    def enstrophy_tendency(self, st: SweState, tend: SweState) -> float:
        """Chain rule for ``C2 = int D q^2``: ``-2 <grad_perp q, u_t> - <q^2, D_t>``."""
        V0 = self.spaces.V0
        q = self.diagnose_q(st.u, st.D)
        q2 = (V0.at_quadrature(q) ** 2) @ V0.qp_weights
        return float(-2.0 * (self.ops.G @ q) @ (self.ops.M1 @ tend.u.coeffs) - q2 @ tend.D.coeffs)

    def apvm_dissipation(self, st: SweState) -> float:
        """``-2 tau int D ((m/D).grad q)^2``, the APVM enstrophy sink (always <= 0)."""
        V0, V1 = self.spaces.V0, self.spaces.V1
        u, D = st.u.coeffs, st.D.coeffs
        q = self.diagnose_q(u, D)
        m = self.diagnose_m(u, D)
        adv = np.einsum("cqk,cqk->cq", V1.at_quadrature(m), V0.grad_at_quadrature(q)) / D[:, None]
        return -2.0 * self.params.tau_stab * float(np.einsum("c,cq,q->", D, adv**2, V0.qp_weights))

    def streamwise_diffusion(self, st: SweState) -> float:
        """Half the APVM enstrophy sink, in the ``int 1/2 D q^2`` normalisation."""
        return 0.5 * self.apvm_dissipation(st)

    # -- functionals ---------------------------------------------------------

    def energy(self, st: SweState) -> float:
        """``int 1/2 D |u|^2 + g D (D/2 + b)``."""
        u, D = st.u.coeffs, st.D.coeffs
        ke = 0.5 * cell_mean_dot(self.spaces.V1, u, u)
        return float(self.area * np.sum(D * (ke + self.params.g * (0.5 * D + self.b))))

    def enstrophy(self, st: SweState) -> float:
        """``C2 = int D q^2`` (no factor 1/2)."""
        V0 = self.spaces.V0
        q = self.diagnose_q(st.u, st.D)
        q2 = (V0.at_quadrature(q) ** 2) @ V0.qp_weights
        return float(q2 @ st.D.coeffs)

    def mass(self, st: SweState) -> float:
        return float(self.area * np.sum(st.D.coeffs))

    def total_vorticity(self, st: SweState) -> float:
        """``C1 = int q D``, computed from the diagnosed ``q``."""
        q = self.diagnose_q(st.u, st.D)
        return float(np.sum(self._m0_weighted(st.D.coeffs, q)))

    def div_l2(self, st: SweState) -> float:
        d = self.ops.Div @ st.u.coeffs
        return float(np.sqrt(self.area * np.sum(d * d)))

    # -- implicit residuals --------------------------------------------------

    def _halves(self, z):
        n = self.spaces.V1.dim
        return z[:n], z[n:]

    def _flux_and_pi(self, kind, u0, D0, u1, D1):
        """Mass flux and Bernoulli function used by the implicit step."""
        V1 = self.spaces.V1
        g = self.params.g
        if kind is Integrator.POISSON:
            rhs = (self._m1_weighted(D0, u0) + 0.5 * self._m1_weighted(D0, u1)
                   + 0.5 * self._m1_weighted(D1, u0) + self._m1_weighted(D1, u1)) / 3.0
            m = self._solve_m1(rhs)
            ke = (cell_mean_dot(V1, u0, u0) + cell_mean_dot(V1, u0, u1) + cell_mean_dot(V1, u1, u1)) / 6.0
            pi = ke + g * (0.5 * (D0 + D1) + self.b)
            return m, pi
        ub, Db = 0.5 * (u0 + u1), 0.5 * (D0 + D1)
        m = self._solve_m1(self._m1_weighted(Db, ub))
        return m, self._bernoulli(ub, Db)

    def _dflux_and_pi(self, kind, u0, D0, u1, D1, du, dD):
        V1 = self.spaces.V1
        g = self.params.g
        if kind is Integrator.POISSON:
            rhs = (0.5 * self._m1_weighted(D0, du) + 0.5 * self._m1_weighted(dD, u0)
                   + self._m1_weighted(dD, u1) + self._m1_weighted(D1, du)) / 3.0
            dm = self._solve_m1(rhs)
            dke = (cell_mean_dot(V1, u0, du) + 2.0 * cell_mean_dot(V1, u1, du)) / 6.0
            return dm, dke + 0.5 * g * dD
        ub, Db = 0.5 * (u0 + u1), 0.5 * (D0 + D1)
        dub, dDb = 0.5 * du, 0.5 * dD
        dm = self._solve_m1(self._m1_weighted(dDb, ub) + self._m1_weighted(Db, dub))
        return dm, cell_mean_dot(V1, ub, dub) + g * dDb

    def implicit_residual(self, z1, z0, dt, kind=Integrator.POISSON, q_t=None):
        """Residual of the Poisson-integrator or implicit-midpoint step.

        ``R_u = M1 (u1 - u0) + dt K(q*, m) - dt B^T pi`` and
        ``R_D = M2 (D1 - D0 + dt div m)``.
        """
        kind = Integrator(kind)
        u1, D1 = self._halves(z1)
        u0, D0 = self._halves(z0)
        ub, Db = 0.5 * (u0 + u1), 0.5 * (D0 + D1)
        q = self.diagnose_q(ub, Db)
        m, pi = self._flux_and_pi(kind, u0, D0, u1, D1)
        qs = self._qstar(q, m, Db, q_t)
        ops = self.ops
        Ru = ops.M1 @ (u1 - u0) + dt * (self._K(qs, m) - ops.div_pairing.T @ pi)
        RD = ops.M2 @ (D1 - D0 + dt * (ops.Div @ m))
        return np.concatenate([Ru, RD])

    def implicit_jacobian(self, z1, z0, dt, kind=Integrator.POISSON, q_t=None):
        """Exact directional derivative of :meth:`implicit_residual` in ``z1``."""
        kind = Integrator(kind)
        u1, D1 = self._halves(z1)
        u0, D0 = self._halves(z0)
        ub, Db = 0.5 * (u0 + u1), 0.5 * (D0 + D1)
        q = self.diagnose_q(ub, Db)
        m, _ = self._flux_and_pi(kind, u0, D0, u1, D1)
        qs = self._qstar(q, m, Db, q_t)
        ops = self.ops
        BT = ops.div_pairing.T

        def apply(v):
            du, dD = self._halves(v)
            dq = self._solve_m0_weighted(
                Db, -(ops.curl_pairing @ (0.5 * du)) - self._m0_weighted(0.5 * dD, q)
            )
            dm, dpi = self._dflux_and_pi(kind, u0, D0, u1, D1, du, dD)
            dqs = self._dqstar(q, m, Db, dq, dm, 0.5 * dD)
            Ju = ops.M1 @ du + dt * (self._K(dqs, m) + self._K(qs, dm) - BT @ dpi)
            JD = ops.M2 @ (dD + dt * (ops.Div @ dm))
            return np.concatenate([Ju, JD])

        return apply

    def _schur(self, H, dt):
        key = (round(H, 14), dt)
        if key not in self._pc_cache:
            self._pc_cache[key] = SchurPreconditioner(self.ops, self.params.g, H, dt)
        return self._pc_cache[key]

    def _implicit_step(self, st: SweState, dt, kind) -> SweState:
        z0 = st.vector()
        D0 = st.D.coeffs
        pc = self._schur(float(np.mean(D0)), dt)
        q_t = self._q_t if self.params.stabilization is Stabilization.SUPG_Q else None

        def lin_solve(J, rhs, x, tol):
            hist = []
            cfg = SolverConfig(rtol=tol / max(np.linalg.norm(rhs), 1e-300), atol=1e-300,
                               max_iter=1000, restart=40)
            dx = gmres(J, rhs, pc, cfg, history=hist)
            return dx, len(hist) - 1

        # residual components below round-off of (M1 u, M2 D) cannot be reduced further
        floor = 16 * EPS * np.linalg.norm(np.concatenate([self.ops.M1 @ st.u.coeffs, self.ops.M2 @ D0]))
        cfg = self.newton_config.with_(atol=max(self.newton_config.atol, floor))
        z1, rep = newton(
            lambda z: self.implicit_residual(z, z0, dt, kind, q_t),
            lambda z: self.implicit_jacobian(z, z0, dt, kind, q_t),
            z0.copy(), cfg, linear_solver=lin_solve, max_iter=cfg.max_iter,
        )
        self.last_report = rep
        new = self.split(z1)
        _check_depth(new.D.coeffs)
        # record the flux and PV weight actually used, for the PV check
        u1, D1 = self._halves(z1)
        ub, Db = 0.5 * (st.u.coeffs + u1), 0.5 * (D0 + D1)
        m, _ = self._flux_and_pi(kind, st.u.coeffs, D0, u1, D1)
        qs = self._qstar(self.diagnose_q(ub, Db), m, Db, q_t)
        self.last_record = StepRecord(st.copy(), new.copy(), dt, m, qs, True)
        return new

    def step_poisson(self, st: SweState, dt: float | None = None) -> SweState:
        return self._implicit_step(st, dt or self.params.dt, Integrator.POISSON)

    def step_midpoint_nl(self, st: SweState, dt: float | None = None) -> SweState:
        return self._implicit_step(st, dt or self.params.dt, Integrator.MIDPOINT)

    # -- upwind transport ----------------------------------------------------

    def upwind_flux_matrix(self, u, upwind: bool = True) -> sp.csr_matrix:
        """Edge fluxes ``F_e = u_e * D~_e`` as a map from cell values of ``D``.

        ``D~`` is the value on the upstream side of the edge (the plus cell
        when the flux is positive); with ``upwind=False`` or a zero flux it is
        the average of both sides.
        """
        mesh = self.mesh
        E = mesh.n_edges
        e = np.arange(E)
        ue = np.asarray(u, dtype=float)
        wp = np.where(ue > 0, 1.0, np.where(ue < 0, 0.0, 0.5)) if upwind else np.full(E, 0.5)
        rows = np.concatenate([e, e])
        cols = np.concatenate([mesh.edge_plus, mesh.edge_minus])
        vals = np.concatenate([ue * wp, ue * (1.0 - wp)])
        return finalize(sp.coo_matrix((vals, (rows, cols)), shape=(E, mesh.n_cells)))

    def transport_depth(self, D0, ubar, dt, upwind: bool = True):
        """Implicit-midpoint upwind DG0 step with frozen ``ubar``.

        Returns ``(D1, m)`` with ``m`` the reconstructed mass flux, so that
        ``D1 = D0 - dt div m`` holds exactly cellwise.
        """
        U = self.upwind_flux_matrix(ubar, upwind)
        A = finalize(self.ops.Div @ U)
        n = A.shape[0]
        lhs = finalize(sp.identity(n) + 0.5 * dt * A)
        rhs = D0 - 0.5 * dt * (A @ D0)
        diag = lhs.diagonal()
        cfg = SolverConfig(rtol=1e-14, atol=1e-300, max_iter=2000, restart=50)
        D1 = gmres(lhs, rhs, lambda r: r / diag, cfg, x0=D0)
        m = U @ (0.5 * (D0 + D1))
        return D0 - dt * (self.ops.Div @ m), m

    def _edge_setup(self):
        """Basis tables on both sides of x- and y-edges at 1D Gauss points."""
        if self._edge_tables is None:
            V1 = self.spaces.V1
            t = V1.quad.points_1d
            one, zero = np.ones_like(t), np.zeros_like(t)
            tables = {}
            # x-edges: plus cell sees the edge at xi = 1, minus cell at xi = 0
            tables[0] = (V1.basis(np.stack([one, t], -1)), V1.basis(np.stack([zero, t], -1)),
                         self.mesh.dy, np.array([0.0, 1.0]))
            # y-edges: plus cell at eta = 1, minus cell at eta = 0; n_perp = (-1, 0)
            tables[1] = (V1.basis(np.stack([t, one], -1)), V1.basis(np.stack([t, zero], -1)),
                         self.mesh.dx, np.array([-1.0, 0.0]))
            self._edge_tables = tables
        return self._edge_tables

    def vector_invariant_matrix(self, ubar, upwind: bool = True) -> sp.csr_matrix:
        """Matrix ``A`` with ``(A u)_i = int zeta(u) (w_i . ubar^perp)`` in upwind DG form.

        Cell part ``-int grad_perp(w_i . ubar^perp) . u`` plus the edge term
        ``int [w_i . ubar^perp] (n^perp . u~)`` with ``u~`` from the upstream cell.
        """
        V1 = self.spaces.V1
        mesh = self.mesh
        ub_loc = V1.local(ubar)  # (nc, 4)
        phi = V1.qp_values  # (nq, 4, 2)
        J = V1.qp_grads[0]  # (4, 2, 2), constant on the cell
        ubq = np.einsum("cb,qbk->cqk", ub_loc, phi)
        ubp = np.stack([-ubq[..., 1], ubq[..., 0]], -1)
        dub = np.einsum("cb,bkd->ckd", ub_loc, J)
        dubp = np.stack([-dub[:, 1, :], dub[:, 0, :]], 1)  # d/dd of ubar^perp
        grad_s = np.einsum("ikd,cqk->cqid", J, ubp) + np.einsum("qik,ckd->cqid", phi, dubp)
        gperp = np.stack([-grad_s[..., 1], grad_s[..., 0]], -1)
        cell_local = -np.einsum("q,cqik,qjk->cij", V1.qp_weights, gperp, phi)
        dofs = V1.cell_dofs
        rows = [np.broadcast_to(dofs[:, :, None], cell_local.shape).ravel()]
        cols = [np.broadcast_to(dofs[:, None, :], cell_local.shape).ravel()]
        vals = [cell_local.ravel()]

        w1d = V1.quad.weights_1d
        tables = self._edge_setup()
        n = mesh.n_cells
        ub = np.asarray(ubar, dtype=float)
        for axis in (0, 1):
            tp, tm, length, nperp = tables[axis]
            e = np.arange(n) + axis * n
            P, M = mesh.edge_plus[e], mesh.edge_minus[e]
            ue = ub[e]
            s_p = np.einsum("eb,gbk,gik->egi", ub_loc[P], tp, np.stack([tp[..., 1], -tp[..., 0]], -1))
            s_m = np.einsum("eb,gbk,gik->egi", ub_loc[M], tm, np.stack([tm[..., 1], -tm[..., 0]], -1))
            # w_i . ubar^perp = -w_x ub_y + w_y ub_x; rewritten above as ubar . (w_y, -w_x)
            tan_p = tp @ nperp  # n^perp . w_j on each side, (ng, 4)
            tan_m = tm @ nperp
            wp = np.where(ue > 0, 1.0, np.where(ue < 0, 0.0, 0.5)) if upwind else np.full(n, 0.5)
            for side_cells, tan, wgt in ((P, tan_p, wp), (M, tan_m, 1.0 - wp)):
                for test_cells, s, sign in ((P, s_p, 1.0), (M, s_m, -1.0)):
                    loc = sign * length * np.einsum("g,egi,gj->eij", w1d, s, tan) * wgt[:, None, None]
                    rows.append(np.broadcast_to(dofs[test_cells][:, :, None], loc.shape).ravel())
                    cols.append(np.broadcast_to(dofs[side_cells][:, None, :], loc.shape).ravel())
                    vals.append(loc.ravel())
        A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(V1.dim, V1.dim))
        return finalize(A)

    # -- semi-implicit scheme ------------------------------------------------

    def _transport(self, u0, D0, q0, v, Dk, dt):
        """Midpoint transport with frozen ``ubar = (u0 + v)/2``, ``Dbar = (D0 + Dk)/2``."""
        p = self.params
        ops = self.ops
        ub, Db = 0.5 * (u0 + v), 0.5 * (D0 + Dk)
        _check_depth(Db)
        D1, m = self.transport_depth(D0, ub, dt, p.upwind)
        pi = self._bernoulli(ub, Db)
        if p.velocity_form == "pv-flux":
            # Lax-Wendroff type PV weight; q0 = const gives q* = const
            V0, V1 = self.spaces.V0, self.spaces.V1
            adv = np.einsum("cqk,cqk->cq", V1.at_quadrature(m), V0.grad_at_quadrature(q0)) / Db[:, None]
            qs = V0.at_quadrature(q0) - 0.5 * dt * adv
            rhs = ops.M1 @ u0 - dt * (self._K(qs, m) - ops.div_pairing.T @ pi)
            return self._solve_m1(rhs), D1, m, qs
        A = self.vector_invariant_matrix(ub, p.upwind)
        W = ops.coriolis(self.f if np.ptp(self.f) else float(self.f[0]))
        lhs = finalize(ops.M1 + 0.5 * dt * A)
        rhs = ops.M1 @ u0 - 0.5 * dt * (A @ u0) - dt * (W @ ub - ops.div_pairing.T @ pi)
        diag = lhs.diagonal()
        cfg = SolverConfig(rtol=1e-14, atol=1e-300, max_iter=2000, restart=50)
        return gmres(lhs, rhs, lambda r: r / diag, cfg, x0=u0), D1, m, None

    def _correction_system(self, q0, H, dt):
        """Rest-state linearisation; Coriolis uses ``H q^n``, which is ``f`` at rest."""
        ops = self.ops
        a = 0.5 * dt
        g = self.params.g
        W = ops.coriolis(H * q0)
        B = ops.div_pairing
        return sp.bmat([[ops.M1 + a * W, -a * g * B.T], [a * H * B, ops.M2]]).tocsr()

    def step_semi_implicit(self, st: SweState, dt: float | None = None, k_max: int | None = None,
                           history: list | None = None) -> SweState:
        """``k_max`` Picard sweeps: transport, then a rest-state linear correction.

        Returns the last iterate. ``history`` collects the iterates when given.
        """
        dt = dt or self.params.dt
        k_max = k_max or self.params.k_max
        ops = self.ops
        u0, D0 = st.u.coeffs.copy(), st.D.coeffs.copy()
        _check_depth(D0)
        q0 = self.diagnose_q(u0, D0)
        H = float(np.mean(D0))
        lhs = self._correction_system(q0, H, dt)
        pc = self._schur(H, dt)
        cfg = SolverConfig(rtol=1e-13, atol=1e-300, max_iter=1000, restart=40)
        n = u0.size
        v, Dk = u0.copy(), D0.copy()
        total = 0
        m = qs = None
        for _ in range(k_max):
            u_tr, D_tr, m, qs = self._transport(u0, D0, q0, v, Dk, dt)
            R = np.concatenate([ops.M1 @ (v - u_tr), ops.M2 @ (Dk - D_tr)])
            scale = max(np.linalg.norm(ops.M1 @ u_tr), np.linalg.norm(ops.M2 @ D_tr))
            hist = []
            delta = gmres(lhs, -R, pc, cfg.with_(atol=max(1e-15 * scale, 1e-300)), history=hist)
            total += len(hist) - 1
            v, Dk = v + delta[:n], Dk + delta[n:]
            if history is not None:
                history.append(np.concatenate([v, Dk]))
        new = self.state(v, Dk)
        _check_depth(Dk)
        self.last_report = NewtonReport(k_max, float(np.linalg.norm(R)), True, total)
        self.last_record = StepRecord(st.copy(), new.copy(), dt, m, qs, False)
        return new

    def semi_implicit_residual(self, st: SweState, new: SweState, dt: float | None = None) -> float:
        """Norm of ``new - transport(new)``: how far an iterate is from the midpoint fixed point."""
        dt = dt or self.params.dt
        u0, D0 = st.u.coeffs, st.D.coeffs
        q0 = self.diagnose_q(u0, D0)
        v, Dk = new.u.coeffs, new.D.coeffs
        u_tr, D_tr, _, _ = self._transport(u0, D0, q0, v, Dk, dt)
        return float(np.linalg.norm(np.concatenate([self.ops.M1 @ (v - u_tr), self.ops.M2 @ (Dk - D_tr)])))

    # -- driver --------------------------------------------------------------

    def _raw_step(self, st, dt):
        kind = self.params.integrator
        if kind is Integrator.POISSON:
            return self.step_poisson(st, dt)
        if kind is Integrator.MIDPOINT:
            return self.step_midpoint_nl(st, dt)
        return self.step_semi_implicit(st, dt)

    def step(self, st: SweState) -> SweState:
        """One step with the configured integrator.

        A step producing non-positive depth is retried once as two half
        steps; a second failure raises :class:`DepthError`.
        """
        dt = self.params.dt
        q_old = self.diagnose_q(st.u, st.D) if self.params.stabilization is Stabilization.SUPG_Q else None
        try:
            new = self._raw_step(st, dt)
        except DepthError:
            half = self._raw_step(st, 0.5 * dt)
            new = self._raw_step(half, 0.5 * dt)
            self.last_record = StepRecord(st.copy(), new.copy(), dt)
        if q_old is not None:
            self._q_t = (self.diagnose_q(new.u, new.D) - q_old) / dt
        return new


# -- mass flux reconstruction -----------------------------------------------


def upwind_values(mesh, u, D, upwind: bool = True) -> np.ndarray:
    """Edge values ``D~`` taken from the upstream cell of each edge."""
    u = np.asarray(u, dtype=float)
    D = np.asarray(D, dtype=float)
    Dp, Dm = D[mesh.edge_plus], D[mesh.edge_minus]
    if not upwind:
        return 0.5 * (Dp + Dm)
    return np.where(u > 0, Dp, np.where(u < 0, Dm, 0.5 * (Dp + Dm)))


def mass_flux_reconstruct(mesh, u, D, D_tilde=None) -> np.ndarray:
    """V1 mass flux whose edge DOF is the edge-integrated upwind flux ``u D~``.

    For RT0/DG0 the local projection reduces to ``m_e = u_e D~_e``, since
    ``u_e`` is already the total flux through edge ``e``.
    """
    u = _coeffs(u)
    if D_tilde is None:
        D_tilde = upwind_values(mesh, u, _coeffs(D))
    return u * np.asarray(D_tilde, dtype=float)


# -- PV consistency ----------------------------------------------------------


def pv_consistency_check(model: NonlinearSWE, trajectory, constant_tol: float = 1e-10) -> PVReport:
    """Check the PV law along ``trajectory`` (a list of :class:`StepRecord`).

    (a) For steps whose velocity update is in flux form, the residual of
    ``<gamma, (qD)^{n+1} - (qD)^n> - dt <grad gamma, q* m>`` over all V0
    test functions, relative to the size of either term.
    (b) If the first state has constant ``q``, the largest deviation from that
    constant over the run.
    """
    ops = model.ops
    V0 = model.spaces.V0
    grads = V0.qp_grads  # (nq, nb, 2)
    res = []
    for rec in trajectory:
        if not rec.flux_form or rec.m is None:
            continue
        lhs = -(ops.curl_pairing @ (rec.after.u.coeffs - rec.before.u.coeffs))
        mq = model.spaces.V1.at_quadrature(rec.m)
        loc = np.einsum("cq,cqk,qbk,q->cb", rec.qstar, mq, grads, V0.qp_weights)
        flux = rec.dt * _scatter(V0, loc)
        scale = max(np.abs(lhs).max(), np.abs(flux).max(), 1e-300)
        res.append(float(np.abs(lhs - flux).max() / scale) if scale > 1e-300 else 0.0)
    dev = None
    if trajectory:
        q0 = model.diagnose_q(trajectory[0].before.u, trajectory[0].before.D)
        c = float(np.mean(q0))
        if np.abs(q0 - c).max() <= constant_tol:
            dev = float(np.abs(q0 - c).max())
            for rec in trajectory:
                q = model.diagnose_q(rec.after.u, rec.after.D)
                dev = max(dev, float(np.abs(q - c).max()))
    return PVReport(max(res, default=0.0), dev, len(trajectory), res)


# -- initial data ------------------------------------------------------------


def balanced_jet(model: NonlinearSWE, H: float = 1.0, U: float = 0.1, bump: float = 0.01) -> SweState:
    """Zonal double jet in discrete geostrophic balance plus a small depth bump.

    ``psi = -(U / 2 pi) Ly sin(2 pi y / Ly)`` gives ``u = (U cos(2 pi y / Ly), 0)``;
    the depth is ``H + (f/g) psi`` (cell means) with a Gaussian perturbation so
    the flow is not steady.
    """
    mesh = model.mesh
    V0, V2 = model.spaces.V0, model.spaces.V2
    xy = mesh.vertex_coords()
    k = 2 * np.pi / mesh.Ly
    psi = -(U / k) * np.sin(k * xy[:, 1])
    u = model.ops.G @ psi
    f0 = float(np.mean(model.f))
    D = H + (f0 / model.params.g) * V0.local(psi).mean(axis=1)
    c = V2.quadrature_coords()
    r2 = ((c[..., 0] - 0.5 * mesh.Lx) ** 2 + (c[..., 1] - 0.5 * mesh.Ly) ** 2) / (0.1 * mesh.Lx) ** 2
    D = D + bump * H * (np.exp(-r2) @ V2.quad.weights)
    return model.state(u, D)


# -- helpers -----------------------------------------------------------------


def _scatter(space, loc):
    vals = (loc * space.cell_signs).ravel()
    return np.bincount(space.cell_dofs.ravel(), weights=vals, minlength=space.dim)


def _check_depth(D):
    D = np.asarray(D)
    if not np.all(np.isfinite(D)) or np.any(D <= 0):
        raise DepthError(f"non-positive depth (min {np.nanmin(D):.3e})")


def _broadcast(v, n):
    if isinstance(v, Field):
        v = v.coeffs
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        return np.full(n, float(v))
    if v.shape != (n,):
        raise ValueError(f"expected {n} coefficients, got {v.shape}")
    return v.copy()


def _coeffs(f):
    return f.coeffs if isinstance(f, Field) else np.asarray(f, dtype=float)
