"""Linear rotating shallow water equations on the f-plane.

    <w, u_t> + <w, f u^perp> - <div w, g eta> = 0      for all w in V1
    eta_t + H div u = 0                                 cellwise in V2
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import Operators
from .fespace import Field, make_complex
from .hodge import harmonic_basis
from .linalg import SchurPreconditioner, SolverConfig, cg, gmres
from .mesh import build


@dataclass(frozen=True)
class LinearParams:
    f: float
    g: float
    H: float
    dt: float

    def __post_init__(self):
        if not (self.g > 0 and self.H > 0):
            raise ValueError("g and H must be positive")
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if not np.isfinite(self.f):
            raise ValueError("Coriolis parameter must be finite")


@dataclass
class LinearState:
    u: Field
    eta: Field

    def vector(self) -> np.ndarray:
        return np.concatenate([self.u.coeffs, self.eta.coeffs])


class LinearSWE:
    def __init__(self, mesh, params: LinearParams, solver: SolverConfig | None = None):
        self.mesh = mesh
        self.params = params
        self.spaces = make_complex(mesh)
        self.ops = Operators(self.spaces)
        self.solver = solver or SolverConfig(rtol=1e-13, atol=1e-300, max_iter=500, restart=30)
        self._pc = None
        self._system = None
        self.last_iterations = 0

    @property
    def n_u(self) -> int:
        return self.spaces.V1.dim

    def state(self, u, eta) -> LinearState:
        return LinearState(Field(self.spaces.V1, _coeffs(u)), Field(self.spaces.V2, _coeffs(eta)))

    def rest(self) -> LinearState:
        return self.state(np.zeros(self.spaces.V1.dim), np.zeros(self.spaces.V2.dim))

    def split(self, z) -> LinearState:
        return self.state(z[: self.n_u], z[self.n_u :])

    # -- balanced states -----------------------------------------------------

    def geostrophic_state(self, psi) -> LinearState:
        """Exactly steady balanced state: ``u = grad_perp psi``, ``eta = (f/g) P2 psi``."""
        p = self.params
        if p.f == 0:
            raise ValueError("geostrophic balance needs f != 0")
        psi = _coeffs(psi)
        u = self.ops.G @ psi
        # L2 projection of a V0 field into V2: cell averages of the bilinear interpolant
        V0 = self.spaces.V0
        cell_mean = V0.local(psi).mean(axis=1)
        return self.state(u, (p.f / p.g) * cell_mean)

    # -- semi-discrete operator ----------------------------------------------

    def tendency(self, st: LinearState) -> LinearState:
        p = self.params
        ops = self.ops
        rhs = -(ops.coriolis(p.f) @ st.u.coeffs) + p.g * (ops.div_pairing.T @ st.eta.coeffs)
        udot = cg(ops.M1, rhs, SolverConfig(rtol=1e-14, atol=1e-300))
        etadot = -p.H * (ops.Div @ st.u.coeffs)
        return self.state(udot, etadot)

    def energy(self, st: LinearState) -> float:
        p = self.params
        u, e = st.u.coeffs, st.eta.coeffs
        return 0.5 * float(p.H * u @ (self.ops.M1 @ u) + p.g * e @ (self.ops.M2 @ e))

    # -- implicit midpoint ---------------------------------------------------

    def _blocks(self):
        if self._system is None:
            p = self.params
            ops = self.ops
            a = 0.5 * p.dt
            W = ops.coriolis(p.f)
            B = ops.div_pairing
            lhs = sp.bmat([[ops.M1 + a * W, -a * p.g * B.T], [a * p.H * B, ops.M2]]).tocsr()
            rhs = sp.bmat([[ops.M1 - a * W, a * p.g * B.T], [-a * p.H * B, ops.M2]]).tocsr()
            self._system = (lhs, rhs)
            self._pc = SchurPreconditioner(ops, p.g, p.H, p.dt)
        return self._system

    def step_midpoint(self, st: LinearState) -> LinearState:
        lhs, rhs = self._blocks()
        z0 = st.vector()
        hist = []
        z1 = gmres(lhs, rhs @ z0, self._pc, self.solver, x0=z0, history=hist)
        self.last_iterations = len(hist) - 1
        return self.split(z1)

    # -- Coriolis modes ------------------------------------------------------

    def coriolis_kernel_dimension(self, tol: float = 1e-10) -> int:
        """Number of divergence-free ``u`` with ``<w, u^perp> = 0`` for every ``w`` (dense)."""
        ops = self.ops
        h1, h2 = harmonic_basis(ops)
        Z = np.column_stack([ops.G.toarray(), h1.coeffs, h2.coeffs])
        # orthonormal basis of the divergence-free subspace
        U, s, _ = np.linalg.svd(Z, full_matrices=False)
        Z = U[:, s > tol * s.max()]
        W = ops.coriolis(1.0).toarray()
        s = np.linalg.svd(W @ Z, compute_uv=False)
        return int(np.sum(s <= tol * max(s.max(), 1.0)))


def _coeffs(f):
    return f.coeffs if isinstance(f, Field) else np.asarray(f, dtype=float)


# -- Bloch-wave dispersion analysis ----------------------------------------------


class NonRealFrequencyError(RuntimeError):
    pass


_BLOCH_CACHE: dict = {}


def _lattice_blocks(dx: float, dy: float):
    """Global M, coupling matrices on a small periodic lattice, cached by spacing."""
    key = (dx, dy)
    if key not in _BLOCH_CACHE:
        n = 5
        mesh = build(n, n, n * dx, n * dy)
        ops = Operators(make_complex(mesh))
        M = sp.block_diag([ops.M1, ops.M2]).tocsr()
        W = sp.block_diag([ops.coriolis(1.0), sp.csr_matrix((n * n, n * n))]).tocsr()
        B = ops.div_pairing
        zero_u = sp.csr_matrix((2 * n * n, 2 * n * n))
        zero_h = sp.csr_matrix((n * n, n * n))
        P = sp.bmat([[zero_u, B.T], [None, zero_h]]).tocsr()  # pressure-gradient coupling
        Dv = sp.bmat([[zero_u, None], [B, zero_h]]).tocsr()  # divergence coupling
        _BLOCH_CACHE[key] = (mesh, M, W, P, Dv)
    return _BLOCH_CACHE[key]


def _symbol(mesh, A, k):
    """3x3 Bloch symbol of a lattice-periodic operator for DOF types (x-edge, y-edge, cell)."""
    nx, ny = mesh.nx, mesh.ny
    n = nx * ny
    c0 = mesh.cell_index(2, 2)
    rows = [c0, n + c0, 2 * n + c0]
    S = np.zeros((3, 3), dtype=complex)
    A = A.tocsr()
    for a, r in enumerate(rows):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        for col, val in zip(A.indices[lo:hi], A.data[lo:hi]):
            b, cell = divmod(int(col), n)
            di = (cell % nx) - 2
            dj = (cell // nx) - 2
            # minimal periodic image of the cell offset
            di = (di + nx // 2) % nx - nx // 2
            dj = (dj + ny // 2) % ny - ny // 2
            S[a, b] += val * np.exp(1j * (k[0] * di * mesh.dx + k[1] * dj * mesh.dy))
    return S


def dispersion(kx: float, ky: float, params: LinearParams | dict, dx: float, dy: float | None = None,
               tol: float = 1e-8) -> np.ndarray:
    """Sorted frequencies of the semi-discrete linear system for wavevector ``(kx, ky)``.

    Solves ``-i omega M z = A(k) z`` for the 3x3 Bloch-reduced blocks
    (x-edge flux, y-edge flux, cell elevation per lattice cell).
    """
    if isinstance(params, dict):
        f, g, H = params["f"], params["g"], params["H"]
    else:
        f, g, H = params.f, params.g, params.H
    dy = dx if dy is None else dy
    if abs(kx) > np.pi / dx * (1 + 1e-12) or abs(ky) > np.pi / dy * (1 + 1e-12):
        raise ValueError("wavevector outside the first Brillouin zone")
    mesh, M, W, P, Dv = _lattice_blocks(float(dx), float(dy))
    k = (kx, ky)
    Ms = _symbol(mesh, M, k)
    As = -f * _symbol(mesh, W, k) + g * _symbol(mesh, P, k) - H * _symbol(mesh, Dv, k)
    lam = np.linalg.eigvals(np.linalg.solve(Ms, As))
    omega = 1j * lam  # z ~ exp(-i omega t)
    scale = max(np.abs(omega).max(), 1.0)
    if np.abs(omega.imag).max() > tol * scale:
        raise NonRealFrequencyError(f"non-real frequencies {omega}")
    return np.sort(omega.real)


def group_velocity(kx: np.ndarray, omega: np.ndarray) -> np.ndarray:
    return np.gradient(omega, kx)
