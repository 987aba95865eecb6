"""Discrete Hodge-Helmholtz decomposition of V1 fields on the torus."""

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .assembly import Operators
from .fespace import Field, interpolate
from .linalg import SolverConfig, cg


class HodgeError(RuntimeError):
    """The computed harmonic space does not have the expected structure."""


@dataclass
class HelmholtzParts:
    psi: Field  # zero-mean rotational potential in V0
    rotational: Field  # grad_perp psi
    harmonic: Field
    divergent: Field

    def total(self) -> Field:
        return self.rotational + self.harmonic + self.divergent


def _kernel_dim(A) -> int:
    """Dimension of the kernel of a signed incidence-like operator via graph components."""
    adj = abs(A.T @ A)
    n, _ = connected_components(adj, directed=False)
    return n


def harmonic_dimension(ops: Operators) -> int:
    """``dim V1 - rank(grad_perp) - rank(div)`` from the incidence structure."""
    G, Div = ops.G, ops.Div
    rank_g = G.shape[1] - _kernel_dim(G)
    rank_d = Div.shape[0] - _kernel_dim(Div.T)
    return G.shape[0] - rank_g - rank_d


def weak_curl(ops: Operators, u) -> np.ndarray:
    """Coefficients ``zeta`` in V0 with ``<gamma, zeta> = -<grad_perp gamma, u>``."""
    rhs = -(ops.curl_pairing @ _coeffs(u))
    return cg(ops.M0, rhs, SolverConfig(rtol=1e-14, atol=1e-300))


def _coeffs(u):
    return u.coeffs if isinstance(u, Field) else np.asarray(u, dtype=float)


def harmonic_basis(ops: Operators, tol: float = 1e-12) -> tuple[Field, Field]:
    """L2-orthonormal basis of ``{div u = 0} ∩ {weak curl u = 0}``.

    Raises :class:`HodgeError` if the space is not two dimensional or the
    constant fields fail to be harmonic.
    """
    dim = harmonic_dimension(ops)
    if dim != 2:
        raise HodgeError(f"harmonic space has dimension {dim}, expected 2")
    V1 = ops.spaces.V1
    basis = []
    for vec in ((1.0, 0.0), (0.0, 1.0)):
        h = interpolate(V1, lambda x, y, v=vec: (np.full_like(x, v[0]), np.full_like(x, v[1])))
        scale = np.linalg.norm(h.coeffs)
        div_res = np.abs(ops.Div @ h.coeffs).max()
        curl_res = np.abs(ops.curl_pairing @ h.coeffs).max()
        if div_res > tol * scale / ops.spaces.mesh.cell_area or curl_res > tol * scale:
            raise HodgeError("constant field is not discretely harmonic")
        basis.append(h.coeffs)
    M1 = ops.M1
    # Gram-Schmidt in the M1 inner product
    out = []
    for b in basis:
        for o in out:
            b = b - (o @ (M1 @ b)) * o
        out.append(b / np.sqrt(b @ (M1 @ b)))
    return Field(V1, out[0]), Field(V1, out[1])


def solve_streamfunction(ops: Operators, rhs, config: SolverConfig | None = None) -> np.ndarray:
    """Zero-mean ``psi`` with ``<grad gamma, grad psi> = rhs``.

    The stiffness matrix has the constants as kernel; a rank-one term
    ``c w w^T`` with ``w = M0 1`` pins the mean. ``rhs`` must annihilate the
    constants, otherwise the pinned system returns the least-squares-shifted
    solution with zero mean.
    """
    # 1e-14 sits below the round-off floor of the pinned system from 64x64 upward
    cfg = config or SolverConfig(rtol=1e-13, atol=1e-300, max_iter=20000)
    K = ops.K0
    w = np.asarray(ops.M0.sum(axis=0)).ravel()
    c = K.diagonal().mean() / (w @ w)
    diag = K.diagonal() + c * w * w
    rhs = np.asarray(rhs, dtype=float)
    rhs = rhs - w * (rhs.sum() / w.sum())  # strip any component along the constants
    psi = cg(lambda x: K @ x + c * w * (w @ x), rhs, cfg, precond=lambda r: r / diag)
    return psi - (w @ psi) / w.sum()


def decompose(ops: Operators, u, config: SolverConfig | None = None) -> HelmholtzParts:
    """Split ``u`` into ``grad_perp psi + h + c`` (mutually L2-orthogonal)."""
    V0, V1 = ops.spaces.V0, ops.spaces.V1
    uc = _coeffs(u)
    M1 = ops.M1
    psi = solve_streamfunction(ops, ops.curl_pairing @ uc, config)
    rot = ops.G @ psi
    h1, h2 = harmonic_basis(ops)
    Mu = M1 @ uc
    harm = (h1.coeffs @ Mu) * h1.coeffs + (h2.coeffs @ Mu) * h2.coeffs
    div_part = uc - rot - harm
    return HelmholtzParts(Field(V0, psi), Field(V1, rot), Field(V1, harm), Field(V1, div_part))
