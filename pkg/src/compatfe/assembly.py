"""Assembled operators of the complex and the quadrature kernels used by the schemes.

Operators are ``scipy.sparse.csr_matrix`` objects with sorted indices and no
stored zeros. Bilinear forms are built cell by cell from the shared Gauss rule;
on the uniform mesh constant-coefficient element matrices are computed once.
"""

import numpy as np
import scipy.io
import scipy.sparse as sp

from .fespace import Family, Field, FunctionSpace
from .linalg import SolverConfig, cg


def finalize(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def assemble_matrix(test: FunctionSpace, trial: FunctionSpace, local) -> sp.csr_matrix:
    """Scatter element matrices into a global operator.

    ``local`` is either one ``(nb_test, nb_trial)`` array shared by every cell
    or a per-cell stack ``(n_cells, nb_test, nb_trial)``.
    """
    n = test.mesh.n_cells
    local = np.broadcast_to(local, (n,) + np.shape(local)[-2:])
    rows = test.cell_dofs[:, :, None]
    cols = trial.cell_dofs[:, None, :]
    signs = test.cell_signs[:, :, None] * trial.cell_signs[:, None, :]
    shape = local.shape
    rows = np.broadcast_to(rows, shape).ravel()
    cols = np.broadcast_to(cols, shape).ravel()
    vals = (local * signs).ravel()
    return finalize(sp.coo_matrix((vals, (rows, cols)), shape=(test.dim, trial.dim)))


def assemble_vector(space: FunctionSpace, local) -> np.ndarray:
    """Sum per-cell contributions ``(n_cells, nb)`` into a global vector."""
    vals = (np.asarray(local) * space.cell_signs).ravel()
    return np.bincount(space.cell_dofs.ravel(), weights=vals, minlength=space.dim)


def _element_mass(space: FunctionSpace, weight=None):
    phi = space.qp_values
    w = space.qp_weights
    if weight is None:
        if space.family is Family.V1:
            return np.einsum("q,qik,qjk->ij", w, phi, phi)
        return np.einsum("q,qi,qj->ij", w, phi, phi)
    # weight given per cell and quadrature point
    if space.family is Family.V1:
        return np.einsum("cq,q,qik,qjk->cij", weight, w, phi, phi)
    return np.einsum("cq,q,qi,qj->cij", weight, w, phi, phi)


def mass_matrix(space: FunctionSpace) -> sp.csr_matrix:
    return assemble_matrix(space, space, _element_mass(space))


def stiffness_matrix(V0: FunctionSpace) -> sp.csr_matrix:
    """``<grad phi_i, grad phi_j>`` on V0."""
    g = V0.qp_grads
    local = np.einsum("q,qik,qjk->ij", V0.qp_weights, g, g)
    return assemble_matrix(V0, V0, local)


def grad_perp(V0: FunctionSpace, V1: FunctionSpace) -> sp.csr_matrix:
    """Exact coefficient map of ``(-d/dy, d/dx)`` from V0 into V1.

    The flux of the rotated gradient through an edge is the difference of the
    end-point values, so every entry is +-1.
    """
    m = V0.mesh
    n = m.n_cells
    c = np.arange(n)
    i, j = c % m.nx, c // m.nx
    v00 = m.vertex_index(i, j)
    # x-edge (i,j): flux = -(psi(i,j+1) - psi(i,j))
    rows = [c, c]
    cols = [m.vertex_index(i, j + 1), v00]
    vals = [-np.ones(n), np.ones(n)]
    # y-edge (i,j): flux = psi(i+1,j) - psi(i,j)
    rows += [n + c, n + c]
    cols += [m.vertex_index(i + 1, j), v00]
    vals += [np.ones(n), -np.ones(n)]
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(V1.dim, V0.dim),
    )
    return finalize(A)


def div_matrix(V1: FunctionSpace, V2: FunctionSpace) -> sp.csr_matrix:
    """Exact cellwise divergence: signed edge fluxes over the cell area."""
    local = V1.basis_div()[None, :]
    return assemble_matrix(V2, V1, local)


def coriolis_matrix(V1: FunctionSpace, f) -> sp.csr_matrix:
    """``W_ij = <w_i, f u_j^perp>`` with ``u^perp = (-u_y, u_x)``.

    ``f`` is a scalar or a V0 field (or its coefficient array).
    """
    phi = V1.qp_values
    perp = np.stack([-phi[..., 1], phi[..., 0]], axis=-1)
    if np.isscalar(f):
        local = float(f) * np.einsum("q,qik,qjk->ij", V1.qp_weights, phi, perp)
        return assemble_matrix(V1, V1, local)
    fq = _v0_at_quadrature(V1, f)
    local = np.einsum("cq,q,qik,qjk->cij", fq, V1.qp_weights, phi, perp)
    return assemble_matrix(V1, V1, local)


def _v0_at_quadrature(space: FunctionSpace, f):
    from .fespace import make_space

    V0 = make_space(space.mesh, Family.V0, space.quad)
    coeffs = f.coeffs if isinstance(f, Field) else np.asarray(f, dtype=float)
    return V0.at_quadrature(coeffs)


def _cell_values(D) -> np.ndarray:
    return D.coeffs if isinstance(D, Field) else np.asarray(D, dtype=float)


def weighted_v0_mass(V0: FunctionSpace, D, check_positive: bool = True) -> sp.csr_matrix:
    """``<gamma_i, D gamma_j>`` for a cellwise-constant weight ``D``."""
    d = _cell_values(D)
    if check_positive and np.any(d <= 0):
        raise ValueError("depth weight must be positive in every cell")
    local = d[:, None, None] * _element_mass(V0)[None]
    return assemble_matrix(V0, V0, local)


def weighted_v1_mass(V1: FunctionSpace, D) -> sp.csr_matrix:
    """``<w_i, D w_j>`` for a cellwise-constant ``D``."""
    d = _cell_values(D)
    local = d[:, None, None] * _element_mass(V1)[None]
    return assemble_matrix(V1, V1, local)


def lumped(M) -> np.ndarray:
    """Row-sum lumping."""
    return np.asarray(M.sum(axis=1)).ravel()


# -- projections -------------------------------------------------------------


def project_rhs(target: FunctionSpace, source) -> np.ndarray:
    """``<phi_i, source>`` with ``source`` a Field or callable ``f(x, y)``."""
    if isinstance(source, Field):
        vals = source.space.at_quadrature(source.coeffs)
        if source.space.mesh is not target.mesh:
            raise ValueError("source and target live on different meshes")
    else:
        xy = target.quadrature_coords()
        vals = source(xy[..., 0], xy[..., 1])
        if target.family is Family.V1:
            vx, vy = vals
            vals = np.stack(np.broadcast_arrays(vx, vy), axis=-1)
    phi = target.qp_values
    w = target.qp_weights
    if target.family is Family.V1:
        vals = np.broadcast_to(vals, (target.mesh.n_cells, len(w), 2))
        local = np.einsum("cqk,q,qik->ci", vals, w, phi)
    else:
        if vals.ndim == 3:
            raise ValueError("cannot project a vector field into a scalar space")
        vals = np.broadcast_to(vals, (target.mesh.n_cells, len(w)))
        local = np.einsum("cq,q,qi->ci", vals, w, phi)
    return assemble_vector(target, local)


def l2_project(source, target: FunctionSpace, config: SolverConfig | None = None) -> Field:
    """L2 projection of a Field (or analytic function) into ``target``."""
    rhs = project_rhs(target, source)
    if target.family is Family.V2:
        return Field(target, rhs / target.mesh.cell_area)
    cfg = config or SolverConfig(rtol=1e-14, atol=1e-15)
    M = mass_matrix(target)
    return Field(target, cg(M, rhs, cfg))


def cell_mean_dot(V1: FunctionSpace, a, b) -> np.ndarray:
    """Cell averages of ``a . b`` for two V1 coefficient vectors."""
    aq = V1.at_quadrature(a)
    bq = V1.at_quadrature(b)
    return np.einsum("cqk,cqk,q->c", aq, bq, V1.quad.weights)


def perp_flux_vector(V1: FunctionSpace, q_qp, m) -> np.ndarray:
    """``<q w_i, m^perp>`` for each V1 basis function.

    ``q_qp`` holds values of the scalar weight at the quadrature points,
    ``(n_cells, nq)``; ``m`` is a V1 coefficient vector.
    """
    mq = V1.at_quadrature(m)
    mperp = np.stack([-mq[..., 1], mq[..., 0]], axis=-1)
    local = np.einsum("cq,q,cqk,qik->ci", q_qp, V1.qp_weights, mperp, V1.qp_values)
    return assemble_vector(V1, local)


def integrate_qp(space: FunctionSpace, vals) -> float:
    """Integral over the domain of values sampled at quadrature points."""
    return float(np.einsum("cq,q->", vals, space.qp_weights))


def write_matrix_market(A, path, comment: str = "") -> None:
    """Debug dump in Matrix Market coordinate format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment)


class Operators:
    """Assembled operators of the complex on one mesh, built lazily."""

    def __init__(self, spaces):
        self.spaces = spaces
        self._cache = {}

    def _get(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    @property
    def M0(self):
        return self._get("M0", lambda: mass_matrix(self.spaces.V0))

    @property
    def M1(self):
        return self._get("M1", lambda: mass_matrix(self.spaces.V1))

    @property
    def M2(self):
        return self._get("M2", lambda: mass_matrix(self.spaces.V2))

    @property
    def K0(self):
        return self._get("K0", lambda: stiffness_matrix(self.spaces.V0))

    @property
    def G(self):
        return self._get("G", lambda: grad_perp(self.spaces.V0, self.spaces.V1))

    @property
    def Div(self):
        return self._get("Div", lambda: div_matrix(self.spaces.V1, self.spaces.V2))

    @property
    def curl_pairing(self):
        """``C_ij = <grad_perp gamma_i, w_j>``, i.e. ``G^T M1``."""
        return self._get("GtM1", lambda: finalize(self.G.T @ self.M1))

    @property
    def div_pairing(self):
        """``B_ij = <phi_i, div w_j>``."""
        return self._get("B", lambda: finalize(self.M2 @ self.Div))

    @property
    def lumped_M1(self):
        return self._get("L1", lambda: lumped(self.M1))

    def coriolis(self, f):
        if np.isscalar(f):
            return self._get(("W", float(f)), lambda: coriolis_matrix(self.spaces.V1, f))
        return coriolis_matrix(self.spaces.V1, f)
