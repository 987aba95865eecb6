"""Lowest-order quadrilateral de Rham complex Q1 -> RT0 -> DG0.

Degrees of freedom:

* ``V0`` (continuous bilinear): vertex values;
* ``V1`` (lowest-order Raviart-Thomas): the total normal flux through each
  edge along its global +x / +y normal;
* ``V2`` (piecewise constant): cell values.

Because every edge normal is globally +x or +y and the local reference basis
uses the same axes, the V1 local-to-global signs are all +1. They are kept in
the DOF map anyway so the assembly code never relies on it.
"""

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

from .mesh import PeriodicQuadMesh


class Family(str, Enum):
    V0 = "V0"
    V1 = "V1"
    V2 = "V2"


@dataclass(frozen=True)
class Quadrature:
    """Tensor Gauss-Legendre rule on the unit square."""

    points: np.ndarray  # (nq, 2)
    weights: np.ndarray  # (nq,)
    points_1d: np.ndarray
    weights_1d: np.ndarray

    @property
    def n(self) -> int:
        return len(self.points_1d)


def gauss_rule(n: int = 3) -> Quadrature:
    if n < 1:
        raise ValueError("need at least one Gauss point")
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    xx, yy = np.meshgrid(x, x, indexing="xy")
    ww = np.outer(w, w)
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    return Quadrature(pts, ww.ravel(), x, w)


DEFAULT_QUADRATURE = gauss_rule(3)


# -- reference bases ---------------------------------------------------------


def q1_values(pts):
    xi, eta = pts[..., 0], pts[..., 1]
    return np.stack(
        [(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta], axis=-1
    )


def q1_ref_grads(pts):
    xi, eta = pts[..., 0], pts[..., 1]
    dxi = np.stack([-(1 - eta), 1 - eta, -eta, eta], axis=-1)
    deta = np.stack([-(1 - xi), -xi, 1 - xi, xi], axis=-1)
    return np.stack([dxi, deta], axis=-1)


def rt0_ref_values(pts):
    """Reference RT0 basis (left, right, bottom, top), unit flux along +x / +y."""
    xi, eta = pts[..., 0], pts[..., 1]
    z = np.zeros_like(xi)
    vx = np.stack([1 - xi, xi, z, z], axis=-1)
    vy = np.stack([z, z, 1 - eta, eta], axis=-1)
    return np.stack([vx, vy], axis=-1)


RT0_REF_DIV = np.array([-1.0, 1.0, -1.0, 1.0])


@dataclass(frozen=True)
class ReferenceElement:
    family: Family
    n_basis: int
    values: np.ndarray  # tables at the quadrature points
    derivs: np.ndarray | None  # grad (V0) or div (V1) tables, reference coords


def reference_element(family, quad: Quadrature = DEFAULT_QUADRATURE) -> ReferenceElement:
    family = Family(family)
    p = quad.points
    if family is Family.V0:
        return ReferenceElement(family, 4, q1_values(p), q1_ref_grads(p))
    if family is Family.V1:
        return ReferenceElement(
            family, 4, rt0_ref_values(p), np.broadcast_to(RT0_REF_DIV, (len(p), 4))
        )
    return ReferenceElement(family, 1, np.ones((len(p), 1)), None)


# -- function spaces ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FunctionSpace:
    mesh: PeriodicQuadMesh
    family: Family
    quad: Quadrature = field(default=DEFAULT_QUADRATURE, repr=False)

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        m = self.mesh
        if self.family is Family.V0:
            return m.cell_vertices
        if self.family is Family.V1:
            return m.cell_edges
        return np.arange(m.n_cells)[:, None]

    @cached_property
    def cell_signs(self) -> np.ndarray:
        return np.ones(self.cell_dofs.shape)

    @property
    def dim(self) -> int:
        m = self.mesh
        return m.n_edges if self.family is Family.V1 else m.n_cells

    @cached_property
    def element(self) -> ReferenceElement:
        return reference_element(self.family, self.quad)

    # physical basis tables; identical in every cell of the uniform mesh

    def basis(self, pts) -> np.ndarray:
        """Physical basis values at reference points ``pts``."""
        pts = np.asarray(pts, dtype=float)
        if self.family is Family.V0:
            return q1_values(pts)
        if self.family is Family.V1:
            dx, dy = self.mesh.dx, self.mesh.dy
            # contravariant Piola with J = diag(dx, dy)
            return rt0_ref_values(pts) * np.array([1.0 / dy, 1.0 / dx])
        return np.ones(pts.shape[:-1] + (1,))

    def basis_grad(self, pts) -> np.ndarray:
        """Physical gradients: (..., nb, 2) for V0, (..., nb, 2, 2) Jacobians for V1.

        For V1 the last two axes are ``[component, derivative direction]``.
        """
        pts = np.asarray(pts, dtype=float)
        dx, dy = self.mesh.dx, self.mesh.dy
        if self.family is Family.V0:
            return q1_ref_grads(pts) / np.array([dx, dy])
        if self.family is Family.V1:
            g = np.zeros(pts.shape[:-1] + (4, 2, 2))
            a = 1.0 / (dx * dy)
            g[..., 0, 0, 0] = -a
            g[..., 1, 0, 0] = a
            g[..., 2, 1, 1] = -a
            g[..., 3, 1, 1] = a
            return g
        raise ValueError("V2 basis has no gradient")

    def basis_div(self) -> np.ndarray:
        if self.family is not Family.V1:
            raise ValueError("divergence table only defined for V1")
        return RT0_REF_DIV / self.mesh.cell_area

    @cached_property
    def qp_values(self) -> np.ndarray:
        return self.basis(self.quad.points)

    @cached_property
    def qp_grads(self) -> np.ndarray:
        return self.basis_grad(self.quad.points)

    @property
    def qp_weights(self) -> np.ndarray:
        """Physical quadrature weights for one cell."""
        return self.quad.weights * self.mesh.cell_area

    def local(self, coeffs) -> np.ndarray:
        """Gather global coefficients to ``(n_cells, n_basis)``."""
        return np.asarray(coeffs)[self.cell_dofs] * self.cell_signs

    def at_quadrature(self, coeffs) -> np.ndarray:
        """Values at all quadrature points, ``(n_cells, nq)`` or ``(n_cells, nq, 2)``."""
        loc = self.local(coeffs)
        if self.family is Family.V1:
            return np.einsum("cb,qbk->cqk", loc, self.qp_values)
        return loc @ self.qp_values.T

    def grad_at_quadrature(self, coeffs) -> np.ndarray:
        if self.family is not Family.V0:
            raise ValueError("gradient at quadrature points needs a V0 field")
        return np.einsum("cb,qbk->cqk", self.local(coeffs), self.qp_grads)

    def quadrature_coords(self) -> np.ndarray:
        """Physical coordinates of all quadrature points, ``(n_cells, nq, 2)``."""
        m = self.mesh
        return m.cell_origins()[:, None, :] + self.quad.points[None] * np.array([m.dx, m.dy])

    def __repr__(self):
        return f"FunctionSpace({self.family.value}, {self.mesh.nx}x{self.mesh.ny})"


def make_space(mesh: PeriodicQuadMesh, family, quad: Quadrature = DEFAULT_QUADRATURE):
    return FunctionSpace(mesh, Family(family), quad)


@dataclass(frozen=True)
class ComplexSpaces:
    """The three spaces of the complex on one mesh."""

    mesh: PeriodicQuadMesh
    V0: FunctionSpace
    V1: FunctionSpace
    V2: FunctionSpace


def make_complex(mesh: PeriodicQuadMesh, quad: Quadrature = DEFAULT_QUADRATURE) -> ComplexSpaces:
    return ComplexSpaces(
        mesh,
        make_space(mesh, Family.V0, quad),
        make_space(mesh, Family.V1, quad),
        make_space(mesh, Family.V2, quad),
    )


# -- fields ------------------------------------------------------------------


class Field:
    """Coefficient vector tagged with its function space."""

    __slots__ = ("space", "coeffs")

    def __init__(self, space: FunctionSpace, coeffs=None):
        if coeffs is None:
            coeffs = np.zeros(space.dim)
        coeffs = np.array(coeffs, dtype=float)
        if coeffs.shape != (space.dim,):
            raise ValueError(f"expected {space.dim} coefficients, got shape {coeffs.shape}")
        self.space = space
        self.coeffs = coeffs

    def copy(self) -> "Field":
        return Field(self.space, self.coeffs.copy())

    def _other(self, other):
        if isinstance(other, Field):
            if other.space is not self.space:
                raise ValueError("fields live on different spaces")
            return other.coeffs
        return other

    def __add__(self, other):
        return Field(self.space, self.coeffs + self._other(other))

    def __sub__(self, other):
        return Field(self.space, self.coeffs - self._other(other))

    def __mul__(self, a):
        return Field(self.space, self.coeffs * a)

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.space, -self.coeffs)

    def __repr__(self):
        return f"Field({self.space!r}, n={self.coeffs.size})"


def _as_vector(value, shape):
    vx, vy = value
    return np.broadcast_to(vx, shape), np.broadcast_to(vy, shape)


def interpolate(space: FunctionSpace, func) -> Field:
    """Canonical interpolant of an analytic ``func(x, y)``.

    V0 samples vertices, V1 integrates the normal component along each edge
    and V2 averages over each cell, both with the space's Gauss order.
    """
    m = space.mesh
    if space.family is Family.V0:
        xy = m.vertex_coords()
        vals = np.broadcast_to(func(xy[:, 0], xy[:, 1]), (m.n_vertices,))
        return Field(space, vals)
    if space.family is Family.V2:
        xy = space.quadrature_coords()
        vals = np.broadcast_to(func(xy[..., 0], xy[..., 1]), xy.shape[:-1])
        return Field(space, vals @ space.quad.weights)
    q = space.quad
    o = m.cell_origins()
    n = m.n_cells
    # x-normal edges: x = x0, y from y0 to y0 + dy
    ys = o[:, 1:2] + q.points_1d[None] * m.dy
    xs = np.broadcast_to(o[:, 0:1], ys.shape)
    fx, _ = _as_vector(func(xs, ys), ys.shape)
    flux_x = (fx @ q.weights_1d) * m.dy
    xs = o[:, 0:1] + q.points_1d[None] * m.dx
    ys = np.broadcast_to(o[:, 1:2], xs.shape)
    _, fy = _as_vector(func(xs, ys), xs.shape)
    flux_y = (fy @ q.weights_1d) * m.dx
    coeffs = np.empty(2 * n)
    coeffs[:n] = flux_x
    coeffs[n:] = flux_y
    return Field(space, coeffs)


def evaluate(fld: Field, point):
    """Value of ``fld`` at a physical point (folded onto the torus)."""
    space = fld.space
    c, ref = space.mesh.locate(point)
    loc = fld.coeffs[space.cell_dofs[c]] * space.cell_signs[c]
    phi = space.basis(ref)
    if space.family is Family.V1:
        return loc @ phi
    return float(loc @ phi)
