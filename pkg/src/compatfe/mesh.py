"""Uniform doubly periodic quadrilateral mesh (flat torus).

Indexing is row-major over the (i, j) lattice, ``flat = j * nx + i``.

* vertex (i, j) sits at ``(i * dx, j * dy)``;
* cell (i, j) is ``[i dx, (i+1) dx] x [j dy, (j+1) dy]``;
* x-normal edge (i, j) is the vertical segment at ``x = i dx`` spanning
  ``[j dy, (j+1) dy]``, flat id ``j * nx + i``;
* y-normal edge (i, j) is the horizontal segment at ``y = j dy`` spanning
  ``[i dx, (i+1) dx]``, flat id ``nx * ny + j * nx + i``.

Every edge normal points along +x or +y. The "plus" cell of an edge is the
one the normal points out of, the "minus" cell the one it points into.
"""

from dataclasses import dataclass, field

import numpy as np

X_NORMAL = 0
Y_NORMAL = 1

# local edge order inside a cell: left, right, bottom, top
LOCAL_EDGES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class PeriodicQuadMesh:
    nx: int
    ny: int
    Lx: float
    Ly: float
    cell_vertices: np.ndarray = field(repr=False, compare=False)
    cell_edges: np.ndarray = field(repr=False, compare=False)
    edge_plus: np.ndarray = field(repr=False, compare=False)
    edge_minus: np.ndarray = field(repr=False, compare=False)

    @property
    def dx(self) -> float:
        return self.Lx / self.nx

    @property
    def dy(self) -> float:
        return self.Ly / self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def n_vertices(self) -> int:
        return self.nx * self.ny

    @property
    def n_edges(self) -> int:
        return 2 * self.nx * self.ny

    # -- index helpers -----------------------------------------------------

    def cell_index(self, i, j):
        return (np.asarray(j) % self.ny) * self.nx + np.asarray(i) % self.nx

    def vertex_index(self, i, j):
        return self.cell_index(i, j)

    def edge_index(self, axis: int, i, j):
        base = 0 if axis == X_NORMAL else self.n_cells
        return base + self.cell_index(i, j)

    def cell_ij(self, c: int) -> tuple[int, int]:
        self._check(c, self.n_cells, "cell")
        return int(c) % self.nx, int(c) // self.nx

    def edge_axis_ij(self, e: int) -> tuple[int, int, int]:
        self._check(e, self.n_edges, "edge")
        axis, flat = divmod(int(e), self.n_cells)
        return axis, flat % self.nx, flat // self.nx

    def edge_cells(self, e: int) -> tuple[int, int]:
        """Return ``(plus, minus)``; the edge normal points from plus into minus."""
        self._check(e, self.n_edges, "edge")
        return int(self.edge_plus[e]), int(self.edge_minus[e])

    def cell_geometry(self, c: int) -> tuple[np.ndarray, float, float]:
        i, j = self.cell_ij(c)
        return np.array([i * self.dx, j * self.dy]), self.dx, self.dy

    def cell_origins(self) -> np.ndarray:
        """Lower-left corners of all cells, shape ``(n_cells, 2)``."""
        c = np.arange(self.n_cells)
        return np.stack([(c % self.nx) * self.dx, (c // self.nx) * self.dy], axis=1)

    def vertex_coords(self) -> np.ndarray:
        return self.cell_origins()

    def edge_midpoints(self) -> np.ndarray:
        o = self.cell_origins()
        xe = o + np.array([0.0, 0.5 * self.dy])
        ye = o + np.array([0.5 * self.dx, 0.0])
        return np.vstack([xe, ye])

    def edge_lengths(self) -> np.ndarray:
        n = self.n_cells
        return np.concatenate([np.full(n, self.dy), np.full(n, self.dx)])

    def locate(self, point) -> tuple[int, np.ndarray]:
        """Cell containing ``point`` (folded onto the torus) and its local coordinates."""
        x = np.mod(point[0], self.Lx)
        y = np.mod(point[1], self.Ly)
        i = min(int(x // self.dx), self.nx - 1)
        j = min(int(y // self.dy), self.ny - 1)
        xi = (x - i * self.dx) / self.dx
        eta = (y - j * self.dy) / self.dy
        return int(self.cell_index(i, j)), np.array([xi, eta])

    @staticmethod
    def _check(idx, n, what):
        if not 0 <= int(idx) < n:
            raise IndexError(f"{what} id {idx} out of range [0, {n})")


def build(nx: int, ny: int, Lx: float = 1.0, Ly: float = 1.0) -> PeriodicQuadMesh:
    """Build an ``nx`` by ``ny`` torus mesh of extent ``Lx`` by ``Ly``."""
    if int(nx) != nx or int(ny) != ny:
        raise ValueError("cell counts must be integers")
    nx, ny = int(nx), int(ny)
    if nx < 3 or ny < 3:
        # below 3 the left and right neighbours of a cell coincide
        raise ValueError(f"need nx, ny >= 3, got ({nx}, {ny})")
    if not (Lx > 0 and Ly > 0):
        raise ValueError(f"domain extents must be positive, got ({Lx}, {Ly})")

    n = nx * ny
    c = np.arange(n)
    i, j = c % nx, c // nx

    def flat(ii, jj):
        return (jj % ny) * nx + ii % nx

    # local vertex order: (0,0), (1,0), (0,1), (1,1)
    cell_vertices = np.stack(
        [flat(i, j), flat(i + 1, j), flat(i, j + 1), flat(i + 1, j + 1)], axis=1
    )
    cell_edges = np.stack(
        [flat(i, j), flat(i + 1, j), n + flat(i, j), n + flat(i, j + 1)], axis=1
    )
    # x-edge (i,j): from cell (i-1,j) into cell (i,j); same for y-edges along j
    edge_plus = np.concatenate([flat(i - 1, j), flat(i, j - 1)])
    edge_minus = np.concatenate([flat(i, j), flat(i, j)])

    for arr in (cell_vertices, cell_edges, edge_plus, edge_minus):
        arr.setflags(write=False)
    return PeriodicQuadMesh(
        nx, ny, float(Lx), float(Ly), cell_vertices, cell_edges, edge_plus, edge_minus
    )
