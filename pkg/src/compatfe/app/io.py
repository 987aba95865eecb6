"""Field dumps (plain text and legacy VTK) and the diagnostics CSV."""

import csv
from pathlib import Path

import numpy as np

from ..fespace import Family, Field

CSV_HEADER = ["step", "time", "energy", "enstrophy", "mass", "total_vorticity",
              "div_l2", "newton_iters", "residual_norm"]


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


class DiagnosticsWriter:
    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(CSV_HEADER)
        self._last = None

    def write(self, rec: dict):
        if self._last is not None and rec["step"] <= self._last:
            raise ValueError("diagnostic steps must be strictly increasing")
        vals = [rec[k] for k in CSV_HEADER]
        if not all(np.isfinite(float(v)) for v in vals):
            raise ValueError(f"non-finite diagnostics at step {rec['step']}")
        self._w.writerow([_fmt(v) for v in vals])
        self._fh.flush()
        self._last = rec["step"]

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_diagnostics(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
    return {h: data[:, i] for i, h in enumerate(header)}


# -- field dumps ---------------------------------------------------------------


def dump_fields(fld: Field, path, fmt: str = "text") -> Path:
    """Write ``fld`` as plain text (default) or a legacy VTK unstructured grid."""
    path = Path(path)
    if fmt == "text":
        m = fld.space.mesh
        lines = [f"{fld.space.family.value} {fld.coeffs.size} {m.nx} {m.ny}"]
        lines += [repr(float(v)) for v in fld.coeffs]
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "vtk":
        write_vtk({"field": fld}, path)
    else:
        raise ValueError(f"unknown dump format {fmt!r}")
    return path


def read_dump(path):
    """Return ``(family, coeffs, nx, ny)`` from a plain-text dump."""
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 4:
            raise ValueError(f"{path}: malformed dump header")
        fam, n, nx, ny = Family(head[0]), int(head[1]), int(head[2]), int(head[3])
        coeffs = np.array([float(line) for line in fh if line.strip()])
    if coeffs.size != n:
        raise ValueError(f"{path}: expected {n} coefficients, found {coeffs.size}")
    return fam, coeffs, nx, ny


def cell_samples(fld: Field) -> np.ndarray:
    """Cell-centre values: ``(n_cells,)`` for scalars, ``(n_cells, 2)`` for V1."""
    space = fld.space
    centre = np.array([[0.5, 0.5]])
    phi = space.basis(centre)[0]
    loc = space.local(fld.coeffs)
    if space.family is Family.V1:
        return np.einsum("cb,bk->ck", loc, phi)
    return loc @ phi


def write_vtk(fields: dict, path, title: str = "compatfe fields") -> Path:
    """Legacy ASCII VTK unstructured grid with one quad per cell and cell data."""
    path = Path(path)
    first = next(iter(fields.values()))
    m = first.space.mesh
    xs = np.linspace(0.0, m.Lx, m.nx + 1)
    ys = np.linspace(0.0, m.Ly, m.ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    n_pts = (m.nx + 1) * (m.ny + 1)
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {n_pts} double"]
    out += [f"{x!r} {y!r} 0.0" for x, y in zip(X.ravel(), Y.ravel())]
    i, j = np.meshgrid(np.arange(m.nx), np.arange(m.ny), indexing="xy")
    i, j = i.ravel(), j.ravel()
    p = lambda a, b: b * (m.nx + 1) + a
    out.append(f"CELLS {m.n_cells} {5 * m.n_cells}")
    out += [f"4 {p(a, b)} {p(a + 1, b)} {p(a + 1, b + 1)} {p(a, b + 1)}" for a, b in zip(i, j)]
    out.append(f"CELL_TYPES {m.n_cells}")
    out += ["9"] * m.n_cells
    out.append(f"CELL_DATA {m.n_cells}")
    for name, fld in fields.items():
        vals = cell_samples(fld)
        if vals.ndim == 2:
            out.append(f"VECTORS {name} double")
            out += [f"{a!r} {b!r} 0.0" for a, b in vals]
        else:
            out.append(f"SCALARS {name} double 1")
            out.append("LOOKUP_TABLE default")
            out += [repr(float(v)) for v in vals]
    path.write_text("\n".join(out) + "\n")
    return path
