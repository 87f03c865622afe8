"""ASCII legacy-VTK output for meshes and nodal fields.

Writes unstructured grids of VTK_QUAD cells.  For degree-2 spaces each
element is split into four subquads through its edge-midpoint and center dofs
so that every dof appears as a point with point data.
"""

import numpy as np

__all__ = ["write_mesh", "write_field"]

_HEADER = "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n"


def _write_grid(fh, title, points, quads):
    fh.write(_HEADER.format(title=title))
    fh.write(f"POINTS {points.shape[0]} double\n")
    for x, y in points:
        fh.write(f"{x:.17g} {y:.17g} 0\n")
    fh.write(f"CELLS {quads.shape[0]} {quads.shape[0] * 5}\n")
    for q in quads:
        fh.write(f"4 {q[0]} {q[1]} {q[2]} {q[3]}\n")
    fh.write(f"CELL_TYPES {quads.shape[0]}\n")
    for _ in range(quads.shape[0]):
        fh.write("9\n")


def write_mesh(path, mesh, title="mesh"):
    """Mesh with per-cell permeability as CELL_DATA."""
    with open(path, "w") as fh:
        _write_grid(fh, title, mesh.nodes, mesh.cells)
        fh.write(f"CELL_DATA {mesh.n_cells}\n")
        fh.write("SCALARS permeability double 1\nLOOKUP_TABLE default\n")
        for k in mesh.cell_permeability:
            fh.write(f"{k:.17g}\n")


def _display_quads(space):
    """CCW display quads covering all dofs of the space."""
    if space.degree == 1:
        # lattice order is (0,0),(1,0),(0,1),(1,1); reorder to CCW
        return space.cell_dofs[:, [0, 1, 3, 2]]
    quads = []
    for cd in space.cell_dofs:
        for b in range(2):
            for a in range(2):
                quads.append([cd[b * 3 + a], cd[b * 3 + a + 1],
                              cd[(b + 1) * 3 + a + 1], cd[(b + 1) * 3 + a]])
    return np.asarray(quads, dtype=int)


def write_field(path, space, values, name="field", title="field"):
    """Nodal dof vector as POINT_DATA over the dof grid."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] != space.n_dofs:
        raise ValueError("dof vector length mismatch")
    with open(path, "w") as fh:
        _write_grid(fh, title, space.dof_coords, _display_quads(space))
        fh.write(f"POINT_DATA {space.n_dofs}\n")
        fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
        for v in values:
            fh.write(f"{v:.17g}\n")
