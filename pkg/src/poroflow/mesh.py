"""Structured quadrilateral meshes with tagged boundaries.

Meshes are tensor-product grids of axis-aligned cells, optionally with whole
corner blocks removed (quarter-five-spot geometry).  Cells are stored with
counter-clockwise vertex order; boundary edges keep the cell-CCW orientation
so outward normals follow by rotating the edge tangent.  Permeability is
piecewise constant per cell.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mesh",
    "build_rect_mesh",
    "build_q5spot_mesh",
    "boundary_edges_with_tag",
    "check_mesh",
]

TAG_DIRICHLET = "dirichlet"
Q5SPOT_TAGS = ("gamma1", "gamma2", "gamma3", "gamma4", "gamma5", "gamma6")


@dataclass
class Mesh:
    """Quadrilateral mesh.

    Attributes
    ----------
    nodes : (n_nodes, 2) float array
    cells : (n_cells, 4) int array, CCW vertex indices
    boundary_edge_nodes : (n_bedges, 2) int array, cell-CCW orientation
    boundary_edge_tags : list of str, one per boundary edge
    boundary_edge_cells : (n_bedges,) int array, owning cell of each edge
    cell_permeability : (n_cells,) float array
    info : free-form metadata (realized geometry of snapped features etc.)
    """

    nodes: np.ndarray
    cells: np.ndarray
    boundary_edge_nodes: np.ndarray
    boundary_edge_tags: list
    boundary_edge_cells: np.ndarray
    cell_permeability: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_cells(self):
        return self.cells.shape[0]

    def tags(self):
        return sorted(set(self.boundary_edge_tags))


def _grid_mesh(xs, ys, keep_cell, tag_edge, kappa_cell):
    """Assemble a tensor grid, dropping cells where keep_cell is False.

    ``keep_cell(i, j)`` filters cells, ``tag_edge(midpoint)`` labels boundary
    edges, ``kappa_cell(i, j)`` assigns permeability.  Unused nodes are
    compacted away.
    """
    nx, ny = len(xs) - 1, len(ys) - 1
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    nodes_full = np.column_stack([xx.ravel(), yy.ravel()])

    def nid(i, j):
        return i * (ny + 1) + j

    cells = []
    kappa = []
    cell_of_ij = {}
    for i in range(nx):
        for j in range(ny):
            if not keep_cell(i, j):
                continue
            cell_of_ij[(i, j)] = len(cells)
            cells.append([nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)])
            kappa.append(kappa_cell(i, j))
    cells = np.asarray(cells, dtype=int)
    kappa = np.asarray(kappa, dtype=float)

    # Boundary edges: edges used by exactly one kept cell, in cell-CCW order.
    edge_count = {}
    for c, quad in enumerate(cells):
        for k in range(4):
            a, b = quad[k], quad[(k + 1) % 4]
            key = (min(a, b), max(a, b))
            edge_count.setdefault(key, []).append((c, a, b))
    bedges, bcells, btags = [], [], []
    for key, uses in edge_count.items():
        if len(uses) > 2:
            raise ValueError("non-manifold edge in generated mesh")
        if len(uses) == 1:
            c, a, b = uses[0]
            mid = 0.5 * (nodes_full[a] + nodes_full[b])
            bedges.append([a, b])
            bcells.append(c)
            btags.append(tag_edge(mid))

    # Compact node numbering to used nodes only.
    used = np.unique(cells.ravel())
    remap = -np.ones(nodes_full.shape[0], dtype=int)
    remap[used] = np.arange(used.size)
    mesh = Mesh(
        nodes=nodes_full[used],
        cells=remap[cells],
        boundary_edge_nodes=remap[np.asarray(bedges, dtype=int)],
        boundary_edge_tags=btags,
        boundary_edge_cells=np.asarray(bcells, dtype=int),
        cell_permeability=kappa,
    )
    mesh.info["cell_of_ij"] = cell_of_ij
    mesh.info["xs"] = xs
    mesh.info["ys"] = ys
    return mesh


def build_rect_mesh(x_extent, y_extent, nx, ny, kappa=1.0):
    """Uniform nx-by-ny mesh of [0, x_extent] x [0, y_extent].

    All boundary edges are tagged "dirichlet"; permeability is constant.
    """
    if nx < 1 or ny < 1:
        raise ValueError("need at least one cell per direction")
    if x_extent <= 0.0 or y_extent <= 0.0 or kappa <= 0.0:
        raise ValueError("extents and permeability must be positive")
    xs = np.linspace(0.0, x_extent, nx + 1)
    ys = np.linspace(0.0, y_extent, ny + 1)
    return _grid_mesh(
        xs,
        ys,
        keep_cell=lambda i, j: True,
        tag_edge=lambda mid: TAG_DIRICHLET,
        kappa_cell=lambda i, j: kappa,
    )


def build_q5spot_mesh(n_per_side, extent=100.0, cut=5.0, kappa=5e-8,
                      low_block=(25.0, 50.0), kappa_drop=1e3):
    """Quarter-five-spot mesh: square domain with two opposite corner cutouts.

    The ``cut`` x ``cut`` corner squares at the origin and the far corner are
    removed after snapping to whole cells (nearest cell count, at least one).
    Permeability is ``kappa`` except in cells whose centers lie inside the
    ``low_block`` square, where it is ``kappa/kappa_drop``.  Boundary tags:
    gamma1 = origin notch, gamma2 = bottom, gamma3 = right, gamma4 = far
    notch, gamma5 = top, gamma6 = left.  Realized (snapped) geometry is
    recorded in ``mesh.info``.
    """
    n = int(n_per_side)
    if n < 2:
        raise ValueError("need at least two cells per side")
    h = extent / n
    k = int(round(cut / h))
    if k < 1:
        raise ValueError(
            f"cell size {h} too coarse to resolve the {cut} m corner cutouts"
        )
    if k >= n - k:
        raise ValueError("corner cutouts overlap; mesh too coarse")
    c = k * h
    xs = np.linspace(0.0, extent, n + 1)
    ys = xs.copy()

    lo, hi = low_block

    def keep(i, j):
        if i < k and j < k:
            return False
        if i >= n - k and j >= n - k:
            return False
        return True

    def kap(i, j):
        xc, yc = (i + 0.5) * h, (j + 0.5) * h
        if lo <= xc <= hi and lo <= yc <= hi:
            return kappa / kappa_drop
        return kappa

    tol = 1e-9 * extent

    def tag(mid):
        x, y = mid
        if y < tol and x > c:
            return "gamma2"
        if x > extent - tol:
            return "gamma3"
        if y > extent - tol and x < extent - c:
            return "gamma5"
        if x < tol and y > c:
            return "gamma6"
        if x <= c + tol and y <= c + tol:
            return "gamma1"
        if x >= extent - c - tol and y >= extent - c - tol:
            return "gamma4"
        raise ValueError(f"boundary edge midpoint {mid} matches no tag")

    mesh = _grid_mesh(xs, ys, keep, tag, kap)
    mesh.info["realized_cut"] = c
    block_cells = [
        ij for ij in mesh.info["cell_of_ij"]
        if kap(*ij) != kappa
    ]
    if block_cells:
        imin = min(i for i, _ in block_cells)
        imax = max(i for i, _ in block_cells) + 1
        mesh.info["realized_low_block"] = (imin * h, imax * h)
    return mesh


def boundary_edges_with_tag(mesh, tag):
    """Indices of boundary edges carrying ``tag``; unknown tags raise."""
    if tag not in mesh.boundary_edge_tags:
        raise KeyError(f"unknown boundary tag {tag!r}; have {mesh.tags()}")
    return np.array(
        [i for i, t in enumerate(mesh.boundary_edge_tags) if t == tag], dtype=int
    )


def check_mesh(mesh):
    """Validate mesh invariants; raises ValueError on the first violation.

    Checks positive bilinear Jacobians at all cell corners, manifold edges,
    boundary-edge/tag consistency and positive permeability.
    """
    if np.any(mesh.cell_permeability <= 0.0):
        raise ValueError("nonpositive cell permeability")
    if len(mesh.boundary_edge_tags) != mesh.boundary_edge_nodes.shape[0]:
        raise ValueError("boundary tag list length mismatch")

    x = mesh.nodes[mesh.cells]  # (ncells, 4, 2)
    # Bilinear map Jacobian at corner (xi, eta) in {-1, 1}^2.
    for xi, eta in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
        dxi = 0.25 * (
            -(1 - eta) * x[:, 0] + (1 - eta) * x[:, 1]
            + (1 + eta) * x[:, 2] - (1 + eta) * x[:, 3]
        )
        deta = 0.25 * (
            -(1 - xi) * x[:, 0] - (1 + xi) * x[:, 1]
            + (1 + xi) * x[:, 2] + (1 - xi) * x[:, 3]
        )
        det = dxi[:, 0] * deta[:, 1] - dxi[:, 1] * deta[:, 0]
        if np.any(det <= 0.0):
            raise ValueError("cell with nonpositive Jacobian (not CCW?)")

    edge_count = {}
    for quad in mesh.cells:
        for k in range(4):
            a, b = quad[k], quad[(k + 1) % 4]
            edge_count[(min(a, b), max(a, b))] = (
                edge_count.get((min(a, b), max(a, b)), 0) + 1
            )
    boundary = {k for k, v in edge_count.items() if v == 1}
    if any(v > 2 for v in edge_count.values()):
        raise ValueError("non-manifold edge")
    tagged = {
        (min(a, b), max(a, b)) for a, b in mesh.boundary_edge_nodes
    }
    if tagged != boundary:
        raise ValueError("boundary edges and tagged edges disagree")
    return True
