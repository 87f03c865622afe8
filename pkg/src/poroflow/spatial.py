"""Conforming Q1/Q2 Lagrange spaces and weak-form assembly on quad meshes.

Geometry is isoparametric bilinear; fields use tensor-product Lagrange bases
of degree 1 or 2 on the reference square [-1,1]^2.  Every integral (element
matrices, load vectors, norms, energy) uses the same 3x3 tensor Gauss rule,
and every evaluation of a discrete field at quadrature points goes through
:func:`evaluate_at_quadrature`, so identities that hold pointwise at
quadrature points transfer exactly to the assembled quantities.
"""

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from . import physics

__all__ = [
    "FeSpace",
    "fe_space",
    "BoundaryConditions",
    "evaluate_at_quadrature",
    "quadrature_integral",
    "interpolate",
    "l2_norm",
    "l2_error",
    "energy_integral",
    "stiffness_matrix",
    "mass_matrix",
    "load_vector",
    "load_vector_from_values",
    "gradient_load_vector",
    "boundary_advective_load",
    "apply_dirichlet",
    "assemble_pressure",
    "assemble_saturation",
    "evaluate_at_points",
    "evaluate_on_boundary",
]

_GAUSS_1D = {
    3: (
        np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)]),
        np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0]),
    )
}


def _gauss_cell(n=3):
    t, w = _GAUSS_1D[n]
    pts = np.array([[xi, eta] for eta in t for xi in t])
    wts = np.array([wx * wy for wy in w for wx in w])
    return pts, wts


def _lagrange_1d(degree, x):
    """Values and derivatives of the 1D Lagrange basis at points x."""
    x = np.asarray(x, dtype=float)
    if degree == 1:
        vals = np.stack([0.5 * (1.0 - x), 0.5 * (1.0 + x)])
        ders = np.stack([-0.5 * np.ones_like(x), 0.5 * np.ones_like(x)])
    elif degree == 2:
        vals = np.stack([0.5 * x * (x - 1.0), 1.0 - x * x, 0.5 * x * (x + 1.0)])
        ders = np.stack([x - 0.5, -2.0 * x, x + 0.5])
    else:
        raise ValueError("only degrees 1 and 2 are supported")
    return vals, ders


def tabulate_basis(degree, pts):
    """Tensor Lagrange basis at reference points.

    Returns ``(N, dN)`` with shapes (nloc, npts) and (nloc, npts, 2); local
    ordering is the lattice order ``b*(degree+1) + a`` over (xi_a, eta_b).
    """
    pts = np.asarray(pts, dtype=float)
    vx, dx = _lagrange_1d(degree, pts[:, 0])
    vy, dy = _lagrange_1d(degree, pts[:, 1])
    nd = degree + 1
    nloc = nd * nd
    N = np.empty((nloc, pts.shape[0]))
    dN = np.empty((nloc, pts.shape[0], 2))
    for b in range(nd):
        for a in range(nd):
            loc = b * nd + a
            N[loc] = vx[a] * vy[b]
            dN[loc, :, 0] = dx[a] * vy[b]
            dN[loc, :, 1] = vx[a] * dy[b]
    return N, dN


def _geometry_basis(pts):
    """Bilinear geometry basis in cell-corner (CCW) order."""
    pts = np.asarray(pts, dtype=float)
    xi, eta = pts[:, 0], pts[:, 1]
    N = 0.25 * np.stack(
        [(1 - xi) * (1 - eta), (1 + xi) * (1 - eta),
         (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)]
    )
    dN = np.empty((4, pts.shape[0], 2))
    dN[:, :, 0] = 0.25 * np.stack([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
    dN[:, :, 1] = 0.25 * np.stack([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
    return N, dN


def _jacobians(corners, dNgeo):
    """Per-cell, per-point Jacobians of the bilinear map.

    corners: (C, 4, 2); dNgeo: (4, m, 2).  Returns (J, detJ, invJ) with
    J[c,q,d,r] = d x_d / d xi_r and invJ its pointwise inverse.
    """
    J = np.einsum("cid,iqr->cqdr", corners, dNgeo)
    detJ = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    invJ = np.empty_like(J)
    invJ[..., 0, 0] = J[..., 1, 1]
    invJ[..., 0, 1] = -J[..., 0, 1]
    invJ[..., 1, 0] = -J[..., 1, 0]
    invJ[..., 1, 1] = J[..., 0, 0]
    invJ /= detJ[..., None, None]
    return J, detJ, invJ


# Reference-edge parametrization: side k runs CCW corner k -> k+1.
def _side_points(side, t):
    one = np.ones_like(t)
    if side == 0:
        return np.column_stack([t, -one])
    if side == 1:
        return np.column_stack([one, t])
    if side == 2:
        return np.column_stack([-t, one])
    return np.column_stack([-one, -t])


class FeSpace:
    """Finite element space with pretabulated quadrature data.

    Built by :func:`fe_space`.  Degree-1 dofs sit at mesh vertices; degree-2
    adds edge midpoints and cell centers.  ``boundary_dofs`` maps each
    boundary tag to the sorted dofs lying on edges with that tag.
    """

    def __init__(self, mesh, degree):
        if degree not in (1, 2):
            raise ValueError("degree must be 1 or 2")
        self.mesh = mesh
        self.degree = degree
        self._build_dofs()
        self._tabulate_cells()
        self._tabulate_boundary()
        self.cache = {}

    # -- dof layout ------------------------------------------------------

    def _build_dofs(self):
        mesh, degree = self.mesh, self.degree
        cells = mesh.cells
        nv = mesh.n_nodes
        if degree == 1:
            # lattice order (a,b): (0,0),(1,0),(0,1),(1,1) -> corners 0,1,3,2
            self.cell_dofs = cells[:, [0, 1, 3, 2]].copy()
            self.n_dofs = nv
            self.dof_coords = mesh.nodes.copy()
            edge_dof = {}
        else:
            edge_dof = {}
            for quad in cells:
                for k in range(4):
                    key = tuple(sorted((quad[k], quad[(k + 1) % 4])))
                    if key not in edge_dof:
                        edge_dof[key] = nv + len(edge_dof)
            ne = len(edge_dof)
            nc = mesh.n_cells
            self.n_dofs = nv + ne + nc
            cd = np.empty((nc, 9), dtype=int)
            for c, quad in enumerate(cells):
                e = [
                    edge_dof[tuple(sorted((quad[k], quad[(k + 1) % 4])))]
                    for k in range(4)
                ]
                center = nv + ne + c
                # lattice order over (xi, eta)
                cd[c] = [
                    quad[0], e[0], quad[1],
                    e[3], center, e[1],
                    quad[3], e[2], quad[2],
                ]
            self.cell_dofs = cd
            coords = np.empty((self.n_dofs, 2))
            coords[:nv] = mesh.nodes
            for (a, b), d in edge_dof.items():
                coords[d] = 0.5 * (mesh.nodes[a] + mesh.nodes[b])
            coords[nv + ne:] = mesh.nodes[cells].mean(axis=1)
            self.dof_coords = coords
        self._edge_dof = edge_dof

        bd = {}
        for (a, b), tag in zip(mesh.boundary_edge_nodes, mesh.boundary_edge_tags):
            dofs = bd.setdefault(tag, set())
            dofs.update((int(a), int(b)))
            if degree == 2:
                dofs.add(self._edge_dof[tuple(sorted((int(a), int(b))))])
        self.boundary_dofs = {
            tag: np.array(sorted(dofs), dtype=int) for tag, dofs in bd.items()
        }

    # -- cell tabulations --------------------------------------------------

    def _tabulate_cells(self):
        qp, qw = _gauss_cell(3)
        self.quad_points_ref = qp
        self.quad_weights = qw
        corners = self.mesh.nodes[self.mesh.cells]
        Ngeo, dNgeo = _geometry_basis(qp)
        self.X = np.einsum("iq,cid->cqd", Ngeo, corners)
        _, detJ, invJ = _jacobians(corners, dNgeo)
        if np.any(detJ <= 0.0):
            raise ValueError("nonpositive Jacobian in mesh")
        self.wdetJ = qw[None, :] * detJ
        N, dN = tabulate_basis(self.degree, qp)
        self.N = N
        self.G = np.einsum("lqr,cqrd->cqld", dN, invJ)
        self.n_quad = qp.shape[0]
        self.n_loc = N.shape[0]

    def _tabulate_boundary(self):
        mesh = self.mesh
        t, w = _GAUSS_1D[3]
        nbe = mesh.boundary_edge_nodes.shape[0]
        nqe = t.size
        nloc = self.n_loc
        self.be_dofs = self.cell_dofs[mesh.boundary_edge_cells]
        self.be_N = np.empty((nbe, nloc, nqe))
        self.be_G = np.empty((nbe, nqe, nloc, 2))
        self.be_X = np.empty((nbe, nqe, 2))
        self.be_w = np.empty((nbe, nqe))
        self.be_normal = np.empty((nbe, 2))
        for e, ((a, b), c) in enumerate(
            zip(mesh.boundary_edge_nodes, mesh.boundary_edge_cells)
        ):
            quad = mesh.cells[c]
            side = next(
                k for k in range(4)
                if quad[k] == a and quad[(k + 1) % 4] == b
            )
            pts = _side_points(side, t)
            N, dN = tabulate_basis(self.degree, pts)
            corners = mesh.nodes[quad][None]
            Ngeo, dNgeo = _geometry_basis(pts)
            _, _, invJ = _jacobians(corners, dNgeo)
            self.be_N[e] = N
            self.be_G[e] = np.einsum("lqr,qrd->qld", dN, invJ[0])
            self.be_X[e] = np.einsum("iq,id->qd", Ngeo, mesh.nodes[quad])
            v = mesh.nodes[b] - mesh.nodes[a]
            length = float(np.hypot(v[0], v[1]))
            self.be_w[e] = w * 0.5 * length
            self.be_normal[e] = np.array([v[1], -v[0]]) / length

    def dirichlet_dofs(self, tags):
        """Union of boundary dofs over ``tags`` (each tag must exist)."""
        out = set()
        for tag in tags:
            if tag not in self.boundary_dofs:
                raise KeyError(
                    f"tag {tag!r} not on mesh; have {sorted(self.boundary_dofs)}"
                )
            out.update(self.boundary_dofs[tag].tolist())
        return np.array(sorted(out), dtype=int)


def fe_space(mesh, degree):
    """Build a :class:`FeSpace` of the given polynomial degree on ``mesh``."""
    return FeSpace(mesh, degree)


@dataclass
class BoundaryConditions:
    """Boundary treatment for the coupled system.

    ``p_dirichlet``/``s_dirichlet`` map boundary tags to data callables
    ``g(x, y, t)``; every other tag gets the natural zero-flux condition.
    ``s_outflow`` lists tags where the aqueous advective flux
    ``lambda_a * kappa * grad(p) . n`` (from the freshly computed pressure) is
    added to the saturation equation.  ``pin_pressure`` fixes dof 0 of the
    pressure to zero when no pressure Dirichlet data exists (pure-flux runs).
    """

    p_dirichlet: dict = field(default_factory=dict)
    s_dirichlet: dict = field(default_factory=dict)
    s_outflow: tuple = ()
    pin_pressure: bool = False


def _as_bc_callable(g):
    if callable(g):
        return g
    return lambda x, y, t, _v=float(g): np.full_like(np.asarray(x, dtype=float), _v)


# -- field evaluation ------------------------------------------------------


def evaluate_at_quadrature(space, dofs):
    """Values and gradients of a dof vector at all cell quadrature points.

    Returns ``(vals, grads)`` of shapes (ncells, nq) and (ncells, nq, 2).
    """
    ud = dofs[space.cell_dofs]
    vals = np.einsum("cl,lq->cq", ud, space.N)
    grads = np.einsum("cl,cqld->cqd", ud, space.G)
    return vals, grads


def quadrature_integral(space, values):
    """Integrate per-quadrature-point values over the domain."""
    return float(np.sum(space.wdetJ * values))


def interpolate(space, fn, t=0.0):
    """Nodal interpolant of ``fn(x, y, t)`` as a dof vector."""
    x, y = space.dof_coords[:, 0], space.dof_coords[:, 1]
    return np.asarray(fn(x, y, t), dtype=float)


def l2_norm(space, dofs):
    vals, _ = evaluate_at_quadrature(space, dofs)
    return float(np.sqrt(np.sum(space.wdetJ * vals**2)))


def l2_error(space, dofs, exact, t):
    """L2 distance between a dof vector and a callable ``exact(x, y, t)``."""
    vals, _ = evaluate_at_quadrature(space, dofs)
    ex = exact(space.X[..., 0], space.X[..., 1], t)
    return float(np.sqrt(np.sum(space.wdetJ * (vals - ex) ** 2)))


def energy_integral(space, model, dofs):
    """Free energy ``int phi * F(s)`` of a saturation dof vector."""
    if model.energy is None:
        raise ValueError("model carries no mixing energy")
    vals, _ = evaluate_at_quadrature(space, dofs)
    dens = physics.free_energy_density(model.energy, vals)
    return float(np.sum(space.wdetJ * model.porosity * dens))


# -- assembly kernels --------------------------------------------------------


def _scatter_matrix(space, local):
    nloc = space.n_loc
    rows = np.repeat(space.cell_dofs, nloc, axis=1).ravel()
    cols = np.tile(space.cell_dofs, (1, nloc)).ravel()
    return linalg.assemble_from_triplets(rows, cols, local.ravel(), space.n_dofs)


def stiffness_matrix(space, coef):
    """CSR matrix of ``int coef grad(u).grad(v)``; coef per (cell, quad)."""
    local = np.einsum(
        "cq,cqid,cqjd->cij", coef * space.wdetJ, space.G, space.G
    )
    return _scatter_matrix(space, local)


def mass_matrix(space, coef=1.0):
    """CSR matrix of ``int coef u v``; coef scalar or per (cell, quad)."""
    local = np.einsum("cq,iq,jq->cij", coef * space.wdetJ, space.N, space.N)
    return _scatter_matrix(space, local)


def load_vector(space, fn, t):
    """Load vector of a callable source ``fn(x, y, t)``."""
    vals = fn(space.X[..., 0], space.X[..., 1], t)
    return load_vector_from_values(space, vals)


def load_vector_from_values(space, values):
    """Load vector of per-(cell, quad) source values."""
    local = np.einsum("cq,iq->ci", values * space.wdetJ, space.N)
    b = np.zeros(space.n_dofs)
    np.add.at(b, space.cell_dofs, local)
    return b


def gradient_load_vector(space, vec_values):
    """Load vector of ``int vec . grad(v)`` for per-point 2-vectors."""
    local = np.einsum("cqd,cqid->ci", vec_values * space.wdetJ[..., None], space.G)
    b = np.zeros(space.n_dofs)
    np.add.at(b, space.cell_dofs, local)
    return b


def evaluate_on_boundary(space, dofs, edge_idx):
    """Values and gradients of a dof vector at boundary-edge quad points."""
    ud = dofs[space.be_dofs[edge_idx]]
    vals = np.einsum("el,elq->eq", ud, space.be_N[edge_idx])
    grads = np.einsum("el,eqld->eqd", ud, space.be_G[edge_idx])
    return vals, grads


def boundary_advective_load(space, edge_idx, flux_values):
    """Load vector ``<flux, v>`` over the given boundary edges.

    flux_values: per-(edge, edge-quad) scalar already including the normal
    projection.
    """
    local = np.einsum(
        "eq,elq->el", flux_values * space.be_w[edge_idx], space.be_N[edge_idx]
    )
    b = np.zeros(space.n_dofs)
    np.add.at(b, space.be_dofs[edge_idx], local)
    return b


def apply_dirichlet(matrix, rhs, dofs, values):
    """Symmetric elimination of Dirichlet dofs.

    Zeroes the constrained rows and columns, moves the column contribution to
    the right-hand side, and places a unit diagonal so the constrained
    unknowns attain exactly ``values``.
    """
    from scipy import sparse

    n = rhs.shape[0]
    if len(dofs) == 0:
        return matrix.tocsr(), rhs.copy()
    lift = np.zeros(n)
    lift[dofs] = values
    b = rhs - matrix @ lift
    keep = np.ones(n)
    keep[dofs] = 0.0
    P = sparse.diags(keep)
    fixed = np.zeros(n)
    fixed[dofs] = 1.0
    A = (P @ matrix @ P + sparse.diags(fixed)).tocsr()
    A.eliminate_zeros()
    b = keep * b
    b[dofs] = values
    return A, b


def _collect_dirichlet(space, spec, t):
    """Flatten a tag->callable Dirichlet spec into (dofs, values)."""
    dofs, vals = [], []
    for tag in sorted(spec):
        g = _as_bc_callable(spec[tag])
        d = space.dirichlet_dofs([tag])
        coords = space.dof_coords[d]
        dofs.append(d)
        vals.append(np.asarray(g(coords[:, 0], coords[:, 1], t), dtype=float))
    if not dofs:
        return np.array([], dtype=int), np.array([])
    dofs = np.concatenate(dofs)
    vals = np.concatenate(vals)
    # deduplicate dofs shared by adjacent tags (first tag in sort order wins)
    _, first = np.unique(dofs, return_index=True)
    return dofs[first], vals[first]


# -- weak forms ------------------------------------------------------------


def _kappa_q(space):
    return space.mesh.cell_permeability[:, None]


def assemble_pressure(space, model, s_frozen, source, bc, t):
    """Pressure system ``(lambda kappa grad p, grad v) = rhs`` at time t.

    rhs = (q, v) + (lambda_a kappa p_c'(s) grad s_frozen, grad v) with all
    coefficients frozen at ``s_frozen``; Dirichlet data from ``bc`` at time t.
    Returns (matrix, rhs) ready to solve.
    """
    s_q, grad_s = evaluate_at_quadrature(space, s_frozen)
    kap = _kappa_q(space)
    lam_t = physics.mobility(model, "total", s_q) * kap
    A = stiffness_matrix(space, lam_t)
    b = np.zeros(space.n_dofs)
    if source is not None:
        b += load_vector(space, source, t)
    coef = physics.mobility(model, "a", s_q) * kap * model.capillary.derivative(s_q)
    b += gradient_load_vector(space, coef[..., None] * grad_s)

    dofs, vals = _collect_dirichlet(space, bc.p_dirichlet, t)
    if dofs.size == 0 and bc.pin_pressure:
        dofs, vals = np.array([0]), np.array([0.0])
    return apply_dirichlet(A, b, dofs, vals)


def assemble_saturation(space, model, s_frozen, s_prev, p_new, theta_tau,
                        source_a, bc, t):
    """Implicit saturation system of one subiteration at time t.

    ``(phi s/(theta tau), w) + (K_a(s_frozen) grad s, grad w) = (q_a, w)
    + (phi s_prev/(theta tau), w) - (B_a(s_frozen) grad p_new, grad w)
    + outflow boundary term``, with ``K_a = -lambda_a kappa p_c'`` and
    ``B_a = lambda_a kappa``.  Returns (matrix, rhs).
    """
    s_q, _ = evaluate_at_quadrature(space, s_frozen)
    sp_q, _ = evaluate_at_quadrature(space, s_prev)
    _, grad_p = evaluate_at_quadrature(space, p_new)
    kap = _kappa_q(space)
    lam_a = physics.mobility(model, "a", s_q)
    ka = -lam_a * kap * model.capillary.derivative(s_q)

    scale = model.porosity / theta_tau
    if "mass" not in space.cache:
        space.cache["mass"] = mass_matrix(space)
    A = scale * space.cache["mass"] + stiffness_matrix(space, ka)

    b = np.zeros(space.n_dofs)
    if source_a is not None:
        b += load_vector(space, source_a, t)
    b += load_vector_from_values(space, scale * sp_q)
    b -= gradient_load_vector(space, (lam_a * kap)[..., None] * grad_p)

    for tag in bc.s_outflow:
        edges = _tag_edge_indices(space, tag)
        s_e, _ = evaluate_on_boundary(space, s_frozen, edges)
        _, gp_e = evaluate_on_boundary(space, p_new, edges)
        kap_e = space.mesh.cell_permeability[
            space.mesh.boundary_edge_cells[edges]
        ][:, None]
        flux = (
            physics.mobility(model, "a", s_e)
            * kap_e
            * np.einsum("eqd,ed->eq", gp_e, space.be_normal[edges])
        )
        b += boundary_advective_load(space, edges, flux)

    dofs, vals = _collect_dirichlet(space, bc.s_dirichlet, t)
    return apply_dirichlet(A, b, dofs, vals)


def _tag_edge_indices(space, tag):
    from .mesh import boundary_edges_with_tag

    return boundary_edges_with_tag(space.mesh, tag)


def evaluate_at_points(space, dofs, pts):
    """Evaluate a dof vector at physical points of a structured mesh.

    Points outside the domain (e.g. inside cutouts) give NaN.
    """
    info = space.mesh.info
    if "xs" not in info:
        raise ValueError("point evaluation needs structured mesh metadata")
    xs, ys = info["xs"], info["ys"]
    cell_of_ij = info["cell_of_ij"]
    pts = np.asarray(pts, dtype=float)
    out = np.full(pts.shape[0], np.nan)
    for idx, (x, y) in enumerate(pts):
        i = int(np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 2))
        j = int(np.clip(np.searchsorted(ys, y, side="right") - 1, 0, len(ys) - 2))
        c = cell_of_ij.get((i, j))
        if c is None:
            continue
        xi = 2.0 * (x - xs[i]) / (xs[i + 1] - xs[i]) - 1.0
        eta = 2.0 * (y - ys[j]) / (ys[j + 1] - ys[j]) - 1.0
        N, _ = tabulate_basis(space.degree, np.array([[xi, eta]]))
        out[idx] = float(N[:, 0] @ dofs[space.cell_dofs[c]])
    return out
