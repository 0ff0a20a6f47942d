"""Taylor-Hood spaces and assembly of all weak forms of the problem.

Velocity is vector P2 (nodes at vertices and edge midpoints, dofs interleaved
as 2*node+component), pressure is P1 on vertices.  Triangle integrals use a
degree-6 Gauss rule (exact for the degree-5 convection integrand), interface
edge integrals a 3-point Gauss rule (degree 5).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import (
    DIRICHLET_TAGS,
    TAG_INTERFACE,
    TriMesh,
)

# ---------------------------------------------------------------------------
# quadrature and shape functions
# ---------------------------------------------------------------------------

def _dunavant6():
    """12-point degree-6 rule on the reference triangle, weights sum to 1/2."""
    a1, w1 = 0.063089014491502, 0.025422453185103
    a2, w2 = 0.249286745170910, 0.058393137863189
    a3, b3, w3 = 0.310352451033785, 0.053145049844816, 0.041425537809187
    pts = []
    wts = []
    for a, w in ((a1, w1), (a2, w2)):
        pts += [(a, a), (1 - 2 * a, a), (a, 1 - 2 * a)]
        wts += [w] * 3
    c3 = 1 - a3 - b3
    pts += [(a3, b3), (b3, a3), (a3, c3), (c3, a3), (b3, c3), (c3, b3)]
    wts += [w3] * 6
    return np.array(pts), np.array(wts)

TRI_QP, TRI_QW = _dunavant6()

# 3-point Gauss-Legendre on [-1, 1], exact to degree 5
EDGE_QP = np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)])
EDGE_QW = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])


def p2_shape(xi, eta):
    """P2 values and reference gradients at one point: (6,), (6, 2)."""
    l1 = 1 - xi - eta
    n = np.array([
        l1 * (2 * l1 - 1),
        xi * (2 * xi - 1),
        eta * (2 * eta - 1),
        4 * l1 * xi,
        4 * xi * eta,
        4 * eta * l1,
    ])
    dn = np.array([
        [1 - 4 * l1, 1 - 4 * l1],
        [4 * xi - 1, 0.0],
        [0.0, 4 * eta - 1],
        [4 * (l1 - xi), -4 * xi],
        [4 * eta, 4 * xi],
        [-4 * eta, 4 * (l1 - eta)],
    ])
    return n, dn


def p1_shape(xi, eta):
    n = np.array([1 - xi - eta, xi, eta])
    dn = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return n, dn


# tabulate at triangle quadrature points: (6, nq), (6, 2, nq), (3, nq)
_P2N = np.empty((6, len(TRI_QW)))
_P2G = np.empty((6, 2, len(TRI_QW)))
_P1N = np.empty((3, len(TRI_QW)))
_P1G = np.empty((3, 2, len(TRI_QW)))
for _q, (_xi, _eta) in enumerate(TRI_QP):
    _P2N[:, _q], _P2G[:, :, _q] = p2_shape(_xi, _eta)
    _P1N[:, _q], _P1G[:, :, _q] = p1_shape(_xi, _eta)

# 1D quadratic shapes on [-1, 1] with nodes (-1, 0, +1)
_E_N = np.array([
    0.5 * EDGE_QP * (EDGE_QP - 1.0),
    1.0 - EDGE_QP**2,
    0.5 * EDGE_QP * (EDGE_QP + 1.0),
])  # (3, nq)


# ---------------------------------------------------------------------------
# space
# ---------------------------------------------------------------------------

@dataclass
class FieldCoeffs:
    """Coefficient vector of one field bound to its space."""

    values: np.ndarray
    space_kind: str  # velocity | pressure | trace
    space: object = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        dim = self.space.dim_of(self.space_kind) if self.space is not None else None
        if dim is not None and self.values.shape != (dim,):
            raise ValueError(
                f"{self.space_kind} field has {self.values.shape}, expected ({dim},)"
            )

    def copy(self):
        return FieldCoeffs(self.values.copy(), self.space_kind, self.space)


class TaylorHoodSpace:
    """Degree-of-freedom maps for one subdomain mesh.

    Scalar P2 nodes are the vertices followed by edge midpoints; velocity
    dof = 2*node + component.  Pressure dofs are the vertices.  Interface
    velocity dofs are ordered along the interface traversal so that both
    subdomain spaces index the shared trace space identically.
    """

    def __init__(self, mesh: TriMesh, interface_edges=None):
        self.mesh = mesh
        nv = mesh.n_vertices
        tris = mesh.triangles

        edge_ids = {}
        conn = np.empty((mesh.n_triangles, 6), dtype=np.int64)
        conn[:, :3] = tris
        for t, (a, b, c) in enumerate(tris):
            for k, (i, j) in enumerate(((a, b), (b, c), (c, a))):
                key = (min(i, j), max(i, j))
                if key not in edge_ids:
                    edge_ids[key] = nv + len(edge_ids)
                conn[t, 3 + k] = edge_ids[key]
        self.n_edges = len(edge_ids)
        self.conn = conn
        self.edge_midnode = edge_ids

        self.n_scalar = nv + self.n_edges
        self.n_u = 2 * self.n_scalar
        self.n_p = nv

        coords = np.empty((self.n_scalar, 2))
        coords[:nv] = mesh.vertices
        for (i, j), m in edge_ids.items():
            coords[m] = 0.5 * (mesh.vertices[i] + mesh.vertices[j])
        self.p2_coords = coords

        # nodes per boundary tag (vertices plus boundary-edge midpoints)
        self.tag_nodes = {}
        for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
            key = (min(a, b), max(a, b))
            nodes = self.tag_nodes.setdefault(tag, set())
            nodes.update((a, b, edge_ids[key]))
        self.tag_nodes = {t: np.array(sorted(s), dtype=np.int64) for t, s in self.tag_nodes.items()}

        dir_nodes = set()
        for tag in DIRICHLET_TAGS:
            dir_nodes.update(self.tag_nodes.get(tag, ()))
        self.dirichlet_nodes = np.array(sorted(dir_nodes), dtype=np.int64)
        self.dirichlet_dofs = np.sort(
            np.concatenate([2 * self.dirichlet_nodes, 2 * self.dirichlet_nodes + 1])
        ) if len(dir_nodes) else np.empty(0, dtype=np.int64)

        # ordered interface trace nodes
        if interface_edges is None:
            sel = [k for k, t in enumerate(mesh.boundary_tags) if t == TAG_INTERFACE]
            interface_edges = mesh.boundary_edges[sel]
        self.interface_edges = np.asarray(interface_edges, dtype=np.int64)
        if len(self.interface_edges):
            nodes = [self.interface_edges[0, 0]]
            for a, b in self.interface_edges:
                key = (min(a, b), max(a, b))
                nodes += [edge_ids[key], b]
            self.interface_nodes = np.array(nodes, dtype=np.int64)
        else:
            self.interface_nodes = np.empty(0, dtype=np.int64)
        iface_dofs = np.empty(2 * len(self.interface_nodes), dtype=np.int64)
        iface_dofs[0::2] = 2 * self.interface_nodes
        iface_dofs[1::2] = 2 * self.interface_nodes + 1
        self.interface_dofs = iface_dofs
        self.trace_dim = len(iface_dofs)

        free = np.ones(self.n_u, dtype=bool)
        free[self.dirichlet_dofs] = False
        self.free_velocity = free

        # geometry cache for assembly
        p = mesh.vertices[tris]
        jac = np.empty((mesh.n_triangles, 2, 2))
        jac[:, :, 0] = p[:, 1] - p[:, 0]
        jac[:, :, 1] = p[:, 2] - p[:, 0]
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1]
        inv[:, 1, 1] = jac[:, 0, 0]
        inv[:, 0, 1] = -jac[:, 0, 1]
        inv[:, 1, 0] = -jac[:, 1, 0]
        inv /= det[:, None, None]
        self._detJ = det
        # physical gradients of P2/P1 at all quad points: (nt, 6, 2, nq)
        self._gradP2 = np.einsum("tba,ibq->tiaq", inv, _P2G)
        self._gradP1 = np.einsum("tba,ibq->tiaq", inv, _P1G)
        self._wdet = TRI_QW[None, :] * det[:, None]  # (nt, nq)

        # velocity dof connectivity per component: (nt, 6)
        self._udof = [2 * conn + c for c in (0, 1)]

    def dim_of(self, kind):
        return {"velocity": self.n_u, "pressure": self.n_p, "trace": self.trace_dim}[kind]

    def zero_velocity(self):
        return FieldCoeffs(np.zeros(self.n_u), "velocity", self)

    def zero_pressure(self):
        return FieldCoeffs(np.zeros(self.n_p), "pressure", self)

    def zero_trace(self):
        return FieldCoeffs(np.zeros(self.trace_dim), "trace", self)

    def velocity_at_quadrature(self, u):
        """Velocity components at all triangle quad points: (nt, 2, nq)."""
        vals = np.empty((self.mesh.n_triangles, 2, len(TRI_QW)))
        for c in (0, 1):
            coeff = u[self._udof[c]]  # (nt, 6)
            vals[:, c] = np.einsum("ti,iq->tq", coeff, _P2N)
        return vals

    def velocity_gradient_at_quadrature(self, u):
        """d u_a / d x_b at quad points: (nt, 2, 2, nq) indexed [t, a, b, q]."""
        g = np.empty((self.mesh.n_triangles, 2, 2, len(TRI_QW)))
        for a in (0, 1):
            coeff = u[self._udof[a]]
            g[:, a] = np.einsum("ti,tibq->tbq", coeff, self._gradP2)
        return g

    def dirichlet_values(self, bc_values, t=0.0):
        """Nodal velocity vector holding the prescribed data, zero elsewhere.

        bc_values maps tag -> callable(x, y, t) -> (ux, uy).  When several
        Dirichlet tags meet at a node, dirichlet_wall takes precedence (the
        lid/inlet data is dropped at shared corner nodes).
        """
        vals = np.zeros(self.n_u)
        order = [t_ for t_ in ("dirichlet_inlet", "dirichlet_lid", "dirichlet_wall")
                 if t_ in self.tag_nodes]
        for tag in order:
            if tag not in bc_values:
                raise KeyError(f"missing Dirichlet values for tag {tag!r}")
            fn = bc_values[tag]
            for node in self.tag_nodes[tag]:
                ux, uy = fn(*self.p2_coords[node], t)
                vals[2 * node] = ux
                vals[2 * node + 1] = uy
        return vals


def _scatter(rows, cols, vals, shape):
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()


def _scalar_to_vector(mat_scalar, n_u):
    """Expand a scalar P2 operator to both interleaved velocity components."""
    coo = mat_scalar.tocoo()
    rows = np.concatenate([2 * coo.row, 2 * coo.row + 1])
    cols = np.concatenate([2 * coo.col, 2 * coo.col + 1])
    vals = np.concatenate([coo.data, coo.data])
    return sp.coo_matrix((vals, (rows, cols)), shape=(n_u, n_u)).tocsr()


# ---------------------------------------------------------------------------
# bilinear forms
# ---------------------------------------------------------------------------

def _p2_rows_cols(space):
    conn = space.conn
    rows = np.repeat(conn, 6, axis=1)
    cols = np.tile(conn, (1, 6))
    return rows, cols


def assemble_mass_scalar(space):
    ke = np.einsum("tq,iq,jq->tij", space._wdet, _P2N, _P2N)
    rows, cols = _p2_rows_cols(space)
    return _scatter(rows, cols, ke, (space.n_scalar, space.n_scalar))


def assemble_mass(space):
    """Velocity mass matrix: (j,k) -> integral of phi_k . phi_j."""
    return _scalar_to_vector(assemble_mass_scalar(space), space.n_u)


def assemble_stiffness_scalar(space):
    ke = np.einsum("tq,tiaq,tjaq->tij", space._wdet, space._gradP2, space._gradP2)
    rows, cols = _p2_rows_cols(space)
    return _scatter(rows, cols, ke, (space.n_scalar, space.n_scalar))


def assemble_stiffness(space, nu=1.0):
    """Viscous term: nu * (grad u, grad v)."""
    if nu <= 0:
        raise ValueError("viscosity must be positive")
    return nu * _scalar_to_vector(assemble_stiffness_scalar(space), space.n_u)


def assemble_divergence(space):
    """b(v, q) = -(div v, q): rows are pressure dofs, columns velocity dofs."""
    blocks = []
    rows = np.repeat(space.mesh.triangles, 6, axis=1)  # (nt, 18)
    for c in (0, 1):
        ke = -np.einsum("tq,jq,tiq->tji", space._wdet, _P1N, space._gradP2[:, :, c, :])
        cols = np.tile(space._udof[c], (1, 3))
        blocks.append(_scatter(rows, cols, ke, (space.n_p, space.n_u)))
    return (blocks[0] + blocks[1]).tocsr()


def assemble_pressure_mass(space):
    ke = np.einsum("tq,iq,jq->tij", space._wdet, _P1N, _P1N)
    tris = space.mesh.triangles
    rows = np.repeat(tris, 3, axis=1)
    cols = np.tile(tris, (1, 3))
    return _scatter(rows, cols, ke, (space.n_p, space.n_p))


def _conv_c1_scalar(space, wq):
    """C1s[j,k] = int (w . grad N_k) N_j with w given at quad points."""
    adv = np.einsum("tcq,tkcq->tkq", wq, space._gradP2)  # (nt, 6, nq)
    ke = np.einsum("tq,jq,tkq->tjk", space._wdet, _P2N, adv)
    rows, cols = _p2_rows_cols(space)
    return _scatter(rows, cols, ke, (space.n_scalar, space.n_scalar))


def _mass_weighted_scalar(space, fq):
    """int f N_j N_k for a scalar factor f at quad points (nt, nq)."""
    ke = np.einsum("tq,tq,jq,kq->tjk", space._wdet, fq, _P2N, _P2N)
    rows, cols = _p2_rows_cols(space)
    return _scatter(rows, cols, ke, (space.n_scalar, space.n_scalar))


def _ngradn_weighted_scalar(space, fq, b):
    """int f N_k dN_j/dx_b for scalar f at quad points."""
    ke = np.einsum("tq,tq,tjq,kq->tjk", space._wdet, fq, space._gradP2[:, :, b, :], _P2N)
    rows, cols = _p2_rows_cols(space)
    return _scatter(rows, cols, ke, (space.n_scalar, space.n_scalar))


def _blocks_to_vector(blocks, n_u):
    """Assemble a 2x2 block structure of scalar matrices into velocity dofs."""
    rows_all, cols_all, vals_all = [], [], []
    for (a, b), mat in blocks.items():
        coo = mat.tocoo()
        rows_all.append(2 * coo.row + a)
        cols_all.append(2 * coo.col + b)
        vals_all.append(coo.data)
    return sp.coo_matrix(
        (np.concatenate(vals_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
        shape=(n_u, n_u),
    ).tocsr()


def assemble_convection(space, w, skew=False):
    """Convection matrices linearised around the velocity field w.

    Returns (C1, C2): C1[j,k] = c(w, phi_k, phi_j) and C2[j,k] =
    c(phi_k, w, phi_j); with skew=True both use the antisymmetrised form
    instead, so that v^T C1 v = 0 identically.
    """
    wvec = w.values if isinstance(w, FieldCoeffs) else np.asarray(w, float)
    if wvec.shape != (space.n_u,):
        raise ValueError(f"velocity field has shape {wvec.shape}, expected ({space.n_u},)")
    wq = space.velocity_at_quadrature(wvec)
    gradw = space.velocity_gradient_at_quadrature(wvec)  # [t, a, b, q]

    c1s = _conv_c1_scalar(space, wq)
    c1 = _scalar_to_vector(c1s, space.n_u)

    c2_blocks = {
        (a, b): _mass_weighted_scalar(space, gradw[:, a, b, :]) for a in (0, 1) for b in (0, 1)
    }
    c2 = _blocks_to_vector(c2_blocks, space.n_u)

    if not skew:
        return c1, c2

    # C3[j,k] = c(phi_k, phi_j, w) = int N_k dN_j/dx_b w_a on block (a, b)
    c3_blocks = {
        (a, b): _ngradn_weighted_scalar(space, wq[:, a, :], b) for a in (0, 1) for b in (0, 1)
    }
    c3 = _blocks_to_vector(c3_blocks, space.n_u)
    c1_skew = 0.5 * (c1 - c1.T)
    c2_skew = 0.5 * (c2 - c3)
    return c1_skew.tocsr(), c2_skew.tocsr()


def convection_value(space, u, w, v):
    """Direct quadrature of c(u, w, v) = int (u . grad w) . v, for testing."""
    uq = space.velocity_at_quadrature(np.asarray(u, float))
    gw = space.velocity_gradient_at_quadrature(np.asarray(w, float))
    vq = space.velocity_at_quadrature(np.asarray(v, float))
    integrand = np.einsum("tbq,tabq,taq->tq", uq, gw, vq)
    return float(np.sum(space._wdet * integrand))


# ---------------------------------------------------------------------------
# interface coupling
# ---------------------------------------------------------------------------

def _edge_lengths(space):
    verts = space.mesh.vertices
    e = space.interface_edges
    return np.linalg.norm(verts[e[:, 1]] - verts[e[:, 0]], axis=1)


def _trace_local_dofs(space):
    """Trace dof indices of the 3 scalar nodes of interface edge k: (ne, 3)."""
    out = np.empty((len(space.interface_edges), 3), dtype=np.int64)
    for k in range(len(space.interface_edges)):
        out[k] = (2 * k, 2 * k + 1, 2 * k + 2)
    return out


def assemble_interface_coupling(space):
    """Trace-space operators on the interface.

    Returns (T_int, M_gamma): T_int maps trace coefficients to a velocity
    load vector via edge quadrature of g . v; M_gamma is the trace-space
    mass matrix.  Trace dofs are interleaved (2*trace_node + component) in
    interface traversal order, shared between the two subdomain spaces.
    """
    ne = len(space.interface_edges)
    if ne == 0:
        raise ValueError("space has no interface edges")
    lengths = _edge_lengths(space)
    loc = _trace_local_dofs(space)  # scalar trace-node ids per edge

    me = np.einsum("q,iq,jq->ij", EDGE_QW, _E_N, _E_N)  # 3x3 reference mass
    rows = np.repeat(loc, 3, axis=1)
    cols = np.tile(loc, (1, 3))
    vals = 0.5 * lengths[:, None, None] * me[None]
    mg_scalar = _scatter(rows, cols, vals, (space.trace_dim // 2, space.trace_dim // 2))
    mg = _scalar_to_vector(mg_scalar, space.trace_dim)

    # velocity P2 nodes on edge k, in trace order (start, midpoint, end)
    vel_nodes = np.empty((ne, 3), dtype=np.int64)
    for k, (a, b) in enumerate(space.interface_edges):
        key = (min(a, b), max(a, b))
        vel_nodes[k] = (a, space.edge_midnode[key], b)

    rows_v = np.repeat(vel_nodes, 3, axis=1)
    cols_t = np.tile(loc, (1, 3))
    t_scalar = sp.coo_matrix(
        (vals.ravel(), (rows_v.ravel(), cols_t.ravel())),
        shape=(space.n_scalar, space.trace_dim // 2),
    ).tocsr()
    coo = t_scalar.tocoo()
    t_int = sp.coo_matrix(
        (
            np.concatenate([coo.data, coo.data]),
            (
                np.concatenate([2 * coo.row, 2 * coo.row + 1]),
                np.concatenate([2 * coo.col, 2 * coo.col + 1]),
            ),
        ),
        shape=(space.n_u, space.trace_dim),
    ).tocsr()
    return t_int, mg


def interface_l2_pairing(space, vel, trace):
    """Direct edge quadrature of int_Gamma0 v . g, for testing."""
    vel = np.asarray(vel, float)
    trace = np.asarray(trace, float)
    total = 0.0
    for k, (a, b) in enumerate(space.interface_edges):
        key = (min(a, b), max(a, b))
        nodes = (a, space.edge_midnode[key], b)
        length = np.linalg.norm(space.mesh.vertices[b] - space.mesh.vertices[a])
        for c in (0, 1):
            vloc = np.array([vel[2 * n + c] for n in nodes])
            gloc = np.array([trace[2 * (2 * k + i) + c] for i in range(3)])
            vq = vloc @ _E_N
            gq = gloc @ _E_N
            total += 0.5 * length * np.sum(EDGE_QW * vq * gq)
    return total


def trace_restriction(space):
    """Selection matrix E with (E u)[k] = u[interface_dofs[k]]."""
    p = space.trace_dim
    return sp.coo_matrix(
        (np.ones(p), (np.arange(p), space.interface_dofs)), shape=(p, space.n_u)
    ).tocsr()


# ---------------------------------------------------------------------------
# Dirichlet elimination
# ---------------------------------------------------------------------------

def apply_dirichlet(matrix, rhs, dofs, values):
    """Symmetric row/column elimination with lifting into the right side.

    Constrained rows and columns are zeroed, the diagonal set to one, the
    prescribed values moved to the right-hand side; constrained rhs entries
    hold the prescribed values exactly.
    """
    dofs = np.asarray(dofs, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    n = matrix.shape[0]
    lift = np.zeros(n)
    lift[dofs] = values
    rhs = rhs - matrix @ lift

    keep = np.ones(n, dtype=float)
    keep[dofs] = 0.0
    diag = sp.diags(keep)
    pins = np.zeros(n)
    pins[dofs] = 1.0
    out = (diag @ matrix @ diag + sp.diags(pins)).tocsr()
    rhs[dofs] = values
    return out, rhs


@dataclass
class AssembledForms:
    """All constant operators of one subdomain problem."""

    M: sp.csr_matrix          # velocity mass
    A: sp.csr_matrix          # nu * stiffness
    K: sp.csr_matrix          # unit-viscosity stiffness
    B: sp.csr_matrix          # divergence coupling (pressure rows)
    Mp: sp.csr_matrix         # pressure mass
    Mgamma: sp.csr_matrix = None
    T_int: sp.csr_matrix = None
    f: np.ndarray = None

    @classmethod
    def build(cls, space, nu, with_interface=True):
        k = assemble_stiffness(space, 1.0)
        forms = cls(
            M=assemble_mass(space),
            A=(nu * k).tocsr(),
            K=k,
            B=assemble_divergence(space),
            Mp=assemble_pressure_mass(space),
            f=np.zeros(space.n_u),
        )
        if with_interface and len(space.interface_edges):
            forms.T_int, forms.Mgamma = assemble_interface_coupling(space)
        return forms
