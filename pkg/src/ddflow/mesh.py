"""Structured triangulations of the two benchmark geometries.

Both domains are meshed with a fixed-grid strategy: every grid rectangle is
split along its lower-left/upper-right diagonal, so the two subdomain meshes
conform along the shared interface by construction (the interface is a grid
line and both sides reuse the same 1D subdivision).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TAG_INLET = "dirichlet_inlet"
TAG_WALL = "dirichlet_wall"
TAG_LID = "dirichlet_lid"
TAG_OUTLET = "neumann_outlet"
TAG_INTERFACE = "interface"

DIRICHLET_TAGS = (TAG_INLET, TAG_WALL, TAG_LID)
ALL_TAGS = (TAG_INLET, TAG_WALL, TAG_LID, TAG_OUTLET, TAG_INTERFACE)

# geometric tolerance for matching grid coordinates across meshes
PAIRING_TOL = 1e-12


@dataclass
class TriMesh:
    """Triangulated subdomain with tagged boundary edges.

    vertices   : (nv, 2) coordinates in cm
    triangles  : (nt, 3) vertex indices, counter-clockwise
    boundary_edges : (nb, 2) vertex-index pairs on the boundary
    boundary_tags  : list of nb tag strings, parallel to boundary_edges
    subdomain_id   : 1 or 2 (0 for a monolithic mesh)
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: list = field(default_factory=list)
    subdomain_id: int = 0

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.boundary_edges = np.ascontiguousarray(self.boundary_edges, dtype=np.int64)
        for a in (self.vertices, self.triangles, self.boundary_edges):
            a.flags.writeable = False

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def signed_areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def total_area(self):
        return float(np.sum(self.signed_areas()))


@dataclass
class InterfaceMap:
    """Pairing of the shared-interface discretisations of two meshes.

    edges_1 / edges_2 : (k, 2) vertex pairs per mesh, both traversing the
    interface in the same geometric order.  vertex_pairing is an (m, 2)
    array of (mesh-1 vertex, mesh-2 vertex) rows, also in traversal order.
    """

    edges_1: np.ndarray
    edges_2: np.ndarray
    vertex_pairing: np.ndarray

    @property
    def n_edges(self):
        return self.edges_1.shape[0]


class MeshError(ValueError):
    pass


def _segment_counts(lengths, density):
    """Cells per axis segment: round(length*density), at least 1 each."""
    return [max(1, int(round(l * density))) for l in lengths]


def _grid_lines(breaks, counts):
    xs = [np.linspace(breaks[i], breaks[i + 1], counts[i] + 1) for i in range(len(counts))]
    out = xs[0]
    for seg in xs[1:]:
        out = np.concatenate([out, seg[1:]])
    return out


def _triangulate_cells(xs, ys, keep):
    """Split kept grid cells into CCW triangle pairs; compress vertex ids."""
    nx, ny = len(xs), len(ys)
    vid = -np.ones((nx, ny), dtype=np.int64)
    verts = []
    tris = []

    def node(i, j):
        if vid[i, j] < 0:
            vid[i, j] = len(verts)
            verts.append((xs[i], ys[j]))
        return vid[i, j]

    for i in range(nx - 1):
        for j in range(ny - 1):
            if not keep(i, j):
                continue
            ll = node(i, j)
            lr = node(i + 1, j)
            ur = node(i + 1, j + 1)
            ul = node(i, j + 1)
            tris.append((ll, lr, ur))
            tris.append((ll, ur, ul))
    return np.array(verts, dtype=float), np.array(tris, dtype=np.int64)


def _boundary_edges(triangles):
    """Edges that belong to exactly one triangle, as (a, b) vertex pairs."""
    count = {}
    for t in triangles:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            key = (min(a, b), max(a, b))
            count[key] = count.get(key, 0) + 1
    return np.array([e for e, c in count.items() if c == 1], dtype=np.int64)


def _build_mesh(xs, ys, keep, tag_fn, subdomain_id):
    verts, tris = _triangulate_cells(xs, ys, keep)
    edges = _boundary_edges(tris)
    mids = 0.5 * (verts[edges[:, 0]] + verts[edges[:, 1]])
    tags = [tag_fn(mx, my) for mx, my in mids]
    return TriMesh(verts, tris, edges, tags, subdomain_id)


def _interface_map(mesh1, mesh2, axis, value):
    """Pair interface vertices/edges of two meshes along a grid line."""
    other = 1 - axis

    def iface_data(mesh):
        sel = [k for k, t in enumerate(mesh.boundary_tags) if t == TAG_INTERFACE]
        edges = mesh.boundary_edges[sel]
        # orient and sort edges along the interface direction
        coord = mesh.vertices[:, other]
        oriented = np.array(
            [e if coord[e[0]] <= coord[e[1]] else e[::-1] for e in edges], dtype=np.int64
        )
        order = np.argsort(coord[oriented[:, 0]], kind="stable")
        oriented = oriented[order]
        vids = list(oriented[:, 0]) + [oriented[-1, 1]]
        return oriented, np.array(vids, dtype=np.int64)

    e1, v1 = iface_data(mesh1)
    e2, v2 = iface_data(mesh2)
    if len(v1) != len(v2):
        raise MeshError(
            f"non-conforming interface: {len(v1)} vs {len(v2)} vertices at "
            f"{'xy'[axis]}={value}"
        )
    d = np.abs(mesh1.vertices[v1] - mesh2.vertices[v2]).max()
    if d > PAIRING_TOL:
        raise MeshError(f"interface vertices mismatch by {d:.3e}")
    return InterfaceMap(e1, e2, np.column_stack([v1, v2]))


# ---------------------------------------------------------------------------
# backward-facing step channel
# ---------------------------------------------------------------------------

STEP_X_BREAKS = (0.0, 4.0, 9.0, 18.0)
STEP_Y_BREAKS = (0.0, 2.0, 5.0)
STEP_INTERFACE_X = 9.0
STEP_AREA = 82.0  # 18*3 upper strip + 14*2 lower strip, cm^2


def _step_tag(mx, my):
    if abs(mx - 0.0) < 1e-9:
        return TAG_INLET
    if abs(mx - 18.0) < 1e-9:
        return TAG_OUTLET
    return TAG_WALL


def build_step_meshes(edge_density):
    """Mesh the step channel split at x = 9, returning both halves.

    edge_density is in elements per cm; each axis segment between geometric
    breakpoints (x = 4, 9 and y = 2) gets round(length*density) cells so the
    step corner and the interface always lie on grid lines.  The interface
    then carries the cells of the two y segments; density 6.4 reproduces the
    32-edge (130 velocity dof) interface of the reference configuration.
    """
    if edge_density < 1:
        raise MeshError("edge_density must be >= 1")
    cx = _segment_counts(np.diff(STEP_X_BREAKS), edge_density)
    cy = _segment_counts(np.diff(STEP_Y_BREAKS), edge_density)
    xs = _grid_lines(STEP_X_BREAKS, cx)
    ys = _grid_lines(STEP_Y_BREAKS, cy)

    def in_domain(i, j):
        # the notch [0,4)x[0,2) is outside the channel
        xm = 0.5 * (xs[i] + xs[i + 1])
        ym = 0.5 * (ys[j] + ys[j + 1])
        return not (xm < 4.0 and ym < 2.0)

    def sub1(i, j):
        return in_domain(i, j) and 0.5 * (xs[i] + xs[i + 1]) < STEP_INTERFACE_X

    def sub2(i, j):
        return in_domain(i, j) and 0.5 * (xs[i] + xs[i + 1]) > STEP_INTERFACE_X

    def tag1(mx, my):
        if abs(mx - STEP_INTERFACE_X) < 1e-9:
            return TAG_INTERFACE
        return _step_tag(mx, my)

    def tag2(mx, my):
        if abs(mx - STEP_INTERFACE_X) < 1e-9:
            return TAG_INTERFACE
        return _step_tag(mx, my)

    m1 = _build_mesh(xs, ys, sub1, tag1, 1)
    m2 = _build_mesh(xs, ys, sub2, tag2, 2)
    return m1, m2, _interface_map(m1, m2, axis=0, value=STEP_INTERFACE_X)


def build_step_monolithic(edge_density):
    """Full step channel on the same grid as the split meshes."""
    if edge_density < 1:
        raise MeshError("edge_density must be >= 1")
    cx = _segment_counts(np.diff(STEP_X_BREAKS), edge_density)
    cy = _segment_counts(np.diff(STEP_Y_BREAKS), edge_density)
    xs = _grid_lines(STEP_X_BREAKS, cx)
    ys = _grid_lines(STEP_Y_BREAKS, cy)

    def in_domain(i, j):
        xm = 0.5 * (xs[i] + xs[i + 1])
        ym = 0.5 * (ys[j] + ys[j + 1])
        return not (xm < 4.0 and ym < 2.0)

    return _build_mesh(xs, ys, in_domain, _step_tag, 0)


# ---------------------------------------------------------------------------
# lid-driven cavity
# ---------------------------------------------------------------------------

CAVITY_INTERFACE_Y = 0.5
CAVITY_AREA = 1.0


def _cavity_tag(mx, my):
    if abs(my - 1.0) < 1e-9:
        return TAG_LID
    return TAG_WALL


def build_cavity_meshes(n):
    """Mesh the unit square split at y = 0.5 into top (1) and bottom (2).

    Each half gets n cells along x and round(n/2) cells along y, sharing the
    x subdivision, so the interface at y = 0.5 carries exactly n edges and is
    exactly representable for every n >= 1 (n = 73 reproduces the 294
    velocity dof interface of the reference configuration).
    """
    if int(n) != n or n < 1:
        raise MeshError("n must be a positive integer")
    n = int(n)
    ny = max(1, int(round(n / 2)))
    xs = np.linspace(0.0, 1.0, n + 1)
    ys_top = np.linspace(CAVITY_INTERFACE_Y, 1.0, ny + 1)
    ys_bot = np.linspace(0.0, CAVITY_INTERFACE_Y, ny + 1)

    def tag_top(mx, my):
        if abs(my - CAVITY_INTERFACE_Y) < 1e-9:
            return TAG_INTERFACE
        return _cavity_tag(mx, my)

    def tag_bot(mx, my):
        if abs(my - CAVITY_INTERFACE_Y) < 1e-9:
            return TAG_INTERFACE
        return _cavity_tag(mx, my)

    m1 = _build_mesh(xs, ys_top, lambda i, j: True, tag_top, 1)
    m2 = _build_mesh(xs, ys_bot, lambda i, j: True, tag_bot, 2)
    return m1, m2, _interface_map(m1, m2, axis=1, value=CAVITY_INTERFACE_Y)


def build_cavity_monolithic(n):
    """Full unit square on the union grid of the two cavity halves."""
    if int(n) != n or n < 1:
        raise MeshError("n must be a positive integer")
    n = int(n)
    ny = max(1, int(round(n / 2)))
    xs = np.linspace(0.0, 1.0, n + 1)
    ys = np.concatenate(
        [np.linspace(0.0, CAVITY_INTERFACE_Y, ny + 1), np.linspace(CAVITY_INTERFACE_Y, 1.0, ny + 1)[1:]]
    )
    return _build_mesh(xs, ys, lambda i, j: True, _cavity_tag, 0)


# ---------------------------------------------------------------------------
# diagnostics and persistence
# ---------------------------------------------------------------------------


@dataclass
class MeshDiagnostics:
    violations: list
    min_quality: float
    max_quality: float

    @property
    def ok(self):
        return not self.violations


def validate_mesh(mesh):
    """Check the TriMesh invariants; reports violations, never raises."""
    violations = []
    areas = mesh.signed_areas()
    if np.any(areas <= 0):
        bad = np.nonzero(areas <= 0)[0]
        violations.append(f"negative area in triangles {bad.tolist()}")

    count = {}
    for t in mesh.triangles:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            key = (min(a, b), max(a, b))
            count[key] = count.get(key, 0) + 1
    true_boundary = {e for e, c in count.items() if c == 1}
    tagged = {}
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        key = (min(a, b), max(a, b))
        if tag not in ALL_TAGS:
            violations.append(f"unknown tag {tag!r} on edge {key}")
        if key in tagged:
            violations.append(f"edge {key} tagged twice")
        tagged[key] = tag
    missing = true_boundary - set(tagged)
    if missing:
        violations.append(f"{len(missing)} boundary edges untagged")
    extra = set(tagged) - true_boundary
    if extra:
        violations.append(f"{len(extra)} tagged edges are not boundary edges")

    # quality: ratio of 2*inradius to circumradius (1 for equilateral)
    p = mesh.vertices[mesh.triangles]
    la = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    lb = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    lc = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    s = 0.5 * (la + lb + lc)
    area = np.abs(areas)
    with np.errstate(divide="ignore", invalid="ignore"):
        inr = area / s
        circ = la * lb * lc / (4 * np.maximum(area, 1e-300))
        q = 2 * inr / circ
    return MeshDiagnostics(violations, float(np.min(q)), float(np.max(q)))


def dump_mesh(mesh, path):
    """Plain-text dump: TRIMESH v1 header, vertices, triangles, boundary."""
    with open(path, "w") as f:
        f.write(
            f"TRIMESH v1 {mesh.n_vertices} {mesh.n_triangles} {len(mesh.boundary_edges)}\n"
        )
        f.write(f"subdomain {mesh.subdomain_id}\n")
        for x, y in mesh.vertices:
            f.write(f"{x:.17g} {y:.17g}\n")
        for i, j, k in mesh.triangles:
            f.write(f"{i} {j} {k}\n")
        for (i, j), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
            f.write(f"{i} {j} {tag}\n")


def load_mesh(path):
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 5 or header[0] != "TRIMESH" or header[1] != "v1":
            raise MeshError(f"bad mesh header in {path}")
        nv, nt, nb = map(int, header[2:])
        sub = f.readline().split()
        subdomain_id = int(sub[1]) if sub and sub[0] == "subdomain" else 0
        verts = np.array([list(map(float, f.readline().split())) for _ in range(nv)])
        tris = np.array([list(map(int, f.readline().split())) for _ in range(nt)], dtype=np.int64)
        edges = []
        tags = []
        for _ in range(nb):
            parts = f.readline().split()
            edges.append((int(parts[0]), int(parts[1])))
            tags.append(parts[2])
    return TriMesh(verts, np.array(tris), np.array(edges, dtype=np.int64), tags, subdomain_id)
