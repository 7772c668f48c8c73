"""Fine unstructured grid with fracture edges, uniform coarse grid, patches and
the linear partition of unity.

The fine mesh is conforming to fractures: fracture degrees of freedom live at
fine nodes lying on tagged fracture edges, so no mortar coupling is needed.
Vertex and cell numbering of the coarse grid is lexicographic with x running
fastest, which keeps all derived outputs deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, GeometryError, MeshParseError, ValidationError

BOUNDARY_TAGS = ("left", "right", "top", "bottom")

# Relative tolerance (times domain diameter) for point-in-cell queries.
POINT_IN_CELL_RTOL = 1e-9


@dataclass(frozen=True)
class FineMesh:
    """Conforming triangulation with an embedded 1D fracture edge network."""

    nodes: np.ndarray            # (n_nodes, 2) float
    triangles: np.ndarray        # (n_tri, 3) int
    region_id: np.ndarray        # (n_tri,) int
    fracture_edges: np.ndarray   # (n_frac_edges, 2) int, may be empty
    boundary_tags: dict          # tag -> sorted np.ndarray of node ids

    # derived, filled by validate()
    fracture_nodes: np.ndarray = field(default=None, repr=False)
    frac_dof_of_node: dict = field(default=None, repr=False)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @property
    def n_fracture_dofs(self):
        return self.fracture_nodes.shape[0]

    def triangle_areas(self):
        p = self.nodes[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    def fracture_lengths(self):
        if self.fracture_edges.size == 0:
            return np.zeros(0)
        d = self.nodes[self.fracture_edges[:, 1]] - self.nodes[self.fracture_edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def extents(self):
        return (self.nodes[:, 0].min(), self.nodes[:, 1].min(),
                self.nodes[:, 0].max(), self.nodes[:, 1].max())

    def diameter(self):
        x0, y0, x1, y1 = self.extents()
        return float(np.hypot(x1 - x0, y1 - y0))


def make_fine_mesh(nodes, triangles, region_id=None, fracture_edges=None,
                   boundary_tags=None) -> FineMesh:
    """Build and validate a FineMesh from raw arrays."""
    nodes = np.asarray(nodes, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if region_id is None:
        region_id = np.zeros(triangles.shape[0], dtype=np.int64)
    region_id = np.asarray(region_id, dtype=np.int64)
    if fracture_edges is None or len(fracture_edges) == 0:
        fracture_edges = np.zeros((0, 2), dtype=np.int64)
    fracture_edges = np.asarray(fracture_edges, dtype=np.int64).reshape(-1, 2)
    tags = {t: np.asarray(sorted(set(map(int, (boundary_tags or {}).get(t, ())))), dtype=np.int64)
            for t in BOUNDARY_TAGS}

    n = nodes.shape[0]
    if triangles.size and (triangles.min() < 0 or triangles.max() >= n):
        raise MeshParseError("triangle references a node that does not exist")
    if fracture_edges.size and (fracture_edges.min() < 0 or fracture_edges.max() >= n):
        raise ValidationError("fracture edge references a node that does not exist")
    for t in BOUNDARY_TAGS:
        if tags[t].size and (tags[t].min() < 0 or tags[t].max() >= n):
            raise MeshParseError("boundary tag references a node that does not exist")

    mesh = FineMesh(nodes=nodes, triangles=triangles, region_id=region_id,
                    fracture_edges=fracture_edges, boundary_tags=tags)

    areas = mesh.triangle_areas()
    if np.any(areas <= 0.0):
        bad = int(np.argmax(areas <= 0.0))
        raise ValidationError(f"triangle {bad} has non-positive signed area")

    # every fracture edge must be an edge of some triangle (conforming DFM)
    if fracture_edges.shape[0]:
        tri_edges = set()
        for a, b, c in triangles:
            tri_edges.add((min(a, b), max(a, b)))
            tri_edges.add((min(b, c), max(b, c)))
            tri_edges.add((min(a, c), max(a, c)))
        for a, b in fracture_edges:
            if (min(a, b), max(a, b)) not in tri_edges:
                raise ValidationError(f"fracture edge ({a}, {b}) is not an edge of any triangle")

    # every geometric boundary node must carry at least one tag
    x0, y0, x1, y1 = mesh.extents()
    tol = POINT_IN_CELL_RTOL * max(mesh.diameter(), 1.0)
    on_bnd = ((np.abs(nodes[:, 0] - x0) < tol) | (np.abs(nodes[:, 0] - x1) < tol)
              | (np.abs(nodes[:, 1] - y0) < tol) | (np.abs(nodes[:, 1] - y1) < tol))
    tagged = np.zeros(n, dtype=bool)
    for t in BOUNDARY_TAGS:
        tagged[tags[t]] = True
    missing = np.nonzero(on_bnd & ~tagged)[0]
    if missing.size:
        raise ValidationError(f"boundary node {int(missing[0])} carries no boundary tag")

    # fracture DOFs: one per node touched by any fracture edge (shared at
    # intersections, so p_f is continuous across crossing fractures)
    frac_nodes = np.unique(fracture_edges) if fracture_edges.size else np.zeros(0, dtype=np.int64)
    object.__setattr__(mesh, "fracture_nodes", frac_nodes)
    object.__setattr__(mesh, "frac_dof_of_node",
                       {int(v): i for i, v in enumerate(frac_nodes)})
    return mesh


# ---------------------------------------------------------------------------
# mesh file I/O
#
# Plain-text format, four sections.  Grammar (line oriented, '#' comments and
# blank lines ignored; sections may appear in any order, unknown sections are
# rejected):
#
#   NODES
#   <id> <x> <y>
#   TRIANGLES
#   <id> <n1> <n2> <n3> <region>
#   FRACTURE_EDGES
#   <n1> <n2>
#   BOUNDARY
#   <node> <tag>          tag in {left, right, top, bottom}
# ---------------------------------------------------------------------------

_SECTIONS = ("NODES", "TRIANGLES", "FRACTURE_EDGES", "BOUNDARY")


def load_fine_mesh(path) -> FineMesh:
    """Parse a mesh file and return a validated FineMesh."""
    sections = {s: [] for s in _SECTIONS}
    current = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.upper() in _SECTIONS:
                current = line.upper()
                continue
            if current is None or (line[0].isalpha() and current != "BOUNDARY"):
                raise MeshParseError(f"{path}:{lineno}: unknown section or stray line {line!r}")
            sections[current].append((lineno, line.split()))

    node_rows = {}
    for lineno, tok in sections["NODES"]:
        if len(tok) != 3:
            raise MeshParseError(f"{path}:{lineno}: NODES line needs 'id x y'")
        node_rows[int(tok[0])] = (float(tok[1]), float(tok[2]))
    if sorted(node_rows) != list(range(len(node_rows))):
        raise MeshParseError(f"{path}: node ids must be 0..n-1 without gaps")
    nodes = np.array([node_rows[i] for i in range(len(node_rows))])

    tris, regions = [], []
    for lineno, tok in sections["TRIANGLES"]:
        if len(tok) != 5:
            raise MeshParseError(f"{path}:{lineno}: TRIANGLES line needs 'id n1 n2 n3 region'")
        tris.append((int(tok[1]), int(tok[2]), int(tok[3])))
        regions.append(int(tok[4]))

    fracs = []
    for lineno, tok in sections["FRACTURE_EDGES"]:
        if len(tok) != 2:
            raise MeshParseError(f"{path}:{lineno}: FRACTURE_EDGES line needs 'n1 n2'")
        fracs.append((int(tok[0]), int(tok[1])))

    tags = {t: [] for t in BOUNDARY_TAGS}
    for lineno, tok in sections["BOUNDARY"]:
        if len(tok) != 2 or tok[1] not in BOUNDARY_TAGS:
            raise MeshParseError(f"{path}:{lineno}: BOUNDARY line needs 'node tag'")
        tags[tok[1]].append(int(tok[0]))

    return make_fine_mesh(nodes, np.array(tris, dtype=np.int64).reshape(-1, 3),
                          np.array(regions, dtype=np.int64), fracs, tags)


def write_fine_mesh(mesh: FineMesh, path):
    """Write a FineMesh in the plain-text format accepted by load_fine_mesh."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("NODES\n")
        for i, (x, y) in enumerate(mesh.nodes):
            fh.write(f"{i} {float(x)!r} {float(y)!r}\n")
        fh.write("TRIANGLES\n")
        for i, ((a, b, c), r) in enumerate(zip(mesh.triangles, mesh.region_id)):
            fh.write(f"{i} {a} {b} {c} {r}\n")
        fh.write("FRACTURE_EDGES\n")
        for a, b in mesh.fracture_edges:
            fh.write(f"{a} {b}\n")
        fh.write("BOUNDARY\n")
        for tag in BOUNDARY_TAGS:
            for v in mesh.boundary_tags[tag]:
                fh.write(f"{v} {tag}\n")


# ---------------------------------------------------------------------------
# coarse grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoarseGrid:
    nx: int
    ny: int
    x0: float
    y0: float
    x1: float
    y1: float
    vertices: np.ndarray      # ((nx+1)(ny+1), 2), lexicographic, x fastest
    cells: np.ndarray         # (nx*ny, 4) vertex ids (v00, v10, v01, v11)
    vertex_cells: tuple       # per vertex: tuple of incident cell ids

    @property
    def n_vertices(self):
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_cells(self):
        return self.nx * self.ny

    @property
    def hx(self):
        return (self.x1 - self.x0) / self.nx

    @property
    def hy(self):
        return (self.y1 - self.y0) / self.ny

    def cell_box(self, c):
        i, j = c % self.nx, c // self.nx
        return (self.x0 + i * self.hx, self.y0 + j * self.hy,
                self.x0 + (i + 1) * self.hx, self.y0 + (j + 1) * self.hy)


def build_coarse_grid(extents, nx, ny) -> CoarseGrid:
    """Uniform rectangular coarse grid over ``extents = (x0, y0, x1, y1)``."""
    x0, y0, x1, y1 = map(float, extents)
    if nx < 1 or ny < 1:
        raise ConfigurationError("coarse cell counts must be >= 1")
    if not (x1 > x0 and y1 > y0):
        raise ConfigurationError("coarse grid extents must be positive")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)              # row-major: y slow, x fast
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    cells = np.empty((nx * ny, 4), dtype=np.int64)
    for j in range(ny):
        for i in range(nx):
            v00 = j * (nx + 1) + i
            cells[j * nx + i] = (v00, v00 + 1, v00 + nx + 1, v00 + nx + 2)
    vcells = [[] for _ in range(vertices.shape[0])]
    for c, vs in enumerate(cells):
        for v in vs:
            vcells[v].append(c)
    return CoarseGrid(nx=nx, ny=ny, x0=x0, y0=y0, x1=x1, y1=y1,
                      vertices=vertices, cells=cells,
                      vertex_cells=tuple(tuple(cs) for cs in vcells))


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Patch:
    """Local domain omega_l: union of the coarse cells sharing vertex l."""

    vertex: int
    cells: tuple
    box: tuple                 # (x0, y0, x1, y1) bounding box of the cells
    nodes: np.ndarray          # sorted global fine node ids inside the box
    boundary_nodes: np.ndarray # subset on the patch perimeter
    interior_nodes: np.ndarray
    triangles: np.ndarray      # global fine triangle ids inside the box
    fracture_edges: np.ndarray # global fracture edge ids inside the box
    local_of_global: dict      # global node id -> local index into nodes


def build_patches(cg: CoarseGrid, fm: FineMesh):
    """One patch per coarse vertex; the fine grid must be nested in the coarse."""
    tol = POINT_IN_CELL_RTOL * max(fm.diameter(), 1.0)
    nx0, ny0, nx1, ny1 = fm.extents()
    if (nx0 < cg.x0 - tol or ny0 < cg.y0 - tol
            or nx1 > cg.x1 + tol or ny1 > cg.y1 + tol):
        raise GeometryError("fine mesh extends beyond the coarse grid domain")

    centroids = fm.nodes[fm.triangles].mean(axis=1)
    if fm.fracture_edges.size:
        frac_mid = fm.nodes[fm.fracture_edges].mean(axis=1)
    else:
        frac_mid = np.zeros((0, 2))

    patches = []
    for l in range(cg.n_vertices):
        cells = cg.vertex_cells[l]
        boxes = [cg.cell_box(c) for c in cells]
        bx0 = min(b[0] for b in boxes)
        by0 = min(b[1] for b in boxes)
        bx1 = max(b[2] for b in boxes)
        by1 = max(b[3] for b in boxes)

        tri_in = np.nonzero((centroids[:, 0] > bx0 - tol) & (centroids[:, 0] < bx1 + tol)
                            & (centroids[:, 1] > by0 - tol) & (centroids[:, 1] < by1 + tol))[0]
        nodes = np.unique(fm.triangles[tri_in])
        xy = fm.nodes[nodes]
        on_perim = ((np.abs(xy[:, 0] - bx0) < tol) | (np.abs(xy[:, 0] - bx1) < tol)
                    | (np.abs(xy[:, 1] - by0) < tol) | (np.abs(xy[:, 1] - by1) < tol))
        frac_in = np.nonzero((frac_mid[:, 0] > bx0 - tol) & (frac_mid[:, 0] < bx1 + tol)
                             & (frac_mid[:, 1] > by0 - tol) & (frac_mid[:, 1] < by1 + tol))[0] \
            if frac_mid.size else np.zeros(0, dtype=np.int64)

        patches.append(Patch(
            vertex=l, cells=cells, box=(bx0, by0, bx1, by1),
            nodes=nodes,
            boundary_nodes=nodes[on_perim],
            interior_nodes=nodes[~on_perim],
            triangles=tri_in,
            fracture_edges=frac_in,
            local_of_global={int(g): k for k, g in enumerate(nodes)},
        ))

    covered = np.zeros(fm.n_nodes, dtype=bool)
    for p in patches:
        covered[p.nodes] = True
    if not covered.all():
        raise GeometryError("a fine node lies outside every coarse cell")
    return patches


# ---------------------------------------------------------------------------
# partition of unity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PartitionOfUnity:
    """Bilinear coarse hat function values chi^l at every fine node.

    Stored as a sparse matrix of shape (n_coarse_vertices, n_fine_nodes);
    row l is supported on the fine nodes of patch l.
    """

    values: sp.csr_matrix

    def row(self, l):
        return self.values.getrow(l)

    def dense_row(self, l):
        return np.asarray(self.values.getrow(l).todense()).ravel()


def partition_of_unity(cg: CoarseGrid, fm: FineMesh) -> PartitionOfUnity:
    """Evaluate the coarse bilinear hats at the fine nodes."""
    x = fm.nodes[:, 0]
    y = fm.nodes[:, 1]
    # local coordinates inside the coarse tensor grid
    sx = np.clip((x - cg.x0) / cg.hx, 0.0, cg.nx)
    sy = np.clip((y - cg.y0) / cg.hy, 0.0, cg.ny)
    ix = np.minimum(sx.astype(np.int64), cg.nx - 1)
    iy = np.minimum(sy.astype(np.int64), cg.ny - 1)
    fx = sx - ix
    fy = sy - iy

    rows, cols, vals = [], [], []
    for (di, dj, w) in ((0, 0, (1 - fx) * (1 - fy)), (1, 0, fx * (1 - fy)),
                        (0, 1, (1 - fx) * fy), (1, 1, fx * fy)):
        v = (iy + dj) * (cg.nx + 1) + (ix + di)
        nz = np.nonzero(w > 0.0)[0]
        rows.append(v[nz])
        cols.append(nz)
        vals.append(w[nz])
    mat = sp.coo_matrix((np.concatenate(vals),
                         (np.concatenate(rows), np.concatenate(cols))),
                        shape=(cg.n_vertices, fm.n_nodes)).tocsr()
    mat.sum_duplicates()
    return PartitionOfUnity(values=mat)
