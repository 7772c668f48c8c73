"""P1 finite element assembly for the coupled multicontinuum flow/mechanics
system: per-continuum stiffness, mass, exchange and pressure-displacement
coupling matrices, plane-strain elasticity, 1D fracture contributions,
Dirichlet handling and manufactured-solution load vectors.

All bulk integrals use exact closed-form P1 formulas; manufactured sources use
the 3-point (edge midpoint) Gauss rule, exact for quadratics.  Element
contributions are accumulated in a fixed element order so repeated runs are
bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, DataError
from .mesh import FineMesh

_MASS_LOCAL = np.array([[2.0, 1.0, 1.0],
                        [1.0, 2.0, 1.0],
                        [1.0, 1.0, 2.0]]) / 12.0

_EDGE_MASS_LOCAL = np.array([[2.0, 1.0],
                             [1.0, 2.0]]) / 6.0


# ---------------------------------------------------------------------------
# coefficient containers
# ---------------------------------------------------------------------------

@dataclass
class ContinuumSpec:
    """Coefficients of one flow continuum (bulk field or fracture network)."""

    name: str
    support: str                 # "bulk" or "fracture"
    c: float                     # storage coefficient 1/M_i
    k: object                    # scalar, or per-triangle (bulk) / per-edge (fracture)
    gamma: float = 0.0           # Biot coefficient
    alpha: float = 1.0           # fractional order of the pressure memory
    beta: float = 1.0            # fractional order of the mechanics memory

    def __post_init__(self):
        if self.support not in ("bulk", "fracture"):
            raise DataError(f"continuum {self.name}: unknown support {self.support!r}")
        if self.c < 0.0:
            raise DataError(f"continuum {self.name}: storage coefficient c < 0")
        if np.any(np.asarray(self.k) <= 0.0):
            raise DataError(f"continuum {self.name}: permeability must be positive")
        for o in (self.alpha, self.beta):
            if not 0.0 < o <= 1.0:
                raise DataError(f"continuum {self.name}: fractional order {o} outside (0, 1]")


@dataclass
class ExchangeSpec:
    """Symmetric table of mass-transfer coefficients eta_ij >= 0.

    Keys are frozensets of two continuum names.  Bulk-bulk entries are scalars
    or per-triangle arrays; bulk-fracture entries are scalars or
    per-fracture-edge arrays (eta per unit fracture length).
    """

    eta: dict = field(default_factory=dict)

    def set(self, name_i, name_j, value):
        if name_i == name_j:
            raise ContractError("self exchange is undefined")
        if np.any(np.asarray(value) < 0.0):
            raise DataError("exchange coefficient must be nonnegative")
        self.eta[frozenset((name_i, name_j))] = value

    def get(self, name_i, name_j, default=None):
        return self.eta.get(frozenset((name_i, name_j)), default)

    def pairs(self):
        return sorted(self.eta, key=lambda fs: tuple(sorted(fs)))


@dataclass
class ElasticitySpec:
    """Plane-strain linear elasticity coefficients."""

    E: object                    # scalar or per-triangle Young's modulus
    nu: float

    def __post_init__(self):
        if np.any(np.asarray(self.E) <= 0.0):
            raise DataError("Young's modulus must be positive")
        if not 0.0 < self.nu < 0.5:
            raise DataError(f"Poisson ratio {self.nu} outside (0, 0.5)")

    def lame(self, n_tri):
        E = np.broadcast_to(np.asarray(self.E, dtype=float), (n_tri,))
        lam = E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))
        mu = E / (2.0 * (1.0 + self.nu))
        return lam, mu


# ---------------------------------------------------------------------------
# P1 geometry
# ---------------------------------------------------------------------------

def p1_geometry(mesh: FineMesh):
    """Triangle areas and the constant gradients of the three hat functions."""
    p = mesh.nodes[mesh.triangles]       # (n_tri, 3, 2)
    areas = mesh.triangle_areas()
    g = np.empty((mesh.n_triangles, 3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        g[:, i, 0] = p[:, j, 1] - p[:, k, 1]
        g[:, i, 1] = p[:, k, 0] - p[:, j, 0]
    g /= (2.0 * areas)[:, None, None]
    return areas, g


def _per_triangle(coef, n_tri):
    return np.broadcast_to(np.asarray(coef, dtype=float), (n_tri,))


def _scatter(local, row_ids, col_ids, shape):
    """Accumulate (n_el, a, b) local blocks into a CSR matrix.

    row_ids: (n_el, a) global row indices; col_ids: (n_el, b) column indices.
    """
    n_el, a, b = local.shape
    rows = np.broadcast_to(row_ids[:, :, None], (n_el, a, b))
    cols = np.broadcast_to(col_ids[:, None, :], (n_el, a, b))
    mat = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=shape)
    return mat.tocsr()


# ---------------------------------------------------------------------------
# bulk matrices
# ---------------------------------------------------------------------------

def assemble_stiffness(mesh: FineMesh, k) -> sp.csr_matrix:
    """int k grad(phi_l) . grad(phi_n); symmetric PSD, constants in the kernel."""
    k = _per_triangle(k, mesh.n_triangles)
    if np.any(k <= 0.0):
        raise DataError("permeability must be positive on every triangle")
    areas, g = p1_geometry(mesh)
    local = (k * areas)[:, None, None] * np.einsum("tid,tjd->tij", g, g)
    return _scatter(local, mesh.triangles, mesh.triangles, (mesh.n_nodes,) * 2)


def assemble_mass(mesh: FineMesh, c) -> sp.csr_matrix:
    """Consistent mass int c phi_l phi_n over the bulk."""
    c = _per_triangle(c, mesh.n_triangles)
    if np.any(c < 0.0):
        raise DataError("mass coefficient must be nonnegative")
    areas, _ = p1_geometry(mesh)
    local = (c * areas)[:, None, None] * _MASS_LOCAL[None, :, :]
    return _scatter(local, mesh.triangles, mesh.triangles, (mesh.n_nodes,) * 2)


def assemble_coupling(mesh: FineMesh, gamma) -> sp.csr_matrix:
    """D with rows indexed by pressure DOFs and columns by displacement DOFs:
    D[n, 2m+d] = int gamma d_x_d(Phi_m) phi_n; exact for P1 (div is constant).
    """
    gamma = _per_triangle(gamma, mesh.n_triangles)
    areas, g = p1_geometry(mesh)
    n_tri = mesh.n_triangles
    coef = gamma * areas / 3.0
    rows, cols, vals = [], [], []
    for n_loc in range(3):
        for m_loc in range(3):
            for d in range(2):
                rows.append(mesh.triangles[:, n_loc])
                cols.append(2 * mesh.triangles[:, m_loc] + d)
                vals.append(coef * g[:, m_loc, d])
    mat = sp.coo_matrix((np.concatenate(vals),
                         (np.concatenate(rows), np.concatenate(cols))),
                        shape=(mesh.n_nodes, 2 * mesh.n_nodes))
    return mat.tocsr()


def assemble_elasticity(mesh: FineMesh, el: ElasticitySpec) -> sp.csr_matrix:
    """Plane-strain P1 elasticity; kernel before BCs is the 3 rigid modes."""
    lam, mu = el.lame(mesh.n_triangles)
    areas, g = p1_geometry(mesh)
    n_tri = mesh.n_triangles

    # B (3 x 6) in Voigt order (exx, eyy, 2exy) per triangle
    B = np.zeros((n_tri, 3, 6))
    for m in range(3):
        B[:, 0, 2 * m] = g[:, m, 0]
        B[:, 1, 2 * m + 1] = g[:, m, 1]
        B[:, 2, 2 * m] = g[:, m, 1]
        B[:, 2, 2 * m + 1] = g[:, m, 0]
    Dm = np.zeros((n_tri, 3, 3))
    Dm[:, 0, 0] = Dm[:, 1, 1] = lam + 2.0 * mu
    Dm[:, 0, 1] = Dm[:, 1, 0] = lam
    Dm[:, 2, 2] = mu
    local = areas[:, None, None] * np.einsum("tai,tab,tbj->tij", B, Dm, B)

    dofs = np.empty((n_tri, 6), dtype=np.int64)
    dofs[:, 0::2] = 2 * mesh.triangles
    dofs[:, 1::2] = 2 * mesh.triangles + 1
    return _scatter(local, dofs, dofs, (2 * mesh.n_nodes,) * 2)


def assemble_vector_mass(mesh: FineMesh, w=1.0) -> sp.csr_matrix:
    """int w Phi_l . Phi_n: the scalar mass expanded per component."""
    m = assemble_mass(mesh, w)
    return sp.kron(m, sp.identity(2, format="csr"), format="csr")


# ---------------------------------------------------------------------------
# fracture (1D) matrices
# ---------------------------------------------------------------------------

def _per_edge(coef, n_edges):
    return np.broadcast_to(np.asarray(coef, dtype=float), (n_edges,))


def _frac_dofs(mesh: FineMesh, edges=None):
    edges = mesh.fracture_edges if edges is None else edges
    dof = np.vectorize(mesh.frac_dof_of_node.__getitem__, otypes=[np.int64])
    return dof(edges) if edges.size else np.zeros((0, 2), dtype=np.int64)


def assemble_fracture_stiffness(mesh: FineMesh, k_f) -> sp.csr_matrix:
    """1D P1 stiffness (k_f / h) [[1,-1],[-1,1]] per fracture edge, on the
    fracture DOF space.  Returns a 0x0 matrix when the mesh has no fractures.
    """
    n = mesh.n_fracture_dofs
    if n == 0:
        return sp.csr_matrix((0, 0))
    k_f = _per_edge(k_f, mesh.fracture_edges.shape[0])
    if np.any(k_f <= 0.0):
        raise DataError("fracture permeability must be positive")
    h = mesh.fracture_lengths()
    local = (k_f / h)[:, None, None] * np.array([[1.0, -1.0], [-1.0, 1.0]])
    dofs = _frac_dofs(mesh)
    return _scatter(local, dofs, dofs, (n, n))


def assemble_fracture_mass(mesh: FineMesh, c_f) -> sp.csr_matrix:
    """1D consistent mass int c_f phi phi along the fracture network."""
    n = mesh.n_fracture_dofs
    if n == 0:
        return sp.csr_matrix((0, 0))
    c_f = _per_edge(c_f, mesh.fracture_edges.shape[0])
    if np.any(c_f < 0.0):
        raise DataError("fracture mass coefficient must be nonnegative")
    h = mesh.fracture_lengths()
    local = (c_f * h)[:, None, None] * _EDGE_MASS_LOCAL[None, :, :]
    dofs = _frac_dofs(mesh)
    return _scatter(local, dofs, dofs, (n, n))


# ---------------------------------------------------------------------------
# exchange
# ---------------------------------------------------------------------------

def assemble_exchange(mesh: FineMesh, spec_i: ContinuumSpec, spec_j: ContinuumSpec,
                      eta) -> sp.csr_matrix:
    """Cross mass matrix Q_ij = int eta phi_i phi_j over the shared support.

    bulk-bulk: the eta-weighted consistent mass over Omega (n_nodes square).
    bulk-fracture: the 1D edge mass along the fracture network coupling the
    bulk trace DOFs (rows) with the fracture DOFs (columns); DOFs are
    co-located on the conforming grid.  eta is per unit fracture length.
    """
    if spec_i.support == "fracture" and spec_j.support == "fracture":
        raise ContractError("fracture-fracture exchange is undefined")
    if spec_i.support == "bulk" and spec_j.support == "bulk":
        return assemble_mass(mesh, eta)
    if spec_i.support == "fracture":     # normalize to (bulk, fracture)
        return assemble_exchange(mesh, spec_j, spec_i, eta).T.tocsr()

    n_edges = mesh.fracture_edges.shape[0]
    if n_edges == 0:
        return sp.csr_matrix((mesh.n_nodes, 0))
    eta = _per_edge(eta, n_edges)
    h = mesh.fracture_lengths()
    local = (eta * h)[:, None, None] * _EDGE_MASS_LOCAL[None, :, :]
    rows = mesh.fracture_edges[:, :, None]          # bulk trace node ids
    cols = _frac_dofs(mesh)                         # fracture DOF ids
    return _scatter(local, mesh.fracture_edges, cols, (mesh.n_nodes, mesh.n_fracture_dofs))


def exchange_diagonal(mesh: FineMesh, spec_i: ContinuumSpec, spec_j: ContinuumSpec, eta):
    """The (i, i) diagonal contribution of the eta_ij exchange term, expressed
    on continuum i's DOF space (same integrals as the cross block)."""
    if spec_i.support == "bulk" and spec_j.support == "bulk":
        return assemble_mass(mesh, eta)
    if spec_i.support == "bulk":
        # trace mass along the fracture edges, in bulk node indices
        n_edges = mesh.fracture_edges.shape[0]
        if n_edges == 0:
            return sp.csr_matrix((mesh.n_nodes,) * 2)
        eta = _per_edge(eta, n_edges)
        h = mesh.fracture_lengths()
        local = (eta * h)[:, None, None] * _EDGE_MASS_LOCAL[None, :, :]
        e = mesh.fracture_edges
        return _scatter(local, e, e, (mesh.n_nodes,) * 2)
    # fracture side: same 1D mass in fracture DOF indices
    return assemble_fracture_mass(mesh, eta)


# ---------------------------------------------------------------------------
# boundary conditions
# ---------------------------------------------------------------------------

def tagged_nodes(mesh: FineMesh, tags):
    """Sorted union of the node sets of the given boundary tags."""
    out = np.zeros(0, dtype=np.int64)
    for t in tags:
        out = np.union1d(out, mesh.boundary_tags[t])
    return out


def apply_dirichlet_rows(mat: sp.csr_matrix, dofs) -> sp.csr_matrix:
    """Replace the given rows by identity rows (values go to the RHS)."""
    dofs = np.asarray(dofs, dtype=np.int64)
    if dofs.size == 0:
        return mat.tocsr()
    coo = mat.tocoo()
    mask = np.zeros(mat.shape[0], dtype=bool)
    mask[dofs] = True
    keep = ~mask[coo.row]
    rows = np.concatenate([coo.row[keep], dofs])
    cols = np.concatenate([coo.col[keep], dofs])
    data = np.concatenate([coo.data[keep], np.ones(dofs.size)])
    return sp.coo_matrix((data, (rows, cols)), shape=mat.shape).tocsr()


def restrict(mat: sp.csr_matrix, free_rows, free_cols=None) -> sp.csr_matrix:
    """Submatrix on the free DOFs (symmetric elimination of homogeneous BCs)."""
    if free_cols is None:
        free_cols = free_rows
    return mat[free_rows][:, free_cols].tocsr()


# ---------------------------------------------------------------------------
# manufactured sources
# ---------------------------------------------------------------------------

def _quad_points(mesh: FineMesh):
    p = mesh.nodes[mesh.triangles]
    mids = 0.5 * (p + np.roll(p, -1, axis=1))    # midpoints of edges 01, 12, 20
    # hat values at the three midpoints: phi_i(mid_q)
    phi = np.array([[0.5, 0.0, 0.5],
                    [0.5, 0.5, 0.0],
                    [0.0, 0.5, 0.5]])            # phi[i, q]
    return mids, phi


def assemble_manufactured_source(mesh: FineMesh, f) -> np.ndarray:
    """Consistent P1 load vector of f(x, y) via the 3-point Gauss rule."""
    areas = mesh.triangle_areas()
    mids, phi = _quad_points(mesh)
    fq = f(mids[:, :, 0], mids[:, :, 1])         # (n_tri, 3)
    fq = np.broadcast_to(np.asarray(fq, dtype=float), mids.shape[:2])
    load = np.zeros(mesh.n_nodes)
    contrib = (areas[:, None] / 3.0) * (fq @ phi.T)   # (n_tri, 3) per local node
    np.add.at(load, mesh.triangles, contrib)
    return load


def assemble_manufactured_fracture_source(mesh: FineMesh, f) -> np.ndarray:
    """1D load vector along the fracture network, exact for f linear in the
    arc-length (consistent edge mass applied to nodal values)."""
    n = mesh.n_fracture_dofs
    if n == 0:
        return np.zeros(0)
    xy = mesh.nodes[mesh.fracture_nodes]
    fq = np.asarray(f(xy[:, 0], xy[:, 1]), dtype=float)
    fq = np.broadcast_to(fq, (n,))
    return assemble_fracture_mass(mesh, 1.0) @ fq


def assemble_manufactured_vector_source(mesh: FineMesh, f) -> np.ndarray:
    """Vector load of f(x, y) -> (fx, fy), interleaved per node."""
    areas = mesh.triangle_areas()
    mids, phi = _quad_points(mesh)
    fx, fy = f(mids[:, :, 0], mids[:, :, 1])
    load = np.zeros(2 * mesh.n_nodes)
    for comp, fc in enumerate((fx, fy)):
        fc = np.broadcast_to(np.asarray(fc, dtype=float), mids.shape[:2])
        contrib = (areas[:, None] / 3.0) * (fc @ phi.T)
        np.add.at(load, 2 * mesh.triangles + comp, contrib)
    return load


# ---------------------------------------------------------------------------
# assembled system
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DofLayout:
    """Stacked pressure blocks by continuum, then interleaved displacement."""

    names: tuple
    sizes: tuple
    n_u: int

    @property
    def offsets(self):
        off, acc = [], 0
        for s in self.sizes:
            off.append(acc)
            acc += s
        return tuple(off)

    @property
    def n_p(self):
        return sum(self.sizes)

    @property
    def n_total(self):
        return self.n_p + self.n_u

    def pressure_slice(self, i):
        return slice(self.offsets[i], self.offsets[i] + self.sizes[i])

    def index(self, name):
        return self.names.index(name)


@dataclass
class SystemMatrices:
    """All fine-grid matrices of the discrete system, per continuum."""

    layout: DofLayout
    A: list          # stiffness (continuum DOF space)
    M: list          # c-weighted consistent mass
    M_plain: list    # unweighted mass (norms, projections)
    D: list          # pressure-displacement coupling (n_i x n_u)
    Q_cross: dict    # (i, j) i < j -> cross exchange matrix
    Q_diag: dict     # (i, j) i != j -> diagonal contribution on continuum i
    A_u: sp.csr_matrix
    M_u_plain: sp.csr_matrix


def assemble_system(mesh: FineMesh, continua, exchange: ExchangeSpec,
                    elasticity: ElasticitySpec) -> SystemMatrices:
    """Assemble every matrix family for the given continua on the fine grid."""
    names = tuple(s.name for s in continua)
    sizes = []
    A, M, Mp, D = [], [], [], []
    for s in continua:
        if s.support == "bulk":
            sizes.append(mesh.n_nodes)
            A.append(assemble_stiffness(mesh, s.k))
            M.append(assemble_mass(mesh, s.c))
            Mp.append(assemble_mass(mesh, 1.0))
            D.append(assemble_coupling(mesh, s.gamma) if s.gamma != 0.0
                     else sp.csr_matrix((mesh.n_nodes, 2 * mesh.n_nodes)))
        else:
            sizes.append(mesh.n_fracture_dofs)
            A.append(assemble_fracture_stiffness(mesh, s.k))
            M.append(assemble_fracture_mass(mesh, s.c))
            Mp.append(assemble_fracture_mass(mesh, 1.0))
            # fracture continuum is mechanically passive unless gamma_f != 0,
            # which is outside the supported coupling (gamma_f = 0 default)
            if s.gamma != 0.0:
                raise DataError("nonzero Biot coefficient on the fracture continuum "
                                "is not supported")
            D.append(sp.csr_matrix((mesh.n_fracture_dofs, 2 * mesh.n_nodes)))

    layout = DofLayout(names=names, sizes=tuple(sizes), n_u=2 * mesh.n_nodes)

    q_cross, q_diag = {}, {}
    by_name = {s.name: (idx, s) for idx, s in enumerate(continua)}
    for pair in exchange.pairs():
        na, nb = sorted(pair)
        if na not in by_name or nb not in by_name:
            continue
        ia, sa = by_name[na]
        ib, sb = by_name[nb]
        i, j = min(ia, ib), max(ia, ib)
        si, sj = continua[i], continua[j]
        eta = exchange.get(na, nb)
        q_cross[(i, j)] = assemble_exchange(mesh, si, sj, eta)
        q_diag[(i, j)] = exchange_diagonal(mesh, si, sj, eta)
        q_diag[(j, i)] = exchange_diagonal(mesh, sj, si, eta)

    return SystemMatrices(
        layout=layout, A=A, M=M, M_plain=Mp, D=D,
        Q_cross=q_cross, Q_diag=q_diag,
        A_u=assemble_elasticity(mesh, elasticity),
        M_u_plain=assemble_vector_mass(mesh, 1.0),
    )


def coupled_pressure_stiffness(sm: SystemMatrices) -> sp.csr_matrix:
    """Block pressure operator: stiffness diagonal plus exchange coupling,
    on the stacked pressure DOF space (no time terms, no BCs)."""
    lay = sm.layout
    blocks = [[None] * len(lay.names) for _ in lay.names]
    for i, Ai in enumerate(sm.A):
        blocks[i][i] = Ai.copy()
    for (i, j), Qc in sm.Q_cross.items():
        blocks[i][i] = blocks[i][i] + sm.Q_diag[(i, j)]
        blocks[j][j] = blocks[j][j] + sm.Q_diag[(j, i)]
        blocks[i][j] = -Qc if blocks[i][j] is None else blocks[i][j] - Qc
        blocks[j][i] = -Qc.T if blocks[j][i] is None else blocks[j][i] - Qc.T
    return sp.bmat(blocks, format="csr")
