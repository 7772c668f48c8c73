"""Multiscale space construction and reduced-order time stepping.

Per coarse vertex patch: coupled pressure snapshots (one local solve per
boundary DOF per continuum, with exchange terms in the interior equations),
displacement snapshots (one per boundary node per component), local spectral
problems on the snapshot spaces, partition-of-unity multiplication and
assembly of the projection rows.  Each selected pressure eigenvector
contributes one basis row per continuum block, which gives the coarse DOF
accounting (#continua + 1) * M per vertex in 2D.

Patch computations are independent; with threads > 1 they run in a pool and
are merged in patch-index order, so results are deterministic.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as dla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (ContinuumSpec, ExchangeSpec, assemble_fracture_mass,
                       assemble_mass, assemble_system, assemble_vector_mass,
                       coupled_pressure_stiffness)
from .errors import ConfigurationError, ContractError, DataError, NumericalError
from .fractional import TimeHistory, memory_sum
from .mesh import CoarseGrid, FineMesh, Patch, PartitionOfUnity, make_fine_mesh

SNAPSHOT_FILTER_RTOL = 1e-10     # drop snapshot directions below this singular value
PENCIL_FILTER_RTOL = 1e-12       # drop S-pencil directions below this eigenvalue


# ---------------------------------------------------------------------------
# patch submeshes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PatchMesh:
    """Renumbered fine submesh of one patch, plus global index maps."""

    mesh: FineMesh
    global_nodes: np.ndarray        # local node -> global node
    global_frac_dofs: np.ndarray    # local fracture DOF -> global fracture DOF
    boundary_local: np.ndarray      # local node ids on the patch perimeter


def extract_patch_mesh(fm: FineMesh, patch: Patch) -> PatchMesh:
    g2l = patch.local_of_global
    tris = np.vectorize(g2l.__getitem__, otypes=[np.int64])(fm.triangles[patch.triangles])
    if patch.fracture_edges.size:
        fedges = np.vectorize(g2l.__getitem__, otypes=[np.int64])(
            fm.fracture_edges[patch.fracture_edges])
    else:
        fedges = np.zeros((0, 2), dtype=np.int64)

    nodes = fm.nodes[patch.nodes]
    bx0, by0, bx1, by1 = patch.box
    tol = 1e-9 * max(np.hypot(bx1 - bx0, by1 - by0), 1.0)
    tags = {
        "left": np.nonzero(np.abs(nodes[:, 0] - bx0) < tol)[0],
        "right": np.nonzero(np.abs(nodes[:, 0] - bx1) < tol)[0],
        "bottom": np.nonzero(np.abs(nodes[:, 1] - by0) < tol)[0],
        "top": np.nonzero(np.abs(nodes[:, 1] - by1) < tol)[0],
    }
    sub = make_fine_mesh(nodes, tris, fm.region_id[patch.triangles], fedges, tags)

    gfrac = np.array([fm.frac_dof_of_node[int(patch.nodes[ln])]
                      for ln in sub.fracture_nodes], dtype=np.int64)
    bnd_local = np.vectorize(g2l.__getitem__, otypes=[np.int64])(patch.boundary_nodes) \
        if patch.boundary_nodes.size else np.zeros(0, dtype=np.int64)
    return PatchMesh(mesh=sub, global_nodes=patch.nodes, global_frac_dofs=gfrac,
                     boundary_local=np.sort(bnd_local))


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

@dataclass
class SnapshotSet:
    vertex: int
    columns: np.ndarray       # (n_local_dofs, n_snapshots), dense
    boundary_dofs: np.ndarray # local stacked DOF index of each snapshot's delta


def _interior_extension(A: sp.csr_matrix, boundary, interior):
    """Solve the homogeneous local PDE for a delta at each boundary DOF."""
    if interior.size == 0:
        Z = np.zeros((A.shape[0], boundary.size))
        Z[boundary, np.arange(boundary.size)] = 1.0
        return Z
    A_ii = A[interior][:, interior].tocsc()
    A_ib = A[interior][:, boundary].toarray()
    try:
        lu = spla.splu(A_ii)
    except RuntimeError as exc:
        raise DataError(f"singular local snapshot system: {exc}") from exc
    X = -lu.solve(A_ib)
    Z = np.zeros((A.shape[0], boundary.size))
    Z[np.ix_(interior, np.arange(boundary.size))] = X
    Z[boundary, np.arange(boundary.size)] = 1.0
    return Z


def compute_pressure_snapshots(pm: PatchMesh, local_sm, supports, vertex) -> SnapshotSet:
    """Coupled steady-flow harmonic extensions of nodal deltas, one per
    boundary DOF per continuum (L_p = sum of per-continuum boundary counts)."""
    lay = local_sm.layout
    A_p = coupled_pressure_stiffness(local_sm)
    sub = pm.mesh
    bnd_nodes = set(pm.boundary_local.tolist())

    bnd, intr = [], []
    for i, support in enumerate(supports):
        off = lay.offsets[i]
        if support == "bulk":
            for n in range(sub.n_nodes):
                (bnd if n in bnd_nodes else intr).append(off + n)
        else:
            for q, n in enumerate(sub.fracture_nodes):
                (bnd if int(n) in bnd_nodes else intr).append(off + q)
    bnd = np.array(bnd, dtype=np.int64)
    intr = np.array(intr, dtype=np.int64)
    Z = _interior_extension(A_p, bnd, intr)
    return SnapshotSet(vertex=vertex, columns=Z, boundary_dofs=bnd)


def compute_displacement_snapshots(pm: PatchMesh, local_sm, vertex) -> SnapshotSet:
    """Elastostatic extensions of per-component nodal deltas (d * N_v^bnd)."""
    sub = pm.mesh
    bnd = np.concatenate([2 * pm.boundary_local, 2 * pm.boundary_local + 1])
    bnd = np.sort(bnd)
    mask = np.zeros(2 * sub.n_nodes, dtype=bool)
    mask[bnd] = True
    intr = np.nonzero(~mask)[0]
    Z = _interior_extension(local_sm.A_u, bnd, intr)
    return SnapshotSet(vertex=vertex, columns=Z, boundary_dofs=bnd)


# ---------------------------------------------------------------------------
# spectral problems
# ---------------------------------------------------------------------------

@dataclass
class SpectralBasis:
    vertex: int
    eigenvalues: np.ndarray
    vectors: np.ndarray       # (n_local_dofs, n_kept) in fine-local coordinates
    residuals: np.ndarray     # generalized eigen residuals per kept pair


def solve_spectral(A: sp.csr_matrix, S: sp.csr_matrix, snaps: SnapshotSet,
                   m_max, vertex) -> SpectralBasis:
    """Smallest m_max eigenpairs of the snapshot-projected pencil (A, S).

    The snapshot matrix is orthonormalized by SVD (filtering degenerate
    columns); the S-pencil is reduced by dense spectral factorization to a
    standard symmetric problem, so selection depends only on the count m_max
    and never on eigenvector signs.
    """
    Z = snaps.columns
    U, sv, _ = dla.svd(Z, full_matrices=False)
    keep = sv > SNAPSHOT_FILTER_RTOL * sv[0]
    U = U[:, keep]

    At = U.T @ (A @ U)
    St = U.T @ (S @ U)
    At = 0.5 * (At + At.T)
    St = 0.5 * (St + St.T)

    w, V = dla.eigh(St)
    wmax = max(float(w[-1]), 0.0)
    keep2 = w > PENCIL_FILTER_RTOL * wmax
    if not np.any(keep2):
        raise NumericalError(f"patch {vertex}: weighted mass pencil is numerically zero")
    W = V[:, keep2] / np.sqrt(w[keep2])
    lam, Y = dla.eigh(W.T @ At @ W)

    if m_max > lam.size:
        raise ConfigurationError(
            f"patch {vertex}: requested {m_max} basis functions, only {lam.size} available")
    lam = lam[:m_max]
    Ysel = Y[:, :m_max]
    phi_t = W @ Ysel                          # snapshot (U) coordinates
    resid = np.empty(m_max)
    for k in range(m_max):
        r = At @ phi_t[:, k] - lam[k] * (St @ phi_t[:, k])
        resid[k] = np.linalg.norm(r) / np.linalg.norm(St @ phi_t[:, k])
    return SpectralBasis(vertex=vertex, eigenvalues=lam, vectors=U @ phi_t,
                         residuals=resid)


# ---------------------------------------------------------------------------
# multiscale space
# ---------------------------------------------------------------------------

@dataclass
class MultiscaleSpace:
    """POU-multiplied basis rows for pressures and displacement, built at
    m_max and truncatable to any M <= m_max by row selection."""

    m_max: int
    continuum_names: tuple
    n_vertices: int
    R_p: sp.csr_matrix        # ((n_v * m_max * nC) x n_p_fine)
    R_u: sp.csr_matrix        # ((n_v * m_max) x n_u_fine)
    p_row_eig: np.ndarray     # eigen index of each pressure row
    u_row_eig: np.ndarray
    pressure_eigenvalues: list  # per vertex
    displacement_eigenvalues: list
    pressure_residuals: list
    displacement_residuals: list

    def n_coarse_dofs(self, m):
        nC = len(self.continuum_names)
        return self.n_vertices * m * (nC + 1)

    def projection(self, m):
        """(R_p, R_u) truncated to the smallest m eigenpairs per vertex."""
        if m > self.m_max:
            raise ConfigurationError(f"M={m} exceeds computed basis size {self.m_max}")
        return (self.R_p[self.p_row_eig < m], self.R_u[self.u_row_eig < m])


def build_multiscale_space(fm: FineMesh, cg: CoarseGrid, patches, pou: PartitionOfUnity,
                           continua, exchange: ExchangeSpec, elasticity,
                           m_max, threads=1) -> MultiscaleSpace:
    """Snapshots + spectral problems on every patch, then POU-glued rows."""
    layout_names = tuple(s.name for s in continua)
    sizes = tuple(fm.n_nodes if s.support == "bulk" else fm.n_fracture_dofs
                  for s in continua)
    offsets = np.concatenate([[0], np.cumsum(sizes)])[:-1]
    n_p = int(sum(sizes))
    supports = [s.support for s in continua]

    def patch_work(l):
        patch = patches[l]
        pm = extract_patch_mesh(fm, patch)
        sub_continua = []
        for s in continua:
            k = np.asarray(s.k, dtype=float)
            if k.ndim:
                k = k[patch.triangles] if s.support == "bulk" else k[patch.fracture_edges]
            sub_continua.append(ContinuumSpec(s.name, s.support, s.c, k,
                                              s.gamma, s.alpha, s.beta))
        sub_exch = ExchangeSpec()
        for pair in exchange.pairs():
            na, nb = sorted(pair)
            eta = np.asarray(exchange.get(na, nb), dtype=float)
            if eta.ndim:
                sup_of = {s.name: s.support for s in continua}
                if sup_of[na] == "bulk" and sup_of[nb] == "bulk":
                    eta = eta[patch.triangles]
                else:
                    eta = eta[patch.fracture_edges]
            sub_exch.set(na, nb, eta)
        local_sm = assemble_system(pm.mesh, sub_continua, sub_exch, elasticity
                                   if np.ndim(elasticity.E) == 0 else
                                   _restrict_elasticity(elasticity, patch))

        # pressure: coupled snapshots + spectral pencil with k-weighted mass
        p_snaps = compute_pressure_snapshots(pm, local_sm, supports, l)
        S_blocks = []
        for s in sub_continua:
            if s.support == "bulk":
                S_blocks.append(assemble_mass(pm.mesh, s.k))
            else:
                S_blocks.append(assemble_fracture_mass(pm.mesh, s.k))
        S_p = sp.block_diag(S_blocks, format="csr")
        A_p = coupled_pressure_stiffness(local_sm)
        p_spec = solve_spectral(A_p, S_p, p_snaps, m_max, l)

        # displacement: elastostatic snapshots + (lam + 2 mu)-weighted mass
        u_snaps = compute_displacement_snapshots(pm, local_sm, l)
        lam_c, mu_c = (elasticity if np.ndim(elasticity.E) == 0
                       else _restrict_elasticity(elasticity, patch)).lame(
                           pm.mesh.n_triangles)
        S_u = assemble_vector_mass(pm.mesh, lam_c + 2.0 * mu_c)
        u_spec = solve_spectral(local_sm.A_u, S_u, u_snaps, m_max, l)
        return pm, local_sm.layout, p_spec, u_spec

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(patch_work, range(len(patches))))
    else:
        results = [patch_work(l) for l in range(len(patches))]

    nC = len(continua)
    rows_p, cols_p, vals_p = [], [], []
    rows_u, cols_u, vals_u = [], [], []
    p_row_eig, u_row_eig = [], []
    p_eigs, u_eigs, p_res, u_res = [], [], [], []
    row_p = row_u = 0
    for l, (pm, lay_loc, p_spec, u_spec) in enumerate(results):
        chi = np.zeros(fm.n_nodes)
        r = pou.values.getrow(l)
        chi[r.indices] = r.data

        for m in range(m_max):
            vec = p_spec.vectors[:, m]
            for i in range(nC):
                off_loc = lay_loc.offsets[i]
                if continua[i].support == "bulk":
                    gnodes = pm.global_nodes
                    vloc = vec[off_loc:off_loc + pm.mesh.n_nodes]
                    gcols = offsets[i] + gnodes
                    w = chi[gnodes] * vloc
                else:
                    nql = pm.mesh.n_fracture_dofs
                    vloc = vec[off_loc:off_loc + nql]
                    gcols = offsets[i] + pm.global_frac_dofs
                    w = chi[pm.global_nodes[pm.mesh.fracture_nodes]] * vloc \
                        if nql else np.zeros(0)
                nz = np.nonzero(w)[0]
                rows_p.append(np.full(nz.size, row_p))
                cols_p.append(gcols[nz])
                vals_p.append(w[nz])
                p_row_eig.append(m)
                row_p += 1

            uvec = u_spec.vectors[:, m]
            gnodes = pm.global_nodes
            w = np.repeat(chi[gnodes], 2) * uvec
            gcols = np.empty(uvec.size, dtype=np.int64)
            gcols[0::2] = 2 * gnodes
            gcols[1::2] = 2 * gnodes + 1
            nz = np.nonzero(w)[0]
            rows_u.append(np.full(nz.size, row_u))
            cols_u.append(gcols[nz])
            vals_u.append(w[nz])
            u_row_eig.append(m)
            row_u += 1

        p_eigs.append(p_spec.eigenvalues)
        u_eigs.append(u_spec.eigenvalues)
        p_res.append(p_spec.residuals)
        u_res.append(u_spec.residuals)

    R_p = sp.coo_matrix((np.concatenate(vals_p),
                         (np.concatenate(rows_p), np.concatenate(cols_p))),
                        shape=(row_p, n_p)).tocsr()
    R_u = sp.coo_matrix((np.concatenate(vals_u),
                         (np.concatenate(rows_u), np.concatenate(cols_u))),
                        shape=(row_u, 2 * fm.n_nodes)).tocsr()
    return MultiscaleSpace(
        m_max=m_max, continuum_names=layout_names, n_vertices=len(patches),
        R_p=R_p, R_u=R_u,
        p_row_eig=np.array(p_row_eig), u_row_eig=np.array(u_row_eig),
        pressure_eigenvalues=p_eigs, displacement_eigenvalues=u_eigs,
        pressure_residuals=p_res, displacement_residuals=u_res)


def _restrict_elasticity(el, patch):
    from .assembly import ElasticitySpec
    return ElasticitySpec(E=np.asarray(el.E, dtype=float)[patch.triangles], nu=el.nu)


# ---------------------------------------------------------------------------
# coarse solver
# ---------------------------------------------------------------------------

class CoarseSolver:
    """L1 time stepping of the projected system; stores coarse history only."""

    def __init__(self, fine, ms: MultiscaleSpace, m):
        if (np.any(fine.dirichlet_values(0.0) != 0.0)
                or np.any(fine.dirichlet_values(fine.t_final) != 0.0)):
            raise ConfigurationError("coarse solver requires homogeneous Dirichlet data")
        self.fine = fine
        self.m = m
        lay = fine.layout
        R_p, R_u = ms.projection(m)

        free_p = np.ones(lay.n_p, dtype=bool)
        free_u = np.ones(lay.n_u, dtype=bool)
        pd = fine.dirichlet_dofs[fine.dirichlet_dofs < lay.n_p]
        ud = fine.dirichlet_dofs[fine.dirichlet_dofs >= lay.n_p] - lay.n_p
        free_p[pd] = False
        free_u[ud] = False
        self.free_p = np.nonzero(free_p)[0]
        self.free_u = np.nonzero(free_u)[0]
        self.Rp = R_p[:, self.free_p].tocsr()
        self.Ru = R_u[:, self.free_u].tocsr()
        self.n_cp = self.Rp.shape[0]
        self.n_cu = self.Ru.shape[0]

        sm = fine.sm
        nC = len(fine.continua)
        # per-continuum fine matrices embedded in the stacked free spaces
        self.Mh, self.Dh = [], []
        for i in range(nC):
            Mbar = _embed(sm.M[i], lay, i, i)
            Dbar = _embed_rect(sm.D[i], lay, i)
            self.Mh.append((self.Rp @ Mbar[self.free_p][:, self.free_p] @ self.Rp.T).tocsr())
            self.Dh.append((self.Rp @ Dbar[self.free_p][:, self.free_u] @ self.Ru.T).tocsr())
        F = coupled_pressure_stiffness(sm)
        self.Fh = (self.Rp @ F[self.free_p][:, self.free_p] @ self.Rp.T).tocsr()
        self.Auh = (self.Ru @ sm.A_u[self.free_u][:, self.free_u] @ self.Ru.T).tocsr()
        Mplain = sp.block_diag(sm.M_plain, format="csr")
        self.Mph = (self.Rp @ Mplain[self.free_p][:, self.free_p] @ self.Rp.T).tocsr()
        self.Muh = (self.Ru @ sm.M_u_plain[self.free_u][:, self.free_u] @ self.Ru.T).tocsr()

        # Pinned coarse DOFs: structurally empty rows (fracture blocks of
        # patches without fractures) and rows linearly dependent on earlier
        # ones (e.g. a fracture piece shared by two patches with proportional
        # partition-of-unity traces).  Dependent rows add nothing to the span,
        # so forcing their coefficients to zero keeps the approximation space
        # while making the coarse system nonsingular.
        self.pin_p = _rank_pins(self.Mph)
        self.pin_u = _rank_pins(self.Muh)

        lhs_pp = self.Fh.copy()
        for i in range(nC):
            lhs_pp = lhs_pp + fine.w_alpha[i].zeta_tau * self.Mh[i]
        lhs_pu = sum(fine.w_beta[i].zeta_tau * self.Dh[i] for i in range(nC))
        lhs_up = sum(Dh.T for Dh in self.Dh)
        lhs = sp.bmat([[lhs_pp, lhs_pu], [lhs_up, self.Auh]], format="csr")
        pins = np.concatenate([self.pin_p, self.n_cp + self.pin_u])
        if pins.size:
            from .assembly import apply_dirichlet_rows
            lhs = apply_dirichlet_rows(lhs, pins)
        self.lhs = lhs
        try:
            self._factor = spla.splu(lhs.tocsc())
        except RuntimeError as exc:
            raise NumericalError(f"coarse factorization failed: {exc}") from exc

        self.p_hist = None
        self.u_hist = None
        self.states = []

    # -- initialization ----------------------------------------------------

    def initialize(self):
        """L2-project the fine initial pressure, then the coarse elastostatic
        solve for the initial displacement."""
        fine = self.fine
        lay = fine.layout
        p0_full = np.full(lay.n_p, float(fine.p0))
        pd_mask = fine.dirichlet_dofs < lay.n_p
        p0_full[fine.dirichlet_dofs[pd_mask]] = 0.0
        Mplain = sp.block_diag(fine.sm.M_plain, format="csr")
        rhs = self.Rp @ (Mplain[self.free_p][:, self.free_p] @ p0_full[self.free_p])
        M = self.Mph
        if self.pin_p.size:
            from .assembly import apply_dirichlet_rows
            M = apply_dirichlet_rows(M, self.pin_p)
            rhs[self.pin_p] = 0.0
        pH0 = spla.spsolve(M.tocsc(), rhs)

        rhs_u = -sum(Dh.T @ pH0 for Dh in self.Dh)
        Au = self.Auh
        if self.pin_u.size:
            from .assembly import apply_dirichlet_rows
            Au = apply_dirichlet_rows(Au, self.pin_u)
            rhs_u[self.pin_u] = 0.0
        uH0 = spla.spsolve(Au.tocsc(), rhs_u)

        self.p_hist = TimeHistory(pH0)
        self.u_hist = TimeHistory(uH0)
        self.states = [(pH0, uH0)]
        return pH0, uH0

    # -- stepping ----------------------------------------------------------

    def build_rhs(self, n):
        if self.p_hist is None or len(self.p_hist) != n:
            raise ContractError("coarse history does not cover steps 0..n-1")
        fine = self.fine
        nC = len(fine.continua)
        rhs_p = np.zeros(self.n_cp)
        for i in range(nC):
            wa, wb = fine.w_alpha[i], fine.w_beta[i]
            mem_p = memory_sum(wa, self.p_hist)
            mem_u = memory_sum(wb, self.u_hist)
            rhs_p += wa.zeta_tau * (self.Mh[i] @ (self.p_hist[n - 1] - mem_p))
            rhs_p += wb.zeta_tau * (self.Dh[i] @ (self.u_hist[n - 1] - mem_u))
        rhs = np.concatenate([rhs_p, np.zeros(self.n_cu)])
        pins = np.concatenate([self.pin_p, self.n_cp + self.pin_u])
        if pins.size:
            rhs[pins] = 0.0
        return rhs

    def _solve(self, rhs):
        x = self._factor.solve(rhs)
        x = x + self._factor.solve(rhs - self.lhs @ x)
        res = np.linalg.norm(self.lhs @ x - rhs)
        scale = np.linalg.norm(rhs)
        if scale > 0 and res > 1e-10 * scale:
            raise NumericalError(f"coarse linear residual {res / scale:.3e} "
                                 "above tolerance")
        return x

    def step(self):
        n = len(self.states)
        x = self._solve(self.build_rhs(n))
        pH, uH = x[:self.n_cp], x[self.n_cp:]
        self.p_hist.append(pH)
        self.u_hist.append(uH)
        self.states.append((pH, uH))
        return pH, uH

    def run(self):
        if not self.states:
            self.initialize()
        while len(self.states) <= self.fine.n_steps:
            self.step()
        return self.states

    # -- reconstruction ----------------------------------------------------

    def downscale(self, pH, uH):
        """Fine-grid fields from coarse coefficients (Dirichlet zeros kept)."""
        lay = self.fine.layout
        p_full = np.zeros(lay.n_p)
        p_full[self.free_p] = self.Rp.T @ pH
        u_full = np.zeros(lay.n_u)
        u_full[self.free_u] = self.Ru.T @ uH
        ps = [p_full[lay.pressure_slice(i)] for i in range(len(self.fine.continua))]
        return ps, u_full


RANK_PIN_RTOL = 1e-12


def _rank_pins(gram: sp.csr_matrix) -> np.ndarray:
    """Indices of Gram-matrix rows outside a maximal well-conditioned subset
    (pivoted Cholesky; greedy on conditional variance, deterministic)."""
    G = np.asarray(gram.todense())
    dmax = float(G.diagonal().max()) if G.size else 0.0
    if dmax <= 0.0:
        return np.arange(G.shape[0])
    c, piv, rank, _ = dla.lapack.dpstrf(G, tol=RANK_PIN_RTOL * dmax, lower=1)
    return np.sort(piv[rank:] - 1).astype(np.int64)


def _embed(mat, lay, i, j):
    """Continuum (i, j) block embedded in the stacked pressure space."""
    blocks = [[None] * len(lay.names) for _ in lay.names]
    for d in range(len(lay.names)):
        blocks[d][d] = sp.csr_matrix((lay.sizes[d], lay.sizes[d]))
    blocks[i][j] = mat
    return sp.bmat(blocks, format="csr")


def _embed_rect(mat, lay, i):
    """Continuum i coupling block embedded in (stacked pressure) x (displacement)."""
    blocks = [[sp.csr_matrix((lay.sizes[d], lay.n_u))] for d in range(len(lay.names))]
    blocks[i][0] = mat
    return sp.bmat(blocks, format="csr")
