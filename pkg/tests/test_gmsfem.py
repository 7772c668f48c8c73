import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from fracbiot.assembly import (ContinuumSpec, ElasticitySpec, ExchangeSpec,
                               assemble_system, coupled_pressure_stiffness)
from fracbiot.errors import ConfigurationError
from fracbiot.fine_solver import DirichletBC, FineSolver, roller_bc
from fracbiot.gmsfem import (CoarseSolver, build_multiscale_space,
                             compute_displacement_snapshots,
                             compute_pressure_snapshots, extract_patch_mesh,
                             solve_spectral)
from fracbiot.mesh import build_coarse_grid, build_patches, partition_of_unity
from fracbiot.meshgen import rectangle_mesh


def _space(mesh, continua, exch, el, m_max, nc=2, threads=1):
    ext = mesh.extents()
    cg = build_coarse_grid(ext, nc, nc)
    patches = build_patches(cg, mesh)
    pou = partition_of_unity(cg, mesh)
    ms = build_multiscale_space(mesh, cg, patches, pou, continua, exch, el,
                                m_max, threads=threads)
    return cg, patches, pou, ms


@pytest.fixture(scope="module")
def fractured_space():
    mesh = rectangle_mesh((0.0, 0.0, 1.0, 1.0), 8, 8,
                          fractures=[((0.0, 0.5), (1.0, 0.5))])
    continua = [ContinuumSpec("matrix", "bulk", 0.1, 1.0, gamma=0.1),
                ContinuumSpec("fracture", "fracture", 1e-3, 1.0)]
    exch = ExchangeSpec()
    exch.set("matrix", "fracture", 1.0)
    el = ElasticitySpec(E=1.0, nu=0.3)
    cg, patches, pou, ms = _space(mesh, continua, exch, el, 4)
    return mesh, continua, exch, el, cg, patches, pou, ms


def _local_setup(mesh, patch, continua, exch, el):
    pm = extract_patch_mesh(mesh, patch)
    sub_continua = [ContinuumSpec(s.name, s.support, s.c, s.k, s.gamma,
                                  s.alpha, s.beta) for s in continua]
    sm = assemble_system(pm.mesh, sub_continua, exch, el)
    return pm, sm


def test_pressure_snapshots_satisfy_local_pde(fractured_space):
    mesh, continua, exch, el, cg, patches, pou, ms = fractured_space
    patch = patches[4]                       # interior vertex of the 3x3
    pm, sm = _local_setup(mesh, patch, continua, exch, el)
    snaps = compute_pressure_snapshots(pm, sm, ["bulk", "fracture"], patch.vertex)
    A = coupled_pressure_stiffness(sm)
    interior = np.setdiff1d(np.arange(A.shape[0]), snaps.boundary_dofs)
    res = (A @ snaps.columns)[interior]
    assert np.abs(res).max() < 1e-10
    # boundary rows carry exactly the prescribed deltas
    bnd_block = snaps.columns[snaps.boundary_dofs]
    assert np.array_equal(bnd_block, np.eye(len(snaps.boundary_dofs)))


def test_snapshot_decoupling_without_exchange():
    mesh = rectangle_mesh((0.0, 0.0, 1.0, 1.0), 6, 6)
    continua = [ContinuumSpec("a", "bulk", 1.0, 1.0),
                ContinuumSpec("b", "bulk", 1.0, 2.0)]
    cg = build_coarse_grid((0.0, 0.0, 1.0, 1.0), 2, 2)
    patches = build_patches(cg, mesh)
    patch = patches[4]
    pm, sm = _local_setup(mesh, patch, continua, ExchangeSpec(),
                          ElasticitySpec(1.0, 0.3))
    snaps = compute_pressure_snapshots(pm, sm, ["bulk", "bulk"], patch.vertex)
    # snapshot of a continuum-a delta is zero on continuum b, and equals the
    # scalar harmonic extension on continuum a
    n_loc = pm.mesh.n_nodes
    col = snaps.columns[:, 0]
    assert np.abs(col[n_loc:]).max() == 0.0
    A_scalar = sm.A[0]
    bl = np.array(sorted(set(int(b) for b in snaps.boundary_dofs if b < n_loc)))
    il = np.setdiff1d(np.arange(n_loc), bl)
    g = np.zeros(len(bl))
    g[np.searchsorted(bl, snaps.boundary_dofs[0])] = 1.0
    x = spla.spsolve(A_scalar[il][:, il].tocsc(), -A_scalar[il][:, bl] @ g)
    ref = np.zeros(n_loc)
    ref[il] = x
    ref[bl] = g
    assert np.allclose(col[:n_loc], ref, atol=1e-12)


def test_snapshot_superposition_gives_constant(fractured_space):
    mesh, continua, exch, el, cg, patches, pou, ms = fractured_space
    patch = patches[4]
    pm, sm = _local_setup(mesh, patch, continua, exch, el)
    snaps = compute_pressure_snapshots(pm, sm, ["bulk", "fracture"], patch.vertex)
    combo = snaps.columns.sum(axis=1)        # all-ones boundary data everywhere
    assert np.abs(combo - 1.0).max() < 1e-10


def test_displacement_snapshots(fractured_space):
    mesh, continua, exch, el, cg, patches, pou, ms = fractured_space
    patch = patches[4]
    pm, sm = _local_setup(mesh, patch, continua, exch, el)
    snaps = compute_displacement_snapshots(pm, sm, patch.vertex)
    assert snaps.columns.shape[1] == 2 * len(patch.boundary_nodes)
    interior = np.setdiff1d(np.arange(2 * pm.mesh.n_nodes), snaps.boundary_dofs)
    assert np.abs((sm.A_u @ snaps.columns)[interior]).max() < 1e-10
    # sum of all x-deltas -> rigid translation (1, 0)
    xcols = snaps.columns[:, snaps.boundary_dofs % 2 == 0]
    rigid = xcols.sum(axis=1)
    assert np.allclose(rigid[0::2], 1.0, atol=1e-10)
    assert np.abs(rigid[1::2]).max() < 1e-10


def test_spectral_properties(fractured_space):
    mesh, continua, exch, el, cg, patches, pou, ms = fractured_space
    for l in range(cg.n_vertices):
        lam = ms.pressure_eigenvalues[l]
        assert np.all(np.diff(lam) >= -1e-12)             # ascending
        assert lam[0] >= -1e-10
        assert abs(lam[0]) < 1e-8                          # coupled constant mode
        assert ms.pressure_residuals[l].max() < 1e-8
        lam_u = ms.displacement_eigenvalues[l]
        assert lam_u[0] >= -1e-10
        assert np.abs(lam_u[:2]).max() < 1e-8              # two rigid modes
        assert ms.displacement_residuals[l].max() < 1e-8


def test_spectral_orthonormality(fractured_space):
    mesh, continua, exch, el, cg, patches, pou, ms = fractured_space
    patch = patches[4]
    pm, sm = _local_setup(mesh, patch, continua, exch, el)
    from fracbiot.assembly import assemble_fracture_mass, assemble_mass
    S = sp.block_diag([assemble_mass(pm.mesh, 1.0),
                       assemble_fracture_mass(pm.mesh, 1.0)], format="csr")
    A = coupled_pressure_stiffness(sm)
    snaps = compute_pressure_snapshots(pm, sm, ["bulk", "fracture"], patch.vertex)
    spec = solve_spectral(A, S, snaps, 4, patch.vertex)
    G = spec.vectors.T @ (S @ spec.vectors)
    assert np.abs(G - np.eye(4)).max() < 1e-10


def test_requesting_too_many_eigenpairs():
    mesh = rectangle_mesh((0.0, 0.0, 1.0, 1.0), 4, 4)
    continua = [ContinuumSpec("m", "bulk", 1.0, 1.0, gamma=0.1)]
    with pytest.raises(ConfigurationError):
        _space(mesh, continua, ExchangeSpec(), ElasticitySpec(1.0, 0.3), 500)


def test_dof_accounting(fractured_space):
    mesh, continua, exch, el, cg, patches, pou, ms = fractured_space
    nv = cg.n_vertices
    for m in (1, 2, 4):
        Rp, Ru = ms.projection(m)
        assert Rp.shape[0] == 2 * m * nv and Ru.shape[0] == m * nv
        assert ms.n_coarse_dofs(m) == 3 * m * nv
    with pytest.raises(ConfigurationError):
        ms.projection(5)


def test_basis_rows_local_support(fractured_space):
    mesh, continua, exch, el, cg, patches, pou, ms = fractured_space
    Rp, Ru = ms.projection(ms.m_max)
    n = mesh.n_nodes
    rows_per_vertex = 2 * ms.m_max
    for l, patch in enumerate(patches):
        allowed = set(patch.nodes.tolist())
        for r in range(l * rows_per_vertex, (l + 1) * rows_per_vertex):
            cols = Rp[r].indices
            bulk_cols = cols[cols < n]
            assert set(bulk_cols.tolist()) <= allowed


def test_truncation_equals_direct_build(fractured_space):
    mesh, continua, exch, el, cg, patches, pou, ms = fractured_space
    ms2 = build_multiscale_space(mesh, cg, patches, pou, continua, exch, el, 2)
    Rp_t, Ru_t = ms.projection(2)
    Rp_d, Ru_d = ms2.projection(2)
    assert abs(Rp_t - Rp_d).max() < 1e-10
    assert abs(Ru_t - Ru_d).max() < 1e-10


def test_threaded_build_identical(fractured_space):
    mesh, continua, exch, el, cg, patches, pou, ms = fractured_space
    ms4 = build_multiscale_space(mesh, cg, patches, pou, continua, exch, el,
                                 ms.m_max, threads=4)
    assert abs(ms.R_p - ms4.R_p).max() == 0.0
    assert abs(ms.R_u - ms4.R_u).max() == 0.0


def _fine_solver(mesh, continua, exch, el, n_steps=5, alpha=None):
    if alpha is not None:
        continua = [ContinuumSpec(s.name, s.support, s.c, s.k, s.gamma,
                                  alpha, alpha) for s in continua]
    bc = roller_bc() + [DirichletBC("matrix", ("left",))]
    return FineSolver(mesh, continua, exch, el, bc, t_final=1.0,
                      n_steps=n_steps, p0=1.0)


def test_coarse_matrices_symmetry_psd(fractured_space):
    mesh, continua, exch, el, cg, patches, pou, ms = fractured_space
    fine = _fine_solver(mesh, continua, exch, el)
    cs = CoarseSolver(fine, ms, 2)
    for Mh in cs.Mh + [cs.Fh, cs.Auh, cs.Mph]:
        d = (Mh - Mh.T)
        assert (np.abs(d.data).max() if d.nnz else 0.0) < 1e-12
    w = np.linalg.eigvalsh(cs.Auh.toarray())
    assert w.min() >= -1e-10
    w = np.linalg.eigvalsh(cs.Fh.toarray())
    assert w.min() >= -1e-10


def test_coarse_history_count(fractured_space):
    mesh, continua, exch, el, cg, patches, pou, ms = fractured_space
    fine = _fine_solver(mesh, continua, exch, el, n_steps=10)
    fine.run()
    cs = CoarseSolver(fine, ms, 2)
    cs.run()
    assert len(cs.states) == 11 and len(cs.p_hist) == 11


def test_downscale_definitions(fractured_space):
    mesh, continua, exch, el, cg, patches, pou, ms = fractured_space
    fine = _fine_solver(mesh, continua, exch, el)
    cs = CoarseSolver(fine, ms, 2)
    ps, u = cs.downscale(np.zeros(cs.n_cp), np.zeros(cs.n_cu))
    assert all(np.abs(p).max() == 0.0 for p in ps) and np.abs(u).max() == 0.0
    e3 = np.zeros(cs.n_cp)
    e3[3] = 1.0
    ps, _ = cs.downscale(e3, np.zeros(cs.n_cu))
    stacked = np.concatenate(ps)
    free_vals = np.zeros(fine.layout.n_p)
    free_vals[cs.free_p] = cs.Rp[3].toarray().ravel()
    assert np.allclose(stacked, free_vals, atol=1e-14)


def test_projection_idempotence_on_span(fractured_space):
    mesh, continua, exch, el, cg, patches, pou, ms = fractured_space
    fine = _fine_solver(mesh, continua, exch, el)
    cs = CoarseSolver(fine, ms, 3)
    rng = np.random.default_rng(5)
    xc = rng.standard_normal(cs.n_cp)
    xc[cs.pin_p] = 0.0
    f = cs.Rp.T @ xc                     # a field already in the span
    sol, *_ = np.linalg.lstsq(cs.Rp.T.toarray(), f, rcond=None)
    assert np.linalg.norm(cs.Rp.T @ sol - f) < 1e-10 * max(np.linalg.norm(f), 1.0)


def test_coarse_classical_limit_matches_projected_backward_euler(fractured_space):
    mesh, continua, exch, el, cg, patches, pou, ms = fractured_space
    fine = _fine_solver(mesh, continua, exch, el, n_steps=4, alpha=1.0)
    fine.initialize()
    cs = CoarseSolver(fine, ms, 3)
    cs.run()
    # independent projected stepper with explicit first-order differences
    tau = fine.tau
    nC = len(continua)
    pH, uH = cs.states[0]
    lhs = cs.lhs
    lu = spla.splu(lhs.tocsc())
    pins = np.concatenate([cs.pin_p, cs.n_cp + cs.pin_u])
    for n in range(1, 5):
        rhs_p = sum(cs.Mh[i] @ pH + cs.Dh[i] @ uH for i in range(nC)) / tau
        rhs = np.concatenate([rhs_p, np.zeros(cs.n_cu)])
        rhs[pins] = 0.0
        x = lu.solve(rhs)
        x = x + lu.solve(rhs - lhs @ x)
        pH, uH = x[:cs.n_cp], x[cs.n_cp:]
        pr, ur = cs.states[n]
        assert np.linalg.norm(pH - pr) <= 1e-11 * np.linalg.norm(pr)
        assert np.linalg.norm(uH - ur) <= 1e-11 * max(np.linalg.norm(ur), 1e-30)


def test_error_decreases_with_basis_count(fractured_space):
    mesh, continua, exch, el, cg, patches, pou, ms = fractured_space
    fine = _fine_solver(mesh, continua, exch, el, n_steps=5)
    fine.run()
    errs = []
    for m in (1, 2, 4):
        cs = CoarseSolver(fine, ms, m)
        cs.run()
        ps, u = cs.downscale(*cs.states[-1])
        ref = fine.states[-1].pressures[0]
        errs.append(np.linalg.norm(ps[0] - ref) / np.linalg.norm(ref))
    assert errs[0] >= errs[1] >= errs[2]
    assert errs[2] < 0.05


def test_rank_pinning_handles_cell_diagonal_fracture():
    # a fracture along a coarse-cell diagonal makes two patches' POU traces
    # proportional; the coarse Gram is then rank-deficient and the dependent
    # rows must be pinned for the solve to stay well-posed
    mesh = rectangle_mesh((0.0, 0.0, 1.0, 1.0), 8, 8,
                          fractures=[((0.0, 0.5), (0.5, 1.0))])
    continua = [ContinuumSpec("matrix", "bulk", 0.1, 1.0, gamma=0.1),
                ContinuumSpec("fracture", "fracture", 1e-3, 1.0)]
    exch = ExchangeSpec()
    exch.set("matrix", "fracture", 1.0)
    el = ElasticitySpec(E=1.0, nu=0.3)
    cg, patches, pou, ms = _space(mesh, continua, exch, el, 1)
    fine = _fine_solver(mesh, continua, exch, el)
    fine.run()
    cs = CoarseSolver(fine, ms, 1)
    assert cs.pin_p.size > 0
    cs.run()                                 # residual-checked internally
    ps, _ = cs.downscale(*cs.states[-1])
    assert np.isfinite(ps[0]).all()
