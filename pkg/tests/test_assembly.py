import numpy as np
import pytest

from fracbiot.assembly import (ContinuumSpec, ElasticitySpec, ExchangeSpec,
                               apply_dirichlet_rows,
                               assemble_coupling, assemble_elasticity,
                               assemble_exchange, assemble_fracture_mass,
                               assemble_fracture_stiffness,
                               assemble_manufactured_fracture_source,
                               assemble_manufactured_source, assemble_mass,
                               assemble_stiffness, assemble_system,
                               assemble_vector_mass, coupled_pressure_stiffness,
                               exchange_diagonal)
from fracbiot.errors import ContractError, DataError
from fracbiot.mesh import make_fine_mesh
from fracbiot.meshgen import rectangle_mesh


def unit_right_triangle():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2]])
    tags = {"left": [0, 2], "right": [1], "bottom": [0, 1], "top": [2]}
    return make_fine_mesh(nodes, tris, np.zeros(1, dtype=np.int64),
                          np.zeros((0, 2), dtype=np.int64), tags)


def test_unit_triangle_stiffness():
    A = assemble_stiffness(unit_right_triangle(), 1.0).toarray()
    expected = np.array([[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]])
    assert np.allclose(A, expected, atol=1e-14)


def test_unit_triangle_mass():
    M = assemble_mass(unit_right_triangle(), 1.0).toarray()
    expected = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24.0
    assert np.allclose(M, expected, atol=1e-15)


def test_stiffness_zero_row_sums():
    mesh = rectangle_mesh((0.0, 0.0, 2.0, 1.0), 6, 3)
    k = 1.0 + np.arange(mesh.n_triangles, dtype=float)
    A = assemble_stiffness(mesh, k)
    assert np.abs(A @ np.ones(mesh.n_nodes)).max() < 1e-12
    assert np.abs((A - A.T).data).max() < 1e-14 if (A - A.T).nnz else True


def test_mass_integrates_area():
    mesh = rectangle_mesh((0.0, 0.0, 2.0, 1.0), 4, 4)
    M = assemble_mass(mesh, 1.0)
    assert np.ones(mesh.n_nodes) @ (M @ np.ones(mesh.n_nodes)) == pytest.approx(2.0)


def test_elasticity_rigid_body_kernel():
    mesh = rectangle_mesh((0.0, 0.0, 1.0, 1.0), 5, 5)
    A = assemble_elasticity(mesh, ElasticitySpec(E=7.0, nu=0.3))
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    for mode in (np.tile([1.0, 0.0], mesh.n_nodes),
                 np.tile([0.0, 1.0], mesh.n_nodes),
                 np.column_stack([-y, x]).reshape(-1)):   # rotation
        assert np.abs(A @ mode).max() < 1e-12
    v = np.random.default_rng(0).standard_normal(2 * mesh.n_nodes)
    assert v @ (A @ v) >= -1e-12


def test_coupling_dilation():
    # int gamma div(u) over the domain for u = (x, y): div = 2, area 1
    mesh = rectangle_mesh((0.0, 0.0, 1.0, 1.0), 4, 4)
    D = assemble_coupling(mesh, 0.5)
    u = mesh.nodes.reshape(-1)
    assert np.ones(mesh.n_nodes) @ (D @ u) == pytest.approx(0.5 * 2.0)


def test_fracture_matrices_on_diagonal():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    tags = {"left": [0, 3], "right": [1, 2], "bottom": [0, 1], "top": [2, 3]}
    mesh = make_fine_mesh(nodes, tris, np.zeros(2, dtype=np.int64),
                          np.array([[0, 2]]), tags)
    h = np.sqrt(2.0)
    Af = assemble_fracture_stiffness(mesh, 2.0).toarray()
    assert np.allclose(Af, (2.0 / h) * np.array([[1, -1], [-1, 1]]))
    Mf = assemble_fracture_mass(mesh, 3.0).toarray()
    assert np.allclose(Mf, 3.0 * h * np.array([[2, 1], [1, 2]]) / 6.0)
    assert Mf.sum() == pytest.approx(3.0 * h)


def test_bulk_fracture_exchange_mass():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    tags = {"left": [0, 3], "right": [1, 2], "bottom": [0, 1], "top": [2, 3]}
    mesh = make_fine_mesh(nodes, tris, np.zeros(2, dtype=np.int64),
                          np.array([[0, 2]]), tags)
    cb = ContinuumSpec("m", "bulk", 1.0, 1.0)
    cf = ContinuumSpec("f", "fracture", 1.0, 1.0)
    Q = assemble_exchange(mesh, cb, cf, 1.0)
    assert Q.shape == (4, 2)
    assert Q.sum() == pytest.approx(np.sqrt(2.0))          # int eta along edge
    Qd = exchange_diagonal(mesh, cb, cf, 1.0)
    assert Qd.shape == (4, 4) and Qd.sum() == pytest.approx(np.sqrt(2.0))
    with pytest.raises(ContractError):
        assemble_exchange(mesh, cf, cf, 1.0)


def test_manufactured_source_linear_moment():
    mesh = rectangle_mesh((0.0, 0.0, 1.0, 1.0), 6, 6)
    load = assemble_manufactured_source(mesh, lambda x, y: x)
    assert load.sum() == pytest.approx(0.5, rel=1e-12)     # int x over square


def test_fracture_source_matches_edge_mass():
    mesh = rectangle_mesh((0.0, 0.0, 1.0, 1.0), 4, 4,
                          fractures=[((0.0, 0.5), (1.0, 0.5))])
    load = assemble_manufactured_fracture_source(mesh, lambda x, y: 2.0 * x + 1.0)
    x = mesh.nodes[mesh.fracture_nodes, 0]
    ref = assemble_fracture_mass(mesh, 1.0) @ (2.0 * x + 1.0)
    assert np.allclose(load, ref, atol=1e-14)
    assert load.sum() == pytest.approx(2.0)                # int (2x+1) over [0,1]


def test_dirichlet_row_replacement():
    mesh = rectangle_mesh((0.0, 0.0, 1.0, 1.0), 3, 3)
    A = assemble_stiffness(mesh, 1.0)
    out = apply_dirichlet_rows(A, np.array([0, 5]))
    d = out.toarray()
    assert d[0, 0] == 1.0 and np.abs(np.delete(d[0], 0)).max() == 0.0
    assert d[5, 5] == 1.0 and np.abs(np.delete(d[5], 5)).max() == 0.0
    assert np.allclose(np.delete(d, [0, 5], axis=0),
                       np.delete(A.toarray(), [0, 5], axis=0))


def test_spec_validation():
    with pytest.raises(DataError):
        ContinuumSpec("m", "bulk", -1.0, 1.0)
    with pytest.raises(DataError):
        ContinuumSpec("m", "bulk", 1.0, 0.0)
    with pytest.raises(DataError):
        ContinuumSpec("m", "weird", 1.0, 1.0)
    with pytest.raises(DataError):
        ElasticitySpec(E=1.0, nu=0.5)
    with pytest.raises(DataError):
        ContinuumSpec("m", "bulk", 1.0, 1.0, alpha=1.2)


def test_assembled_system_layout(biot_setup):
    mesh, continua, exch, el = biot_setup
    sm = assemble_system(mesh, continua, exch, el)
    lay = sm.layout
    assert lay.names == ("matrix", "fracture")
    assert lay.sizes == (mesh.n_nodes, mesh.n_fracture_dofs)
    assert lay.n_u == 2 * mesh.n_nodes
    assert lay.pressure_slice(1) == slice(mesh.n_nodes,
                                          mesh.n_nodes + mesh.n_fracture_dofs)
    F = coupled_pressure_stiffness(sm)
    assert F.shape == (lay.n_p, lay.n_p)
    assert np.abs((F - F.T).data).max() < 1e-12 if (F - F.T).nnz else True
    # coupled operator kills the all-continua constant
    assert np.abs(F @ np.ones(lay.n_p)).max() < 1e-12


def test_vector_mass_integrates():
    mesh = rectangle_mesh((0.0, 0.0, 1.0, 1.0), 3, 3)
    Mv = assemble_vector_mass(mesh, 2.0)
    e = np.tile([1.0, 0.0], mesh.n_nodes)
    assert e @ (Mv @ e) == pytest.approx(2.0)
