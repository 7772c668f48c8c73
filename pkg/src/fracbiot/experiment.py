"""End-to-end experiment: fine reference run, multiscale sweep over basis
counts, error tables and field exports.

The multiscale space is built once at the largest requested basis count and
truncated for smaller counts (the eigenpair selection is ascending, so a
truncation equals a direct computation at the smaller count).
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .analysis import (ErrorReport, ErrorRow, export_vtk, nodal_fracture_field,
                       relative_energy_error, relative_l2_error,
                       write_error_series, write_error_table)
from .fine_solver import FineSolver
from .gmsfem import CoarseSolver, build_multiscale_space
from .mesh import build_coarse_grid, build_patches, partition_of_unity
from .scenario import Scenario


def _field_errors(fine_state_ps, fine_u, ms_ps, ms_u, weights, bulk_idx):
    rec = {"eL2_u": relative_l2_error(fine_u, ms_u, weights["Mu"]),
           "eH1_u": relative_energy_error(fine_u, ms_u, weights["Au"])}
    for col, i in enumerate(bulk_idx):
        rec[f"eL2_p{col + 1}"] = relative_l2_error(
            fine_state_ps[i], ms_ps[i], weights["Mp"][i])
        rec[f"eH1_p{col + 1}"] = relative_energy_error(
            fine_state_ps[i], ms_ps[i], weights["Ap"][i])
    return rec


def run_experiment(scn: Scenario, out_dir=None, threads=1) -> ErrorReport:
    out = Path(out_dir) if out_dir is not None else scn.path.parent / "out"
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"scenario": str(scn.path), "seed": scn.seed, "threads": threads,
                "stages": {}}

    t0 = time.perf_counter()
    mesh = scn.load_mesh()
    continua, exchange, elasticity, bc = scn.resolve(mesh)
    cg = build_coarse_grid(mesh.extents(), scn.coarse_nx, scn.coarse_ny)
    patches = build_patches(cg, mesh)
    pou = partition_of_unity(cg, mesh)
    manifest["stages"]["setup_s"] = time.perf_counter() - t0
    manifest["mesh"] = {"nodes": mesh.n_nodes, "triangles": mesh.n_triangles,
                        "fracture_dofs": mesh.n_fracture_dofs}

    t0 = time.perf_counter()
    fine = FineSolver(mesh, continua, exchange, elasticity, bc,
                      t_final=scn.t_final, n_steps=scn.n_steps, p0=scn.p0)
    fine.run()
    manifest["stages"]["fine_s"] = time.perf_counter() - t0

    bulk_idx = [i for i, s in enumerate(continua) if s.support == "bulk"]
    names = [continua[i].name for i in bulk_idx]
    weights = {"Mu": fine.sm.M_u_plain, "Au": fine.sm.A_u,
               "Mp": fine.sm.M_plain, "Ap": fine.sm.A}

    for n in scn.vtk_steps:
        st = fine.states[n]
        fields = {continua[i].name: st.pressures[i] for i in bulk_idx}
        for i, s in enumerate(continua):
            if s.support == "fracture":
                fields[s.name] = nodal_fracture_field(mesh, st.pressures[i])
        export_vtk(mesh, fields, st.u, out / f"fine_step{n}.vtk")

    t0 = time.perf_counter()
    m_max = max(scn.basis_counts)
    ms = build_multiscale_space(mesh, cg, patches, pou, continua, exchange,
                                elasticity, m_max, threads=threads)
    manifest["stages"]["basis_s"] = time.perf_counter() - t0
    manifest["max_eigen_residual"] = float(
        max(max(r.max() for r in ms.pressure_residuals),
            max(r.max() for r in ms.displacement_residuals)))

    report = ErrorReport(continuum_names=names)
    t0 = time.perf_counter()
    for m in scn.basis_counts:
        cs = CoarseSolver(fine, ms, m)
        cs.run()
        series = []
        for n in range(1, scn.n_steps + 1):
            ps, u = cs.downscale(*cs.states[n])
            series.append(_field_errors(fine.states[n].pressures,
                                        fine.states[n].u, ps, u,
                                        weights, bulk_idx))
        final = series[-1]
        report.add_row(ErrorRow(
            m=m, dof_h=cs.n_cp + cs.n_cu,
            e_l2_u=final["eL2_u"], e_h1_u=final["eH1_u"],
            e_l2_p=[final[f"eL2_p{c + 1}"] for c in range(len(bulk_idx))],
            e_h1_p=[final[f"eH1_p{c + 1}"] for c in range(len(bulk_idx))]))
        report.series[m] = series

        if m == m_max:
            for n in scn.vtk_steps:
                ps, u = cs.downscale(*cs.states[n])
                fields = {continua[i].name: ps[i] for i in bulk_idx}
                for i, s in enumerate(continua):
                    if s.support == "fracture":
                        fields[s.name] = nodal_fracture_field(mesh, ps[i])
                export_vtk(mesh, fields, u, out / f"ms_M{m}_step{n}.vtk")
    manifest["stages"]["coarse_sweep_s"] = time.perf_counter() - t0

    write_error_table(report, out / "errors.csv")
    write_error_series(report, out / "errors_series.csv")
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return report


def run_fine_only(scn: Scenario, out_dir=None):
    """Reference solve + exports, no multiscale sweep."""
    out = Path(out_dir) if out_dir is not None else scn.path.parent / "out"
    out.mkdir(parents=True, exist_ok=True)
    mesh = scn.load_mesh()
    continua, exchange, elasticity, bc = scn.resolve(mesh)
    fine = FineSolver(mesh, continua, exchange, elasticity, bc,
                      t_final=scn.t_final, n_steps=scn.n_steps, p0=scn.p0)
    fine.run()
    bulk_idx = [i for i, s in enumerate(continua) if s.support == "bulk"]
    for n in scn.vtk_steps:
        st = fine.states[n]
        fields = {continua[i].name: st.pressures[i] for i in bulk_idx}
        for i, s in enumerate(continua):
            if s.support == "fracture":
                fields[s.name] = nodal_fracture_field(mesh, st.pressures[i])
        export_vtk(mesh, fields, st.u, out / f"fine_step{n}.vtk")
    return fine


def dump_basis(scn: Scenario, out_dir=None, threads=1):
    """Build the multiscale space at max basis count and dump it to disk
    (matrix market for the projection blocks, CSV for the eigenvalues)."""
    from scipy.io import mmwrite
    out = Path(out_dir) if out_dir is not None else scn.path.parent / "out"
    out.mkdir(parents=True, exist_ok=True)
    mesh = scn.load_mesh()
    continua, exchange, elasticity, bc = scn.resolve(mesh)
    cg = build_coarse_grid(mesh.extents(), scn.coarse_nx, scn.coarse_ny)
    patches = build_patches(cg, mesh)
    pou = partition_of_unity(cg, mesh)
    ms = build_multiscale_space(mesh, cg, patches, pou, continua, exchange,
                                elasticity, max(scn.basis_counts), threads=threads)
    mmwrite(out / "R_p.mtx", sp.coo_matrix(ms.R_p))
    mmwrite(out / "R_u.mtx", sp.coo_matrix(ms.R_u))
    with open(out / "eigenvalues.csv", "w") as fh:
        fh.write("vertex,kind,index,eigenvalue\n")
        for l in range(ms.n_vertices):
            for k, lam in enumerate(ms.pressure_eigenvalues[l]):
                fh.write(f"{l},pressure,{k},{lam:.12e}\n")
            for k, lam in enumerate(ms.displacement_eigenvalues[l]):
                fh.write(f"{l},displacement,{k},{lam:.12e}\n")
    return ms
