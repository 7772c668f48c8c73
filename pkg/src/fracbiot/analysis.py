"""Relative error norms, CSV error tables and legacy VTK field export.

L2 errors weight the difference with the plain mass matrix; energy (H1-type)
errors weight with the stiffness (pressures) or elasticity (displacement)
matrix, so constants fall in the kernel of the pressure energy norm.  All
errors are reported in percent.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError
from .mesh import FineMesh


def _weighted_norm2(v, W):
    return float(v @ (W @ v))


def relative_l2_error(y, y_ms, weight) -> float:
    """100 * ((y - y_ms)' W (y - y_ms) / y' W y)^(1/2)."""
    y = np.asarray(y, dtype=float)
    y_ms = np.asarray(y_ms, dtype=float)
    denom = _weighted_norm2(y, weight)
    if denom <= 0.0:
        raise ContractError("reference field has zero weighted norm")
    num = _weighted_norm2(y - y_ms, weight)
    return 100.0 * float(np.sqrt(max(num, 0.0) / denom))


def relative_energy_error(y, y_ms, energy) -> float:
    """Same form with the energy (stiffness / elasticity) matrix as weight."""
    return relative_l2_error(y, y_ms, energy)


@dataclass
class ErrorRow:
    """Final-time errors of one basis count, mirroring one table row."""

    m: int
    dof_h: int
    e_l2_u: float
    e_h1_u: float
    e_l2_p: list          # per continuum
    e_h1_p: list


@dataclass
class ErrorReport:
    continuum_names: list
    rows: list = field(default_factory=list)
    # optional per-step series: m -> list over steps of dicts field -> error
    series: dict = field(default_factory=dict)

    def add_row(self, row: ErrorRow):
        if len(row.e_l2_p) != len(self.continuum_names):
            raise ContractError("row continuum count does not match report")
        self.rows.append(row)


def _table_header(names):
    cols = ["M", "DOF_H", "eL2_u", "eH1_u"]
    for i in range(len(names)):
        cols += [f"eL2_p{i + 1}", f"eH1_p{i + 1}"]
    return cols


def write_error_table(report: ErrorReport, path):
    """CSV: header M,DOF_H,eL2_u,eH1_u,eL2_p1,eH1_p1[,...]; percents, 3 decimals."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_table_header(report.continuum_names))
        for r in report.rows:
            row = [str(r.m), str(r.dof_h), f"{r.e_l2_u:.3f}", f"{r.e_h1_u:.3f}"]
            for el2, eh1 in zip(r.e_l2_p, r.e_h1_p):
                row += [f"{el2:.3f}", f"{eh1:.3f}"]
            w.writerow(row)


def read_error_table(path) -> ErrorReport:
    """Inverse of write_error_table (values at the printed precision)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty error table")
    header = rows[0]
    n_cont = (len(header) - 4) // 2
    if header != _table_header([None] * n_cont):
        raise DataError(f"{path}: unrecognized error-table header {header}")
    rep = ErrorReport(continuum_names=[f"p{i + 1}" for i in range(n_cont)])
    for raw in rows[1:]:
        vals = [float(v) for v in raw[2:]]
        rep.add_row(ErrorRow(m=int(raw[0]), dof_h=int(raw[1]),
                             e_l2_u=vals[0], e_h1_u=vals[1],
                             e_l2_p=vals[2::2], e_h1_p=vals[3::2]))
    return rep


def write_error_series(report: ErrorReport, path):
    """Per-step instantaneous errors, one CSV row per (M, step)."""
    names = report.continuum_names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        cols = ["M", "step", "eL2_u", "eH1_u"]
        for i in range(len(names)):
            cols += [f"eL2_p{i + 1}", f"eH1_p{i + 1}"]
        w.writerow(cols)
        for m in sorted(report.series):
            for n, rec in enumerate(report.series[m]):
                row = [str(m), str(n + 1), f"{rec['eL2_u']:.3f}", f"{rec['eH1_u']:.3f}"]
                for i in range(len(names)):
                    row += [f"{rec[f'eL2_p{i + 1}']:.3f}", f"{rec[f'eH1_p{i + 1}']:.3f}"]
                w.writerow(row)


# ---------------------------------------------------------------------------
# VTK export (legacy ASCII 3.0, unstructured triangle grid)
# ---------------------------------------------------------------------------
#
# Byte layout: header lines, then "POINTS n double" with one "x y 0" line per
# node, "CELLS m 4m" with "3 a b c" per triangle, "CELL_TYPES m" of 5s, then
# "POINT_DATA n" followed by one SCALARS block per pressure field and a
# VECTORS block for the displacement.  Floats printed with repr-roundtrip
# precision (%.17g) so a re-parse recovers the values exactly.

_FMT = "%.17g"


def export_vtk(mesh: FineMesh, pressures: dict, u, path):
    """pressures: ordered mapping name -> nodal values (fracture fields padded
    to nodal length by the caller or given on fracture nodes only == skipped)."""
    u = np.asarray(u, dtype=float)
    if u.shape != (2 * mesh.n_nodes,):
        raise ContractError("displacement vector length != 2 * n_nodes")
    lines = ["# vtk DataFile Version 3.0", "fracbiot fields", "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {mesh.n_nodes} double"]
    for x, y in mesh.nodes:
        lines.append(f"{_FMT % x} {_FMT % y} 0")
    m = mesh.n_triangles
    lines.append(f"CELLS {m} {4 * m}")
    for a, b, c in mesh.triangles:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {m}")
    lines.extend(["5"] * m)
    lines.append(f"POINT_DATA {mesh.n_nodes}")
    for name, vals in pressures.items():
        vals = np.asarray(vals, dtype=float)
        if vals.shape != (mesh.n_nodes,):
            raise ContractError(f"field {name!r} is not nodal (len {vals.size})")
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_FMT % v for v in vals)
    lines.append("VECTORS displacement double")
    for n in range(mesh.n_nodes):
        lines.append(f"{_FMT % u[2 * n]} {_FMT % u[2 * n + 1]} 0")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_vtk_point_data(path):
    """Parse scalars + displacement back out of an exported file (tests)."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]
    i = 0
    n_pts = None
    while i < len(lines):
        if lines[i].startswith("POINT_DATA"):
            n_pts = int(lines[i].split()[1])
            i += 1
            break
        i += 1
    if n_pts is None:
        raise DataError(f"{path}: no POINT_DATA section")
    scalars = {}
    vectors = None
    while i < len(lines):
        tok = lines[i].split()
        if tok and tok[0] == "SCALARS":
            name = tok[1]
            i += 2  # skip LOOKUP_TABLE
            scalars[name] = np.array([float(v) for v in lines[i:i + n_pts]])
            i += n_pts
        elif tok and tok[0] == "VECTORS":
            i += 1
            rows = [list(map(float, lines[i + k].split())) for k in range(n_pts)]
            vectors = np.array(rows)[:, :2].reshape(-1)
            i += n_pts
        else:
            i += 1
    return scalars, vectors


def nodal_fracture_field(mesh: FineMesh, p_f):
    """Embed a fracture-DOF field into a nodal field (zeros off the network)."""
    out = np.zeros(mesh.n_nodes)
    if mesh.n_fracture_dofs:
        out[mesh.fracture_nodes] = np.asarray(p_f, dtype=float)
    return out
