"""Scenario files: versioned TOML schema describing one experiment.

Schema (schema_version = 1); unknown keys anywhere are rejected:

    schema_version = 1
    seed = 0                       # master RNG seed for generated fields
    p0 = 1.0                       # initial pressure (optional, default 1)

    [mesh]
    path = "meshes/seed0.txt"      # relative to the scenario file

    [coarse]
    nx = 10
    ny = 10

    [time]
    t_final = 86400.0
    n_steps = 10

    [elasticity]
    e = 1.0                        # number, or a generated-field table (below)
    nu = 0.3

    [[continuum]]                  # one block per continuum, >= 1
    name = "matrix"
    support = "bulk"               # or "fracture"
    c = 0.1
    k = 1.0                        # number, or generated-field table
    gamma = 0.1                    # optional, default 0
    alpha = 1.0                    # optional Caputo order, default 1
    beta = 1.0                     # optional coupling memory order, default 1

    [[exchange]]                   # optional, one block per coupled pair
    between = ["matrix", "fracture"]
    eta = 1.0                      # number, or "5*matrix2": factor times the
                                   # permeability field of the named continuum

    [bc]                           # optional
    roller = true                  # default true: u_x=0 left/right, u_y=0 top/bottom
    [bc.pressure_zero]             # zero-pressure tags per continuum
    matrix = ["left"]

    [sweep]
    basis_counts = [1, 2, 4, 8, 12]

    [output]                       # optional
    vtk_steps = [0, 3, 10]

Generated-field tables replace a number with
    { style = "lognormal-blobs", contrast = 1000.0 }   # optional seed = N
and are resolved per triangle by the synthetic field generator; the seed
defaults to a stable derivation from the master seed and the field's slot.
"""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:            # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import ContinuumSpec, ElasticitySpec, ExchangeSpec
from .errors import ValidationError
from .fields import STYLES, generate_synthetic_field
from .fine_solver import DirichletBC, roller_bc
from .mesh import FineMesh, load_fine_mesh

SCHEMA_VERSION = 1


@dataclass
class Scenario:
    path: Path
    seed: int
    p0: float
    mesh_path: Path
    coarse_nx: int
    coarse_ny: int
    t_final: float
    n_steps: int
    basis_counts: list
    vtk_steps: list
    # raw, unresolved pieces (fields are generated against the loaded mesh)
    elasticity_raw: dict
    continua_raw: list
    exchange_raw: list
    bc_raw: dict

    def load_mesh(self) -> FineMesh:
        return load_fine_mesh(self.mesh_path)

    def resolve(self, mesh: FineMesh):
        """(continua, exchange, elasticity, bc) with all fields materialized."""
        continua = []
        for slot, c in enumerate(self.continua_raw):
            k = _resolve_field(c["k"], mesh, self.seed, 10 + slot)
            continua.append(ContinuumSpec(
                name=c["name"], support=c["support"], c=c["c"], k=k,
                gamma=c["gamma"], alpha=c["alpha"], beta=c["beta"]))
        by_name = {s.name: s for s in continua}

        exch = ExchangeSpec()
        for e in self.exchange_raw:
            na, nb = e["between"]
            eta = e["eta"]
            if isinstance(eta, str):
                factor, ref = _parse_eta_expr(eta)
                if ref not in by_name:
                    raise ValidationError(f"eta refers to unknown continuum {ref!r}")
                eta = factor * np.asarray(by_name[ref].k, dtype=float)
                eta = np.broadcast_to(eta, (mesh.n_triangles,)).copy()
            exch.set(na, nb, eta)

        e_val = _resolve_field(self.elasticity_raw["e"], mesh, self.seed, 3)
        elasticity = ElasticitySpec(E=e_val, nu=self.elasticity_raw["nu"])

        bc = list(roller_bc()) if self.bc_raw.get("roller", True) else []
        for name, tags in self.bc_raw.get("pressure_zero", {}).items():
            if name not in by_name:
                raise ValidationError(f"pressure_zero names unknown continuum {name!r}")
            bc.append(DirichletBC(name, tuple(tags), 0.0))
        return continua, exch, elasticity, bc


def _require(table, name, keys, optional=()):
    unknown = set(table) - set(keys) - set(optional)
    if unknown:
        raise ValidationError(f"[{name}]: unknown keys {sorted(unknown)}")
    missing = set(keys) - set(table)
    if missing:
        raise ValidationError(f"[{name}]: missing keys {sorted(missing)}")


def _resolve_field(raw, mesh, master_seed, slot):
    if isinstance(raw, (int, float)):
        return float(raw)
    seed = raw.get("seed", master_seed * 1000 + slot)
    return generate_synthetic_field(seed, mesh, float(raw["contrast"]), raw["style"])


def _check_field_value(raw, where):
    if isinstance(raw, (int, float)):
        return
    if not isinstance(raw, dict):
        raise ValidationError(f"{where}: expected a number or a field table")
    _require(raw, where, ("style", "contrast"), optional=("seed",))
    if raw["style"] not in STYLES:
        raise ValidationError(f"{where}: unknown field style {raw['style']!r}")
    if float(raw["contrast"]) < 1.0:
        raise ValidationError(f"{where}: contrast must be >= 1")


def _parse_eta_expr(expr):
    parts = expr.split("*")
    if len(parts) != 2:
        raise ValidationError(f"eta expression {expr!r} is not of the form 'factor*name'")
    try:
        factor = float(parts[0])
    except ValueError as exc:
        raise ValidationError(f"eta expression {expr!r}: bad factor") from exc
    return factor, parts[1].strip()


def parse_scenario(path) -> Scenario:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ValidationError(f"scenario file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: TOML parse error: {exc}") from exc

    _require(doc, "scenario", ("schema_version", "mesh", "coarse", "time",
                               "elasticity", "continuum", "sweep"),
             optional=("seed", "p0", "exchange", "bc", "output"))
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema_version {doc['schema_version']!r} "
                              f"(expected {SCHEMA_VERSION})")

    _require(doc["mesh"], "mesh", ("path",))
    _require(doc["coarse"], "coarse", ("nx", "ny"))
    _require(doc["time"], "time", ("t_final", "n_steps"))
    _require(doc["elasticity"], "elasticity", ("e", "nu"))
    _check_field_value(doc["elasticity"]["e"], "elasticity.e")
    if not 0.0 < float(doc["elasticity"]["nu"]) < 0.5:
        raise ValidationError(f"nu = {doc['elasticity']['nu']} outside (0, 0.5)")

    t_final = float(doc["time"]["t_final"])
    n_steps = int(doc["time"]["n_steps"])
    if t_final <= 0.0 or n_steps < 1:
        raise ValidationError("need t_final > 0 and n_steps >= 1")
    nx, ny = int(doc["coarse"]["nx"]), int(doc["coarse"]["ny"])
    if nx < 1 or ny < 1:
        raise ValidationError("coarse cell counts must be >= 1")

    continua = []
    names = set()
    for c in doc["continuum"]:
        _require(c, "continuum", ("name", "support", "c", "k"),
                 optional=("gamma", "alpha", "beta"))
        if c["name"] in names:
            raise ValidationError(f"duplicate continuum name {c['name']!r}")
        names.add(c["name"])
        if c["support"] not in ("bulk", "fracture"):
            raise ValidationError(f"continuum {c['name']}: bad support {c['support']!r}")
        _check_field_value(c["k"], f"continuum.{c['name']}.k")
        for key in ("alpha", "beta"):
            o = float(c.get(key, 1.0))
            if not 0.0 < o <= 1.0:
                raise ValidationError(
                    f"continuum {c['name']}: {key} = {o} outside (0, 1]")
        continua.append({"name": c["name"], "support": c["support"],
                         "c": float(c["c"]), "k": c["k"],
                         "gamma": float(c.get("gamma", 0.0)),
                         "alpha": float(c.get("alpha", 1.0)),
                         "beta": float(c.get("beta", 1.0))})
    if not continua:
        raise ValidationError("at least one continuum is required")

    exchange = []
    for e in doc.get("exchange", []):
        _require(e, "exchange", ("between", "eta"))
        pair = list(e["between"])
        if len(pair) != 2 or not set(pair) <= names:
            raise ValidationError(f"exchange pair {pair} must name two known continua")
        if isinstance(e["eta"], str):
            _parse_eta_expr(e["eta"])
        exchange.append({"between": pair, "eta": e["eta"]})

    bc = doc.get("bc", {})
    _require(bc, "bc", (), optional=("roller", "pressure_zero"))
    for name in bc.get("pressure_zero", {}):
        if name not in names:
            raise ValidationError(f"pressure_zero names unknown continuum {name!r}")

    _require(doc["sweep"], "sweep", ("basis_counts",))
    sweep = [int(m) for m in doc["sweep"]["basis_counts"]]
    if not sweep or any(m < 1 for m in sweep) or sweep != sorted(sweep):
        raise ValidationError("basis_counts must be positive and ascending")

    out_tbl = doc.get("output", {})
    _require(out_tbl, "output", (), optional=("vtk_steps",))
    vtk_steps = [int(s) for s in out_tbl.get("vtk_steps", [0, n_steps])]
    if any(s < 0 or s > n_steps for s in vtk_steps):
        raise ValidationError("vtk_steps outside [0, n_steps]")

    mesh_path = (path.parent / doc["mesh"]["path"]).resolve()
    if not mesh_path.exists():
        raise ValidationError(f"mesh file not found: {mesh_path}")

    return Scenario(
        path=path, seed=int(doc.get("seed", 0)), p0=float(doc.get("p0", 1.0)),
        mesh_path=mesh_path, coarse_nx=nx, coarse_ny=ny,
        t_final=t_final, n_steps=n_steps,
        basis_counts=sweep, vtk_steps=vtk_steps,
        elasticity_raw=dict(doc["elasticity"]), continua_raw=continua,
        exchange_raw=exchange, bc_raw=dict(bc))
