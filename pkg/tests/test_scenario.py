from pathlib import Path

import numpy as np
import pytest

from fracbiot.cli import main
from fracbiot.errors import ConfigurationError, ValidationError
from fracbiot.fields import generate_synthetic_field
from fracbiot.meshgen import rectangle_mesh
from fracbiot.scenario import parse_scenario

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def _minimal_toml(mesh_path, extra="", alpha=""):
    return f"""
schema_version = 1
seed = 0

[mesh]
path = "{mesh_path.name}"

[coarse]
nx = 2
ny = 2

[time]
t_final = 1.0
n_steps = 2

[elasticity]
e = 1.0
nu = 0.3

[[continuum]]
name = "matrix"
support = "bulk"
c = 0.1
k = 1.0
gamma = 0.1
{alpha}

[sweep]
basis_counts = [1, 2]
{extra}
"""


@pytest.fixture
def tiny_scenario_dir(tmp_path):
    from fracbiot.mesh import write_fine_mesh
    mesh = rectangle_mesh((0.0, 0.0, 1.0, 1.0), 4, 4)
    mp = tmp_path / "tiny.txt"
    write_fine_mesh(mesh, mp)
    return tmp_path, mp


def test_parse_shipped_fractured_scenario():
    scn = parse_scenario(SCENARIOS / "seed0_fractured.toml")
    assert scn.t_final == 86400.0 and scn.n_steps == 10
    assert scn.coarse_nx == 10 and scn.coarse_ny == 10
    assert scn.basis_counts == [1, 2, 4, 8, 12]
    assert scn.elasticity_raw["nu"] == 0.3
    names = [c["name"] for c in scn.continua_raw]
    assert names == ["matrix", "fracture"]
    assert scn.continua_raw[0]["gamma"] == 0.1
    assert scn.continua_raw[0]["alpha"] == 0.9
    assert scn.mesh_path.exists()


def test_defaults_when_omitted(tiny_scenario_dir):
    tmp, mp = tiny_scenario_dir
    f = tmp / "s.toml"
    f.write_text(_minimal_toml(mp))
    scn = parse_scenario(f)
    assert scn.p0 == 1.0
    assert scn.continua_raw[0]["alpha"] == 1.0
    assert scn.continua_raw[0]["beta"] == 1.0
    assert scn.vtk_steps == [0, 2]
    assert scn.bc_raw == {}


def test_unknown_key_rejected(tiny_scenario_dir):
    tmp, mp = tiny_scenario_dir
    f = tmp / "s.toml"
    f.write_text(_minimal_toml(mp) + "\n[whatever]\nx = 1\n")
    with pytest.raises(ValidationError):
        parse_scenario(f)
    f.write_text(_minimal_toml(mp, extra="[output]\nvtk_steps = [0]\nbogus = 1\n"))
    with pytest.raises(ValidationError):
        parse_scenario(f)


def test_bad_alpha_rejected(tiny_scenario_dir):
    tmp, mp = tiny_scenario_dir
    f = tmp / "s.toml"
    f.write_text(_minimal_toml(mp, alpha="alpha = 1.5"))
    with pytest.raises(ValidationError):
        parse_scenario(f)


def test_bad_schema_version(tiny_scenario_dir):
    tmp, mp = tiny_scenario_dir
    f = tmp / "s.toml"
    f.write_text(_minimal_toml(mp).replace("schema_version = 1",
                                           "schema_version = 99"))
    with pytest.raises(ValidationError):
        parse_scenario(f)


def test_missing_mesh_rejected(tmp_path):
    f = tmp_path / "s.toml"
    f.write_text(_minimal_toml(tmp_path / "nope.txt"))
    with pytest.raises(ValidationError):
        parse_scenario(f)


def test_unsorted_basis_counts_rejected(tiny_scenario_dir):
    tmp, mp = tiny_scenario_dir
    f = tmp / "s.toml"
    f.write_text(_minimal_toml(mp).replace("basis_counts = [1, 2]",
                                           "basis_counts = [2, 1]"))
    with pytest.raises(ValidationError):
        parse_scenario(f)


def test_eta_expression_resolves_to_scaled_permeability():
    scn = parse_scenario(SCENARIOS / "seed0_multicontinuum.toml")
    mesh = scn.load_mesh()
    continua, exch, _, _ = scn.resolve(mesh)
    k2 = dict((c.name, c.k) for c in continua)["matrix2"]
    eta = exch.get("matrix1", "matrix2")
    assert np.array_equal(eta, 5.0 * np.asarray(k2))


def test_eta_unknown_reference(tiny_scenario_dir):
    tmp, mp = tiny_scenario_dir
    f = tmp / "s.toml"
    f.write_text(_minimal_toml(
        mp, extra='[[exchange]]\nbetween = ["matrix", "ghost"]\neta = 1.0\n'))
    with pytest.raises(ValidationError):
        parse_scenario(f)


# ---------------------------------------------------------------------------
# synthetic fields
# ---------------------------------------------------------------------------

def test_field_determinism():
    mesh = rectangle_mesh((0.0, 0.0, 1.0, 1.0), 10, 10)
    a = generate_synthetic_field(42, mesh, 1000.0, "lognormal-blobs")
    b = generate_synthetic_field(42, mesh, 1000.0, "lognormal-blobs")
    assert np.array_equal(a, b)                       # bitwise


def test_field_range_and_contrast():
    mesh = rectangle_mesh((0.0, 0.0, 1.0, 1.0), 10, 10)
    for style in ("layered", "lognormal-blobs"):
        f = generate_synthetic_field(1, mesh, 100.0, style)
        assert f.min() == pytest.approx(1.0) and f.max() == pytest.approx(100.0)
        assert np.all((f >= 1.0) & (f <= 100.0))


def test_field_unit_contrast_constant():
    mesh = rectangle_mesh((0.0, 0.0, 1.0, 1.0), 6, 6)
    f = generate_synthetic_field(5, mesh, 1.0, "layered")
    assert np.array_equal(f, np.ones(mesh.n_triangles))


def test_field_seed_sensitivity():
    mesh = rectangle_mesh((0.0, 0.0, 1.0, 1.0), 10, 10)
    a = generate_synthetic_field(1, mesh, 10.0, "layered")
    b = generate_synthetic_field(2, mesh, 10.0, "layered")
    assert np.abs(a - b).max() / np.abs(a).max() > 0.01


def test_field_domain_errors():
    mesh = rectangle_mesh((0.0, 0.0, 1.0, 1.0), 4, 4)
    with pytest.raises(ConfigurationError):
        generate_synthetic_field(0, mesh, 0.5, "layered")
    with pytest.raises(ConfigurationError):
        generate_synthetic_field(0, mesh, 10.0, "marble")


# ---------------------------------------------------------------------------
# CLI exit codes
# ---------------------------------------------------------------------------

def test_cli_verify_exit_ok(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert "manufactured solution" in out and "FAIL" not in out


def test_cli_bad_scenario_exit_2(tmp_path, capsys):
    f = tmp_path / "bad.toml"
    f.write_text("schema_version = 1\n")
    assert main(["run", "--scenario", str(f)]) == 2
    f.write_text("not toml [[[")
    assert main(["run", "--scenario", str(f), "--out", str(tmp_path)]) == 2
    assert main(["fine", "--scenario", str(tmp_path / "absent.toml")]) == 2


def test_cli_small_run_writes_outputs(tiny_scenario_dir, capsys):
    tmp, mp = tiny_scenario_dir
    f = tmp / "s.toml"
    f.write_text(_minimal_toml(mp))
    out = tmp / "out"
    assert main(["run", "--scenario", str(f), "--out", str(out)]) == 0
    assert (out / "errors.csv").exists()
    assert (out / "errors_series.csv").exists()
    assert (out / "manifest.json").exists()
