import pathlib
import subprocess
import sys

import numpy as np
import pytest

from fracbiot.assembly import ContinuumSpec, ElasticitySpec, ExchangeSpec
from fracbiot.meshgen import rectangle_mesh

REPO = pathlib.Path(__file__).resolve().parents[1]


@pytest.fixture(scope="session")
def seed0_mesh_path():
    path = REPO / "meshes" / "seed0_fractured.txt"
    if not path.exists():
        subprocess.run([sys.executable, str(REPO / "scripts" / "make_meshes.py")],
                       check=True)
    return path


@pytest.fixture(scope="session")
def unit_square_mesh():
    return rectangle_mesh((0.0, 0.0, 1.0, 1.0), 4, 4)


@pytest.fixture(scope="session")
def small_fractured_mesh():
    # 8x8 cells with the full-width horizontal fracture on a grid line
    return rectangle_mesh((0.0, 0.0, 1.0, 1.0), 8, 8,
                          fractures=[((0.0, 0.5), (1.0, 0.5))])


@pytest.fixture()
def biot_setup(small_fractured_mesh):
    mesh = small_fractured_mesh
    continua = [ContinuumSpec("matrix", "bulk", 0.1, 1.0, gamma=0.1),
                ContinuumSpec("fracture", "fracture", 1e-3, 1.0)]
    exch = ExchangeSpec()
    exch.set("matrix", "fracture", 1.0)
    el = ElasticitySpec(E=1.0, nu=0.3)
    return mesh, continua, exch, el
