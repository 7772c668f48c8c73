#!/usr/bin/env python3
"""Generate the deterministic experiment meshes into meshes/.

The fractured mesh is a 110x110 structured triangulation of (0,50)^2 (24200
triangles, 12321 nodes) with five fracture segments following grid lines and
cell diagonals; all segment endpoints and intersections are multiples of 5,
so they coincide with fine nodes and with 10x10 coarse-grid lines.
"""

import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from fracbiot.mesh import write_fine_mesh
from fracbiot.meshgen import rectangle_mesh

EXTENTS = (0.0, 0.0, 50.0, 50.0)
NX = NY = 110

FRACTURES = [
    ((5.0, 15.0), (45.0, 15.0)),    # horizontal
    ((30.0, 10.0), (30.0, 40.0)),   # vertical, crosses the first at (30, 15)
    ((5.0, 30.0), (20.0, 45.0)),    # diagonal (slope +1)
    ((25.0, 5.0), (40.0, 20.0)),    # diagonal, crosses the first at (35, 15)
    ((10.0, 35.0), (30.0, 35.0)),   # horizontal, meets the others at nodes
]


def main():
    out = pathlib.Path(__file__).resolve().parents[1] / "meshes"
    out.mkdir(exist_ok=True)
    mesh = rectangle_mesh(EXTENTS, NX, NY, fractures=FRACTURES)
    path = out / "seed0_fractured.txt"
    write_fine_mesh(mesh, path)
    print(f"{path}: {mesh.n_nodes} nodes, {mesh.n_triangles} triangles, "
          f"{mesh.fracture_edges.shape[0]} fracture edges, "
          f"{mesh.n_fracture_dofs} fracture DOFs")


if __name__ == "__main__":
    main()
