"""Structured triangulations of a rectangle with grid-aligned fracture lines.

Experiment meshes are shipped as inputs (see scripts/make_meshes.py); this
module only produces simple structured grids whose cell diagonals run from the
lower-left to the upper-right corner, so fracture segments may follow grid
lines or those diagonals.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .mesh import FineMesh, make_fine_mesh


def rectangle_mesh(extents, nx, ny, fractures=(), region_fn=None) -> FineMesh:
    """Uniform triangulation of a rectangle.

    extents: (x0, y0, x1, y1).
    fractures: iterable of straight segments ((xa, ya), (xb, yb)); every fine
        edge whose endpoints both lie on a segment is tagged as a fracture
        edge, so segments must follow grid lines or cell diagonals.
    region_fn: optional callable (cx, cy) -> int evaluated at triangle
        centroids (vectorized) for piecewise coefficient regions.
    """
    x0, y0, x1, y1 = map(float, extents)
    if nx < 1 or ny < 1 or not (x1 > x0 and y1 > y0):
        raise ConfigurationError("rectangle_mesh needs positive extents and cell counts")

    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    tris = []
    for j in range(ny):
        for i in range(nx):
            v00 = j * (nx + 1) + i
            v10 = v00 + 1
            v01 = v00 + nx + 1
            v11 = v01 + 1
            tris.append((v00, v10, v11))   # lower-right triangle, CCW
            tris.append((v00, v11, v01))   # upper-left triangle, CCW
    tris = np.array(tris, dtype=np.int64)

    region = np.zeros(tris.shape[0], dtype=np.int64)
    if region_fn is not None:
        cen = nodes[tris].mean(axis=1)
        region = np.asarray(region_fn(cen[:, 0], cen[:, 1]), dtype=np.int64)

    frac_edges = _snap_fractures(nodes, tris, fractures, diam=np.hypot(x1 - x0, y1 - y0))

    tol = 1e-9 * max(np.hypot(x1 - x0, y1 - y0), 1.0)
    tags = {
        "left": np.nonzero(np.abs(nodes[:, 0] - x0) < tol)[0],
        "right": np.nonzero(np.abs(nodes[:, 0] - x1) < tol)[0],
        "bottom": np.nonzero(np.abs(nodes[:, 1] - y0) < tol)[0],
        "top": np.nonzero(np.abs(nodes[:, 1] - y1) < tol)[0],
    }
    return make_fine_mesh(nodes, tris, region, frac_edges, tags)


def _snap_fractures(nodes, tris, fractures, diam):
    if not fractures:
        return np.zeros((0, 2), dtype=np.int64)
    tol = 1e-9 * max(diam, 1.0)

    edges = np.concatenate([tris[:, (0, 1)], tris[:, (1, 2)], tris[:, (0, 2)]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)

    picked = []
    for (pa, pb) in fractures:
        pa = np.asarray(pa, dtype=float)
        pb = np.asarray(pb, dtype=float)
        d = pb - pa
        L = np.hypot(*d)
        if L <= 0:
            raise ConfigurationError("fracture segment has zero length")
        # node-on-segment test: distance to the line < tol and parameter in [0,1]
        rel = nodes - pa
        t = (rel @ d) / (L * L)
        dist = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]) / L
        on = (dist < tol) & (t > -tol) & (t < 1 + tol)
        both = on[edges[:, 0]] & on[edges[:, 1]]
        picked.append(edges[both])
    out = np.unique(np.concatenate(picked), axis=0) if picked else np.zeros((0, 2), dtype=np.int64)
    return out
