"""Deterministic synthetic per-triangle coefficient fields.

The published experiments use heterogeneous permeability and elasticity
fields that are only shown as images, so the harness generates its own:
seeded per-cell noise smoothed by two Jacobi averaging passes over the
triangle adjacency graph, then rescaled to [1, contrast].  Identical seeds
give bitwise-identical fields.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .mesh import FineMesh

STYLES = ("layered", "lognormal-blobs")
_SMOOTHING_PASSES = 2


def _triangle_adjacency(mesh: FineMesh):
    """Neighbor lists over shared edges (index arrays, -1 padded)."""
    edges = {}
    nbr = [[] for _ in range(mesh.n_triangles)]
    for t, tri in enumerate(mesh.triangles):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[0], tri[2])):
            key = (min(a, b), max(a, b))
            if key in edges:
                s = edges.pop(key)
                nbr[s].append(t)
                nbr[t].append(s)
            else:
                edges[key] = t
    return nbr


def _smooth(values, nbr):
    out = values
    for _ in range(_SMOOTHING_PASSES):
        nxt = np.empty_like(out)
        for t, ns in enumerate(nbr):
            nxt[t] = (out[t] + sum(out[s] for s in ns)) / (1 + len(ns))
        out = nxt
    return out


def generate_synthetic_field(seed, mesh: FineMesh, contrast, style) -> np.ndarray:
    """Per-triangle coefficient field with values in [1, contrast]."""
    if contrast < 1.0:
        raise ConfigurationError("contrast must be >= 1")
    if style not in STYLES:
        raise ConfigurationError(f"unknown field style {style!r}; choose from {STYLES}")
    rng = np.random.default_rng(seed)
    cen = mesh.nodes[mesh.triangles].mean(axis=1)
    x0, y0, x1, y1 = mesh.extents()

    if style == "layered":
        # tilted stripes with jittered thickness plus cellwise noise
        n_layers = 8
        phase = rng.uniform(0.0, 2.0 * np.pi)
        tilt = rng.uniform(-0.3, 0.3)
        s = (cen[:, 1] - y0 + tilt * (cen[:, 0] - x0)) / max(y1 - y0, 1e-300)
        base = 0.5 * (1.0 + np.sin(2.0 * np.pi * n_layers * s + phase))
        noise = rng.random(mesh.n_triangles)
        raw = 0.7 * base + 0.3 * noise
    else:
        # log-normal bumps around random centers over cellwise noise
        n_blobs = 12
        cx = rng.uniform(x0, x1, n_blobs)
        cy = rng.uniform(y0, y1, n_blobs)
        width = 0.08 * max(x1 - x0, y1 - y0)
        raw = rng.random(mesh.n_triangles)
        for b in range(n_blobs):
            d2 = (cen[:, 0] - cx[b]) ** 2 + (cen[:, 1] - cy[b]) ** 2
            raw = raw + 3.0 * np.exp(-d2 / (2.0 * width * width))
        raw = np.log1p(raw)

    raw = _smooth(raw, _triangle_adjacency(mesh))
    lo, hi = raw.min(), raw.max()
    if hi - lo < 1e-300 or contrast == 1.0:
        return np.ones(mesh.n_triangles)
    unit = (raw - lo) / (hi - lo)
    # geometric interpolation keeps the histogram sensible at high contrast
    return contrast ** unit
