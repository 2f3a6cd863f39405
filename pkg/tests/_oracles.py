"""Shared independent oracles used by the verification suites."""

import itertools

import numpy as np


def simplex_grid(L, step):
    """All simplex points on a regular grid with the given step."""
    m = int(round(1.0 / step))
    pts = []
    for comp in itertools.combinations_with_replacement(range(m + 1), L - 1):
        cuts = (0,) + comp + (m,)
        pts.append([(cuts[i + 1] - cuts[i]) / m for i in range(L)])
    return np.array(pts)


def grid_oracle_objective(M, step=1e-3, coarse=0.02):
    """Two-stage grid minimum of gamma' M gamma over the simplex.

    Full enumeration at the coarse step, then a local grid at the fine
    step around the coarse argmin.  Every evaluated point is feasible, so
    the returned value upper-bounds the true minimum.
    """
    L = M.shape[0]
    pts = simplex_grid(L, coarse)
    vals = np.einsum("ij,jk,ik->i", pts, M, pts)
    center = pts[int(np.argmin(vals))]
    offsets = np.arange(-25, 26) * step
    best = float(vals.min())
    if L == 2:
        g1 = np.clip(center[0] + offsets, 0.0, 1.0)
        cand = np.column_stack([g1, 1.0 - g1])
        return min(best, float(np.einsum("ij,jk,ik->i", cand, M, cand).min()))
    axes = [np.clip(center[i] + offsets, 0.0, 1.0) for i in range(L - 1)]
    mesh = np.meshgrid(*axes, indexing="ij")
    flat = np.column_stack([m.ravel() for m in mesh])
    last = 1.0 - flat.sum(axis=1)
    keep = last >= -1e-12
    cand = np.column_stack([flat[keep], np.clip(last[keep], 0.0, None)])
    if cand.size:
        best = min(best, float(np.einsum("ij,jk,ik->i", cand, M, cand).min()))
    return best
