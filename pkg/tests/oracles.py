"""Slow reference implementations used as test oracles."""

import numpy as np

from splatkit.densification import covariance_of


def brute_knn(positions, i, n):
    d = np.sum((positions - positions[i]) ** 2, axis=1)
    order = sorted((float(d[j]), j) for j in range(len(positions)) if j != i)
    return np.array([j for _, j in order[: min(n, len(positions) - 1)]], dtype=np.int64)


def brute_mean_cov(gs, i, n):
    nbrs = brute_knn(gs.positions, i, n)
    return sum(covariance_of(gs[j]) for j in nbrs) / len(nbrs)


def brute_large(gs, i, n, margin=0.0):
    return np.trace(covariance_of(gs[i])) > (1 + margin) * np.trace(brute_mean_cov(gs, i, n))


def lone_large_scene(big_scale=0.005, small_scale=0.001, grad=1e-3):
    """64 small Gaussians on a 4x4x4 grid plus one bigger one at its centre.

    The big one is returned last (index 64).
    """
    from splatkit.core_types import GaussianSet

    axis = np.arange(4) * 0.01
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    pos = np.vstack([grid, grid.mean(axis=0)])
    scales = np.full((65, 3), small_scale)
    scales[-1] = big_scale
    rot = np.tile([1.0, 0, 0, 0], (65, 1))
    return GaussianSet(pos, scales, rot, np.full(65, 0.8), np.full(65, grad))


def brute_knn_all(positions, n):
    """``brute_knn`` for every row at once (same distance formula and tie order)."""
    out = []
    for i in range(len(positions)):
        d = np.sum((positions - positions[i]) ** 2, axis=1)
        order = np.argsort(d, kind="stable")
        out.append(order[order != i][: min(n, len(positions) - 1)])
    return np.array(out, dtype=np.int64)
