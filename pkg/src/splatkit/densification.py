"""Adaptive density control with a KNN neighbourhood-shape trigger.

A Gaussian is split when either

* the classic gate fires: view-space gradient above ``tau_p`` and largest
  axis above ``tau_s``; or
* the KNN gate fires: gradient above ``tau_p`` and its shape statistic
  (trace of the covariance by default) exceeds that of the mean covariance
  of its ``n_neighbors`` nearest Gaussians by more than ``shape_margin``.

Gradient statistics are inputs (``GaussianSet.grad_stats``); nothing here
renders or differentiates.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_scalar
from .core_types import GaussianSet, as_gaussian_set, quat_to_matrix
from .exceptions import SizeError, ValidationError

__all__ = [
    "DensifyConfig",
    "SpatialIndex",
    "covariance_of",
    "covariances",
    "shape_statistic",
    "knn_neighbors",
    "mean_neighbor_shape",
    "classify_large",
    "neighborhood_ratios",
    "split_masks",
    "adc_split_condition",
    "split_gaussian",
    "densify_step",
    "DensifyReport",
    "KNNDensifier",
]

SHAPE_STATS = ("trace", "max_eig", "det")


@dataclass(frozen=True)
class DensifyConfig:
    n_neighbors: int = 64
    grad_threshold: float = 0.0002
    scale_threshold: float = 0.01
    split_children: int = 2
    scale_divisor: float = 1.6
    opacity_prune_min: float = 0.005
    shape_margin: float = 0.0
    shape_stat: str = "trace"
    knn_ignore_grad: bool = False

    def __post_init__(self):
        check_scalar(self.n_neighbors, "n_neighbors", min_val=1, integer=True)
        check_scalar(self.grad_threshold, "grad_threshold", min_val=0.0)
        check_scalar(self.scale_threshold, "scale_threshold", min_val=0.0)
        check_scalar(self.split_children, "split_children", min_val=2, integer=True)
        check_scalar(self.scale_divisor, "scale_divisor", min_val=1.0, include_min=False)
        check_scalar(self.opacity_prune_min, "opacity_prune_min", min_val=0.0, max_val=1.0)
        check_scalar(self.shape_margin, "shape_margin", min_val=0.0)
        if self.shape_stat not in SHAPE_STATS:
            raise ValidationError(f"shape_stat must be one of {SHAPE_STATS}")


# --------------------------------------------------------------------------
# neighbour search
# --------------------------------------------------------------------------


def _sqdist(points, q):
    d = points - q
    return np.einsum("ij,ij->i", d, d)


class SpatialIndex:
    """k-d tree over Gaussian centres with exact, deterministic KNN.

    Candidate neighbours come from ``scipy.spatial.cKDTree``; they are then
    re-ranked on exactly recomputed squared distances with ties broken by the
    lower index.  When ties reach the edge of the candidate window the query
    falls back to a radius search so the answer matches brute force.
    """

    def __init__(self, positions, leaf_size=16, workers=1):
        self.positions = np.ascontiguousarray(positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValidationError("positions must be (N, 3)")
        self.leaf_size = check_scalar(leaf_size, "leaf_size", min_val=1, integer=True)
        self.workers = workers
        self._tree = cKDTree(self.positions, leafsize=leaf_size, balanced_tree=True)

    def __len__(self):
        return self.positions.shape[0]

    def _rank(self, cand, q, exclude):
        cand = np.unique(cand[cand < len(self)])
        if exclude is not None:
            cand = cand[cand != exclude]
        d = _sqdist(self.positions[cand], q)
        order = np.lexsort((cand, d))
        return cand[order], d[order]

    def _query_one(self, q, n, exclude, cand):
        idx, d = self._rank(cand, q, exclude)
        n_avail = len(self) - (exclude is not None)
        # exact iff strictly closer than every point we did not fetch
        if len(idx) >= n_avail or (len(idx) > n and d[n - 1] < d[-1] * (1 - 1e-9)):
            return idx[:n]
        radius = np.sqrt(d[min(n, len(d)) - 1]) * (1 + 1e-9) + 1e-300
        ball = np.asarray(self._tree.query_ball_point(q, radius), dtype=np.int64)
        idx, _ = self._rank(np.concatenate([ball, idx]), q, exclude)
        return idx[:n]

    def query(self, i, n):
        """``n`` nearest neighbours of member ``i`` (itself excluded)."""
        if not 0 <= i < len(self):
            raise IndexError(i)
        return self.query_many([i], n)[0]

    def query_point(self, position, n):
        """``n`` nearest members to an arbitrary position.

        If the position coincides with a member, the lowest-index such member
        is treated as the query point and excluded.
        """
        q = np.asarray(position, dtype=np.float64).reshape(3)
        hit = np.flatnonzero(np.all(self.positions == q, axis=1))
        exclude = int(hit[0]) if hit.size else None
        n = min(n, len(self) - 1) if exclude is not None else min(n, len(self))
        if n <= 0:
            return np.zeros(0, dtype=np.int64)
        k = min(n + 2 + (exclude is not None), len(self))
        _, cand = self._tree.query(q, k=k)
        return self._query_one(q, n, exclude, np.atleast_1d(cand).astype(np.int64))

    def query_many(self, indices, n):
        """Neighbours for several members at once; returns an ``(m, n')`` array."""
        if len(self) < 2:
            raise SizeError("KNN needs at least two Gaussians")
        n = min(int(n), len(self) - 1)
        indices = np.asarray(indices, dtype=np.int64)
        k = min(n + 3, len(self))
        _, cand = self._tree.query(self.positions[indices], k=k, workers=self.workers)
        cand = np.asarray(cand, dtype=np.int64).reshape(len(indices), k)
        out = np.empty((len(indices), n), dtype=np.int64)
        for r, i in enumerate(indices):
            out[r] = self._query_one(self.positions[i], n, int(i), cand[r])
        return out

    def query_all(self, n):
        return self.query_many(np.arange(len(self)), n)


def knn_neighbors(index, query, n):
    """Indices of the ``n`` nearest Gaussians, nearest first.

    ``query`` is either a member index (excluded from the result) or a 3D
    position.  ``n`` is clamped to the number of available points.
    """
    if isinstance(query, (int, np.integer)):
        return index.query(int(query), n)
    return index.query_point(query, n)


# --------------------------------------------------------------------------
# shapes
# --------------------------------------------------------------------------


def covariances(gaussians):
    """Batched ``R diag(s^2) R^T`` for a :class:`GaussianSet`."""
    gs = as_gaussian_set(gaussians)
    return _covs_sym(gs.rotations, gs.scales)


def covariance_of(g):
    """``R(q) diag(s^2) R(q)^T`` for one primitive (exactly symmetric)."""
    return _covs_sym(g.rotation[None], g.scale[None])[0]


def shape_statistic(cov, kind="trace"):
    """Scalar size of a covariance (or a stack of them)."""
    cov = np.asarray(cov)
    if kind == "trace":
        return np.trace(cov, axis1=-2, axis2=-1)
    if kind == "max_eig":
        return np.linalg.eigvalsh(cov)[..., -1]
    if kind == "det":
        return np.linalg.det(cov)
    raise ValidationError(f"unknown shape statistic {kind!r}")


def _covs_sym(rotations, scales):
    R = quat_to_matrix(rotations)
    covs = (R * (scales**2)[:, None, :]) @ np.swapaxes(R, -1, -2)
    return 0.5 * (covs + np.swapaxes(covs, -1, -2))


def mean_neighbor_shape(gaussians, i, n, index=None):
    """Element-wise mean covariance of the ``n`` nearest neighbours of ``i``."""
    gs = as_gaussian_set(gaussians)
    index = index or SpatialIndex(gs.positions)
    nbrs = index.query(i, n)
    return _mean_cov(covariances(gs), nbrs[None])[0]


def _mean_cov(covs, nbrs):
    # (m, k) neighbour rows -> (m, 3, 3); plain left-to-right sum, nearest
    # first, so the result does not depend on numpy's reduction strategy
    acc = covs[nbrs[:, 0]].copy()
    for c in range(1, nbrs.shape[1]):
        acc += covs[nbrs[:, c]]
    return acc / nbrs.shape[1]


def _traces(scales):
    # trace(R diag(s^2) R^T) == sum(s^2); avoids rotation round-off
    return np.sum(scales**2, axis=1)


def _large_mask(gs, rows, nbrs, config):
    """Classify ``rows`` against their neighbour rows ``nbrs`` (shape ``(m, k)``).

    Returns ``(mask, lhs, rhs)`` with ``lhs / rhs`` the shape ratio.  For the
    trace statistic the comparison is ``k * t_i`` against the correctly rounded
    sum of neighbour traces, so equal-sized neighbourhoods tie exactly.
    """
    k = nbrs.shape[1]
    if config.shape_stat == "trace":
        t = _traces(gs.scales)
        lhs = t[rows] * k
        rhs = np.array([math.fsum(row) for row in t[nbrs]])
    else:
        covs = covariances(gs)
        lhs = shape_statistic(covs[rows], config.shape_stat)
        rhs = shape_statistic(_mean_cov(covs, nbrs), config.shape_stat)
    return lhs > (1.0 + config.shape_margin) * rhs, lhs, rhs


def classify_large(gaussians, i, config, index=None):
    """True iff Gaussian ``i`` is larger than its neighbourhood mean shape."""
    gs = as_gaussian_set(gaussians)
    if len(gs) < 2:
        raise SizeError("classification needs at least two Gaussians")
    index = index or SpatialIndex(gs.positions)
    nbrs = index.query(i, config.n_neighbors)
    large, _, _ = _large_mask(gs, np.array([i]), nbrs[None], config)
    return bool(large[0])


def neighborhood_ratios(gaussians, config, index=None):
    """Per-Gaussian ``stat(cov_i) / stat(mean neighbour cov)``."""
    gs = as_gaussian_set(gaussians)
    index = index or SpatialIndex(gs.positions)
    _, lhs, rhs = _large_mask(gs, np.arange(len(gs)), index.query_all(config.n_neighbors), config)
    return lhs / rhs


def adc_split_condition(g, config):
    return bool(g.grad_stat > config.grad_threshold and np.max(g.scale) > config.scale_threshold)


# --------------------------------------------------------------------------
# splitting
# --------------------------------------------------------------------------


def _split_arrays(gs, rng, config):
    """Children for every Gaussian in ``gs``, parent-major order."""
    m = config.split_children
    R = quat_to_matrix(gs.rotations)
    z = rng.standard_normal((len(gs), m, 3))
    offsets = np.einsum("nij,nkj->nki", R, z * gs.scales[:, None, :])
    return GaussianSet(
        (gs.positions[:, None, :] + offsets).reshape(-1, 3),
        np.repeat(gs.scales / config.scale_divisor, m, axis=0),
        np.repeat(gs.rotations, m, axis=0),
        np.repeat(gs.opacities, m),
        np.repeat(gs.grad_stats, m),
    )


def split_gaussian(g, rng_seed, config):
    """Replace ``g`` by ``split_children`` Gaussians sampled from its density.

    Child centres are ``mu + R (s * z)`` with ``z ~ N(0, I)``; child scales are
    ``s / scale_divisor``; rotation, opacity and gradient are inherited.
    """
    gs = GaussianSet.from_primitives([g])
    return list(_split_arrays(gs, np.random.default_rng(rng_seed), config))


@dataclass(frozen=True)
class DensifyReport:
    n_in: int
    adc_splits: int
    knn_splits: int
    pruned: int
    survivors: int
    n_out: int

    def to_dict(self):
        return {
            "n_in": self.n_in,
            "adc_splits": self.adc_splits,
            "knn_splits": self.knn_splits,
            "pruned": self.pruned,
            "survivors": self.survivors,
            "n_out": self.n_out,
        }


def split_masks(gaussians, config, index=None):
    """Boolean masks ``(adc, knn, prune)`` evaluated on the given snapshot.

    ``knn`` is only set where ``adc`` is not, so the two split counts never
    double-count a Gaussian.
    """
    gs = as_gaussian_set(gaussians)
    grad_ok = gs.grad_stats > config.grad_threshold
    adc = grad_ok & (gs.scales.max(axis=1) > config.scale_threshold)
    if len(gs) >= 2:
        index = index or SpatialIndex(gs.positions)
        large, _, _ = _large_mask(gs, np.arange(len(gs)), index.query_all(config.n_neighbors), config)
    else:
        large = np.zeros(len(gs), dtype=bool)
    gate = np.ones_like(grad_ok) if config.knn_ignore_grad else grad_ok
    knn = gate & large & ~adc
    prune = gs.opacities < config.opacity_prune_min
    return adc & ~prune, knn & ~prune, prune


def densify_step(gaussians, config, rng_seed=0):
    """One densification pass: classify on the input snapshot, prune, split.

    Returns ``(new_set, DensifyReport)``.  Output order: untouched survivors
    first (input order), then children grouped by parent (input order).
    """
    gs = as_gaussian_set(gaussians)
    if len(gs) == 0:
        raise SizeError("densify_step needs a non-empty set")
    adc, knn, prune = split_masks(gs, config)
    split = adc | knn
    keep = ~split & ~prune
    parts = [gs.subset(np.flatnonzero(keep))]
    if split.any():
        parts.append(_split_arrays(gs.subset(np.flatnonzero(split)), np.random.default_rng(rng_seed), config))
    out = GaussianSet.concatenate(parts)
    report = DensifyReport(
        n_in=len(gs),
        adc_splits=int(adc.sum()),
        knn_splits=int(knn.sum()),
        pruned=int(prune.sum()),
        survivors=int(keep.sum()),
        n_out=len(out),
    )
    return out, report


class KNNDensifier(TransformerMixin, BaseEstimator):
    """Run ``n_steps`` densification passes as a scikit-learn transformer.

    ``fit`` is a no-op kept for pipeline compatibility; ``transform`` takes a
    :class:`GaussianSet` (or list of primitives) and returns the densified set.
    Per-step reports are stored in ``reports_``.
    """

    def __init__(
        self,
        n_neighbors=64,
        grad_threshold=0.0002,
        scale_threshold=0.01,
        split_children=2,
        scale_divisor=1.6,
        opacity_prune_min=0.005,
        shape_margin=0.0,
        shape_stat="trace",
        knn_ignore_grad=False,
        n_steps=1,
        random_state=0,
    ):
        self.n_neighbors = n_neighbors
        self.grad_threshold = grad_threshold
        self.scale_threshold = scale_threshold
        self.split_children = split_children
        self.scale_divisor = scale_divisor
        self.opacity_prune_min = opacity_prune_min
        self.shape_margin = shape_margin
        self.shape_stat = shape_stat
        self.knn_ignore_grad = knn_ignore_grad
        self.n_steps = n_steps
        self.random_state = random_state

    def config(self):
        return DensifyConfig(
            n_neighbors=self.n_neighbors,
            grad_threshold=self.grad_threshold,
            scale_threshold=self.scale_threshold,
            split_children=self.split_children,
            scale_divisor=self.scale_divisor,
            opacity_prune_min=self.opacity_prune_min,
            shape_margin=self.shape_margin,
            shape_stat=self.shape_stat,
            knn_ignore_grad=self.knn_ignore_grad,
        )

    def fit(self, X=None, y=None):
        self.config_ = self.config()
        return self

    def transform(self, X):
        cfg = self.config()
        seeds = np.random.SeedSequence(self.random_state).generate_state(max(self.n_steps, 1))
        gs = as_gaussian_set(X)
        self.reports_ = []
        for step in range(self.n_steps):
            gs, rep = densify_step(gs, cfg, int(seeds[step]))
            self.reports_.append(rep)
        return gs
