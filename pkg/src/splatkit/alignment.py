"""Global alignment of pairwise pointmaps.

Given, for every directed edge ``e = (i, j)``, two pointmaps expressed in view
``i``'s camera frame (``X^{i,e}``: view i's pixels, ``X^{j,e}``: view j's
pixels) with per-pixel confidences, find per-view world pointmaps ``J^v`` and
per-edge similarity transforms ``(sigma_e, P_e)`` minimizing

    sum_e sum_{v in e} sum_pix C^{v,e} * || J^v - sigma_e P_e X^{v,e} ||

The norm is not squared.  The optimizer descends on a smoothed copy
``sqrt(||r||^2 + eps^2)`` but accepts steps on the exact objective, so the
recorded energy history is non-increasing by construction.
"""

from collections import deque
from dataclasses import dataclass
import logging

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_scalar
from .core_types import (
    ConfidenceMap,
    PairGraph,
    PointMap,
    RigidPose,
    SimilarityTransform,
    Trajectory,
    quat_multiply,
    quat_to_matrix,
    rotvec_to_quat,
)
from .exceptions import (
    ConnectivityError,
    ConsistencyError,
    DegeneracyError,
    DivergenceError,
    ExtractionError,
    SizeError,
    ValidationError,
)
from .trajectory_eval import umeyama_align

__all__ = [
    "EdgeObservation",
    "AlignmentState",
    "AlignmentConfig",
    "AlignmentResult",
    "alignment_energy",
    "init_alignment",
    "optimize_global",
    "optimize_global_detailed",
    "extract_poses",
    "fuse_global_cloud",
    "GlobalAligner",
]

logger = logging.getLogger(__name__)

SMOOTH_EPS = 1e-8


@dataclass(frozen=True)
class EdgeObservation:
    """Pairwise pointmaps for directed edge ``(i, j)``, both in view i's frame."""

    edge: tuple
    pointmap_i: PointMap
    pointmap_j: PointMap
    conf_i: ConfidenceMap
    conf_j: ConfidenceMap

    def __post_init__(self):
        i, j = (int(v) for v in self.edge)
        if i == j:
            raise ValidationError(f"edge {self.edge} is a self-loop")
        object.__setattr__(self, "edge", (i, j))
        if self.pointmap_i.shape != self.conf_i.shape:
            raise ValidationError(f"edge {self.edge}: pointmap_i/conf_i dimensions differ")
        if self.pointmap_j.shape != self.conf_j.shape:
            raise ValidationError(f"edge {self.edge}: pointmap_j/conf_j dimensions differ")

    def view(self, v):
        """``(pointmap, confidence)`` for view ``v`` of this edge."""
        if v == self.edge[0]:
            return self.pointmap_i, self.conf_i
        if v == self.edge[1]:
            return self.pointmap_j, self.conf_j
        raise KeyError(v)

    def scaled_confidence(self, alpha):
        return EdgeObservation(
            self.edge, self.pointmap_i, self.pointmap_j,
            ConfidenceMap(self.conf_i.values * alpha), ConfidenceMap(self.conf_j.values * alpha),
        )


@dataclass(frozen=True)
class AlignmentState:
    """World pointmaps (one per view) and similarity transforms (one per edge).

    ``edge_transforms[k]`` belongs to ``edges[k]``.
    """

    global_pointmaps: tuple
    edges: tuple
    edge_transforms: tuple

    def __post_init__(self):
        object.__setattr__(self, "global_pointmaps", tuple(self.global_pointmaps))
        object.__setattr__(self, "edges", tuple((int(i), int(j)) for i, j in self.edges))
        object.__setattr__(self, "edge_transforms", tuple(self.edge_transforms))
        if len(self.edges) != len(self.edge_transforms):
            raise ValidationError("one transform per edge is required")
        if len(set(self.edges)) != len(self.edges):
            raise ValidationError("duplicate edge in alignment state")

    @property
    def n_views(self):
        return len(self.global_pointmaps)

    def transform_for(self, edge):
        return self.edge_transforms[self.edges.index(tuple(edge))]


@dataclass(frozen=True)
class AlignmentConfig:
    max_iters: int = 300
    step_size: float = 0.01
    convergence_tol: float = 1e-6
    subsample_stride: int = 1
    squared: bool = False
    max_halvings: int = 40

    def __post_init__(self):
        check_scalar(self.max_iters, "max_iters", min_val=0, integer=True)
        check_scalar(self.step_size, "step_size", min_val=0.0, include_min=False)
        check_scalar(self.convergence_tol, "convergence_tol", min_val=0.0, include_min=False)
        check_scalar(self.subsample_stride, "subsample_stride", min_val=1, integer=True)
        check_scalar(self.max_halvings, "max_halvings", min_val=1, integer=True)


# --------------------------------------------------------------------------
# packed problem
# --------------------------------------------------------------------------


def _view_shapes(obs):
    shapes = {}
    for o in obs:
        for v in o.edge:
            shp = o.view(v)[0].shape
            if shapes.setdefault(v, shp) != shp:
                raise ConsistencyError(f"view {v} has inconsistent pointmap sizes {shapes[v]} vs {shp}")
    return shapes


class _Problem:
    """All residual terms flattened into parallel arrays.

    Zero-confidence pixels are dropped; they add nothing to the energy or
    its gradient.  ``stride > 1`` keeps every ``stride``-th row and column.
    """

    def __init__(self, obs, n_views, stride=1, fallback_shapes=None):
        shapes = _view_shapes(obs)
        for v, shp in (fallback_shapes or {}).items():
            shapes.setdefault(v, shp)
        missing = [v for v in range(n_views) if v not in shapes]
        if missing:
            raise ConsistencyError(f"views {missing} appear in no observation")
        if max(shapes) >= n_views:
            raise ConsistencyError(f"observations reference view {max(shapes)} beyond {n_views} views")
        self.n_views = n_views
        self.n_edges = len(obs)
        self.shapes = shapes
        sizes = [shapes[v][0] * shapes[v][1] for v in range(n_views)]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        X, C, pix, edge_of = [], [], [], []
        for k, o in enumerate(obs):
            for v in o.edge:
                pm, cm = o.view(v)
                c = cm.flat().astype(np.float64)
                keep = c > 0
                if stride > 1:
                    grid = np.zeros(pm.shape, dtype=bool)
                    grid[::stride, ::stride] = True
                    keep &= grid.reshape(-1)
                idx = np.flatnonzero(keep)
                X.append(pm.flat()[idx].astype(np.float64))
                C.append(c[idx])
                pix.append(self.offsets[v] + idx)
                edge_of.append(np.full(idx.size, k, dtype=np.int64))
        self.X = np.concatenate(X) if X else np.zeros((0, 3))
        self.C = np.concatenate(C) if C else np.zeros(0)
        self.pix = np.concatenate(pix).astype(np.int64) if pix else np.zeros(0, np.int64)
        self.edge_of = np.concatenate(edge_of) if edge_of else np.zeros(0, np.int64)
        # diagonal preconditioner pieces
        self.pix_weight = np.bincount(self.pix, weights=self.C, minlength=self.total_pixels())
        self.edge_weight = np.bincount(self.edge_of, weights=self.C, minlength=self.n_edges)

    def total_pixels(self):
        return int(self.offsets[-1])

    def residuals(self, J, q, t, log_s):
        R = quat_to_matrix(q)
        RX = np.einsum("mij,mj->mi", R[self.edge_of], self.X)
        y_rot = np.exp(log_s)[self.edge_of, None] * RX
        return J[self.pix] - y_rot - t[self.edge_of], y_rot

    def energy(self, J, q, t, log_s, squared=False):
        r, _ = self.residuals(J, q, t, log_s)
        sq = np.einsum("ij,ij->i", r, r)
        return float(self.C @ (sq if squared else np.sqrt(sq)))

    def gradient(self, J, q, t, log_s, squared=False):
        """Gradient of the smoothed (or squared) energy.

        Rotation gradients are with respect to a left axis-angle increment
        ``R <- exp([w]x) R``.
        """
        r, y_rot = self.residuals(J, q, t, log_s)
        if squared:
            u = 2.0 * self.C[:, None] * r
        else:
            u = (self.C / np.sqrt(np.einsum("ij,ij->i", r, r) + SMOOTH_EPS**2))[:, None] * r
        E = self.n_edges
        gJ = np.stack([np.bincount(self.pix, weights=u[:, k], minlength=len(J)) for k in range(3)], axis=1)
        g_t = -_segment_sum(u, self.edge_of, E)
        g_ls = -_segment_sum(np.einsum("ij,ij->i", u, y_rot), self.edge_of, E)
        g_w = _segment_sum(np.cross(u, y_rot), self.edge_of, E)
        moment = _segment_sum(self.C * np.einsum("ij,ij->i", y_rot, y_rot), self.edge_of, E)
        return gJ, g_w, g_t, g_ls, moment

    def pack(self, state):
        J = np.zeros((self.total_pixels(), 3))
        if state.n_views != self.n_views:
            raise ConsistencyError(f"state has {state.n_views} views, observations need {self.n_views}")
        for v in range(self.n_views):
            gp = state.global_pointmaps[v]
            if gp.shape != self.shapes[v]:
                raise ConsistencyError(
                    f"state pointmap for view {v} has shape {gp.shape}, expected {self.shapes[v]}"
                )
            J[self.offsets[v]:self.offsets[v + 1]] = gp.flat()
        return J

    def unpack_views(self, J):
        return tuple(
            PointMap(J[self.offsets[v]:self.offsets[v + 1]].reshape(self.shapes[v] + (3,)))
            for v in range(self.n_views)
        )


def _segment_sum(values, seg, n):
    if values.ndim == 1:
        return np.bincount(seg, weights=values, minlength=n)
    return np.stack([np.bincount(seg, weights=values[:, k], minlength=n) for k in range(values.shape[1])], axis=1)


def _edge_params(state, obs):
    lookup = {e: k for k, e in enumerate(state.edges)}
    q = np.empty((len(obs), 4))
    t = np.empty((len(obs), 3))
    log_s = np.empty(len(obs))
    for k, o in enumerate(obs):
        if o.edge not in lookup:
            raise ConsistencyError(f"state has no transform for edge {o.edge}")
        S = state.edge_transforms[lookup[o.edge]]
        q[k], t[k], log_s[k] = S.pose.rotation, S.translation, np.log(S.scale)
    return q, t, log_s


def _make_state(prob, J, q, t, log_s, obs):
    transforms = tuple(
        SimilarityTransform(float(np.exp(log_s[k])), RigidPose(q[k], t[k])) for k in range(len(obs))
    )
    return AlignmentState(prob.unpack_views(J), tuple(o.edge for o in obs), transforms)


def alignment_energy(state, obs, squared=False):
    """Confidence-weighted sum of residual norms over all edges and pixels.

    With ``squared=True`` the residual norms are squared instead.
    """
    obs = list(obs)
    if not obs:
        return 0.0
    shapes = {v: gp.shape for v, gp in enumerate(state.global_pointmaps)}
    prob = _Problem(obs, state.n_views, 1, fallback_shapes=shapes)
    J = prob.pack(state)
    q, t, log_s = _edge_params(state, obs)
    return prob.energy(J, q, t, log_s, squared)


# --------------------------------------------------------------------------
# initialization
# --------------------------------------------------------------------------


def _check_inputs(graph, obs):
    obs = list(obs)
    if len(graph.edges) == 0 or not obs:
        raise SizeError("alignment needs at least one edge")
    by_edge = {}
    for o in obs:
        if o.edge in by_edge:
            raise ConsistencyError(f"duplicate observation for edge {o.edge}")
        by_edge[o.edge] = o
    if set(by_edge) != set(graph.edges):
        extra = sorted(set(by_edge) - set(graph.edges))
        missing = sorted(set(graph.edges) - set(by_edge))
        raise ConsistencyError(f"observations do not match graph (missing {missing[:3]}, extra {extra[:3]})")
    comps = graph.components()
    if len(comps) > 1:
        raise ConnectivityError(comps)
    # order observations like the graph so edge indices are well defined
    return [by_edge[e] for e in graph.edges]


def _own_edges(obs, n_views):
    """For each view, the index of its highest-confidence edge with it as first view."""
    best = {}
    for k, o in enumerate(obs):
        v = o.edge[0]
        total = float(o.conf_i.values.sum(dtype=np.float64))
        if v not in best or total > best[v][1]:
            best[v] = (k, total)
    missing = [v for v in range(n_views) if v not in best]
    if missing:
        raise ExtractionError(f"views {missing} are never the first view of an edge")
    return [best[v][0] for v in range(n_views)]


def _fit(src, dst, w, what):
    try:
        return umeyama_align(src, dst, weights=w)
    except DegeneracyError as exc:
        raise DegeneracyError(f"{what}: {exc}") from exc


def _flat(pm_conf):
    pm, cm = pm_conf
    return pm.flat().astype(np.float64), cm.flat().astype(np.float64)


def init_alignment(graph, obs):
    """Closed-form starting point for :func:`optimize_global`.

    Each view ``v`` gets a reference frame: that of its own highest-confidence
    edge with ``v`` as first view.  A BFS spanning tree from view 0 chains
    frame-to-frame similarities estimated by weighted Umeyama fits on shared
    pixels; world pointmaps are the transported own-frame pointmaps, refined
    per pixel by the best-confidence prediction from any incident edge.
    Finally every edge transform is re-fitted to the world pointmaps and the
    scale gauge is pinned (first edge ``sigma = 1``).
    """
    obs = _check_inputs(graph, obs)
    n = graph.n_views
    own = _own_edges(obs, n)
    by_edge = {o.edge: o for o in obs}

    adj = {v: [] for v in range(n)}
    for i, j in graph.edges:
        adj[i].append(j)
    frame = [None] * n  # similarity: own frame of v -> world (frame of view 0)
    frame[0] = SimilarityTransform.identity()
    queue = deque([0])
    while queue:
        a = queue.popleft()
        for b in sorted(adj[a]):
            if frame[b] is not None:
                continue
            e = by_edge[(a, b)]
            Xa_e, Ca_e = _flat(e.view(a))
            Xa_own, Ca_own = _flat(obs[own[a]].view(a))
            # edge frame -> own frame of a
            T_a = _fit(Xa_e, Xa_own, np.minimum(Ca_e, Ca_own), f"edge {e.edge} vs view {a}")
            Xb_e, Cb_e = _flat(e.view(b))
            Xb_own, Cb_own = _flat(obs[own[b]].view(b))
            # own frame of b -> own frame of a
            T_ab = _fit(Xb_own, T_a.apply(Xb_e), np.minimum(Cb_e, Cb_own), f"edge {e.edge} vs view {b}")
            frame[b] = frame[a].compose(T_ab)
            queue.append(b)

    # per-edge transforms from own frames, then world pointmaps
    transforms = []
    for k, o in enumerate(obs):
        i = o.edge[0]
        if own[i] == k:
            transforms.append(frame[i])
            continue
        Xi, Ci = _flat(o.view(i))
        Xi_own, Ci_own = _flat(obs[own[i]].view(i))
        transforms.append(frame[i].compose(_fit(Xi, Xi_own, np.minimum(Ci, Ci_own), f"edge {o.edge}")))

    shapes = _view_shapes(obs)
    J = _best_prediction(obs, transforms, shapes, n)

    # re-fit every edge against the world pointmaps
    transforms = []
    for o in obs:
        src, dst, w = [], [], []
        for v in o.edge:
            X, C = _flat(o.view(v))
            src.append(X)
            dst.append(J[v].reshape(-1, 3))
            w.append(C)
        transforms.append(_fit(np.concatenate(src), np.concatenate(dst), np.concatenate(w), f"edge {o.edge}"))
    J = _best_prediction(obs, transforms, shapes, n)

    s0 = transforms[0].scale
    transforms = [
        SimilarityTransform(T.scale / s0, RigidPose(T.pose.rotation, T.translation / s0)) for T in transforms
    ]
    gps = tuple(PointMap(J[v] / s0) for v in range(n))
    return AlignmentState(gps, tuple(o.edge for o in obs), tuple(transforms))


def _best_prediction(obs, transforms, shapes, n):
    """Per pixel, the transported point from the incident edge with highest confidence."""
    J = [np.zeros(shapes[v] + (3,)) for v in range(n)]
    best = [np.full(shapes[v], -1.0) for v in range(n)]
    for o, T in zip(obs, transforms):
        for v in o.edge:
            pm, cm = o.view(v)
            c = cm.values.astype(np.float64)
            better = c > best[v]
            if better.any():
                pts = T.apply(pm.points.reshape(-1, 3).astype(np.float64)).reshape(pm.points.shape)
                J[v][better] = pts[better]
                best[v][better] = c[better]
    return J


# --------------------------------------------------------------------------
# optimization
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AlignmentResult:
    state: AlignmentState
    trajectory: Trajectory
    energy_history: tuple
    iterations: int
    converged: bool


def optimize_global(graph, obs, config=None, init_state=None):
    """Minimize the alignment energy by preconditioned first-order descent.

    Each iteration takes a step along the negative smoothed-energy gradient,
    scaled per block by the local confidence mass (a diagonal
    preconditioner), with a backtracking line search that halves the step
    until the exact energy strictly decreases.  Rotations move on their
    tangent space.  Stops after ``max_iters``, when the relative decrease
    falls below ``convergence_tol``, or when no decreasing step is found.

    Returns ``(state, trajectory, energy_history)``.
    """
    res = optimize_global_detailed(graph, obs, config, init_state)
    return res.state, res.trajectory, list(res.energy_history)


def optimize_global_detailed(graph, obs, config=None, init_state=None):
    config = config or AlignmentConfig()
    obs = _check_inputs(graph, obs)
    state = init_state if init_state is not None else init_alignment(graph, obs)
    if config.max_iters == 0:
        hist = (alignment_energy(state, obs, config.squared),)
        return AlignmentResult(state, extract_poses(state, obs), hist, 0, False)

    prob = _Problem(obs, graph.n_views, config.subsample_stride)
    J = prob.pack(state)
    q, t, log_s = _edge_params(state, obs)
    energy = prob.energy(J, q, t, log_s, config.squared)
    if not np.isfinite(energy):
        raise DivergenceError("initial energy is not finite", last_state=state)
    history = [energy]
    pw = np.maximum(prob.pix_weight, 1e-300)[:, None]
    ew = np.maximum(prob.edge_weight, 1e-300)
    alpha = config.step_size
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        gJ, g_w, g_t, g_ls, moment = prob.gradient(J, q, t, log_s, config.squared)
        if not all(np.all(np.isfinite(g)) for g in (gJ, g_w, g_t, g_ls)):
            raise DivergenceError("non-finite gradient", last_state=_make_state(prob, J, q, t, log_s, obs))
        mom = np.maximum(moment, 1e-300)
        dJ = gJ / pw
        dw = g_w / mom[:, None]
        dt = g_t / ew[:, None]
        dls = g_ls / mom
        dls[0] = 0.0  # scale gauge: first edge keeps sigma = 1

        alpha = min(2.0 * alpha, config.step_size)
        accepted = False
        for _ in range(config.max_halvings):
            J_new = J - alpha * dJ
            q_new = quat_multiply(rotvec_to_quat(-alpha * dw), q)
            t_new = t - alpha * dt
            ls_new = log_s - alpha * dls
            e_new = prob.energy(J_new, q_new, t_new, ls_new, config.squared)
            if np.isfinite(e_new) and e_new < energy:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            converged = True
            logger.debug("line search found no decrease at iteration %d; stopping", it)
            break
        rel = (energy - e_new) / energy if energy > 0 else 0.0
        J, q, t, log_s, energy = J_new, q_new / np.linalg.norm(q_new, axis=1, keepdims=True), t_new, ls_new, e_new
        history.append(energy)
        if rel < config.convergence_tol or energy == 0.0:
            converged = True
            break

    # pixels never touched by a residual keep their initial values
    state = _make_state(prob, J, q, t, log_s, obs)
    if config.subsample_stride > 1:
        state = _merge_unsampled(state, prob, obs, J)
    return AlignmentResult(state, extract_poses(state, obs), tuple(history), it, converged)


def _merge_unsampled(state, prob, obs, J):
    """With subsampling, re-transport unsampled pixels through the new edge transforms."""
    shapes = {v: state.global_pointmaps[v].shape for v in range(state.n_views)}
    full = _best_prediction(obs, state.edge_transforms, shapes, state.n_views)
    gps = []
    for v in range(state.n_views):
        mask = np.zeros(prob.total_pixels(), dtype=bool)
        mask[prob.pix] = True
        m = mask[prob.offsets[v]:prob.offsets[v + 1]].reshape(shapes[v])
        pts = np.where(m[..., None], state.global_pointmaps[v].points, full[v])
        gps.append(PointMap(pts))
    return AlignmentState(tuple(gps), state.edges, state.edge_transforms)


# --------------------------------------------------------------------------
# read-out
# --------------------------------------------------------------------------


def extract_poses(state, obs):
    """Camera-to-world poses read out of an alignment state.

    For each view, fit a weighted similarity from its own-frame pointmap (the
    first-view pointmap of its highest-confidence outgoing edge; lower edge
    index on ties) onto its world pointmap.  All poses are then re-expressed
    relative to view 0, whose pose becomes the identity.
    """
    obs = list(obs)
    own = _own_edges(obs, state.n_views)
    sims = []
    for v in range(state.n_views):
        X, C = _flat(obs[own[v]].view(v))
        dst = state.global_pointmaps[v].flat().astype(np.float64)
        if dst.shape != X.shape:
            raise ConsistencyError(f"view {v}: state and observation sizes differ")
        try:
            sims.append(umeyama_align(X, dst, weights=C))
        except DegeneracyError as exc:
            raise ExtractionError(f"cannot extract pose of view {v}: {exc}") from exc
    inv0 = sims[0].inverse()
    poses = []
    for S in sims:
        rel = inv0.compose(S)
        poses.append(rel.pose)
    return Trajectory(tuple(poses))


def fuse_global_cloud(state, obs, conf_threshold=0.0):
    """World points whose max confidence over incident edges is ``>= conf_threshold``.

    Order is view-major, then row-major within each view.
    """
    check_scalar(conf_threshold, "conf_threshold", min_val=0.0)
    obs = list(obs)
    chunks = []
    for v in range(state.n_views):
        gp = state.global_pointmaps[v]
        conf = np.zeros(gp.shape)
        for o in obs:
            if v in o.edge:
                conf = np.maximum(conf, o.view(v)[1].values)
        keep = conf.reshape(-1) >= conf_threshold
        chunks.append(gp.flat()[keep])
    return np.concatenate(chunks) if chunks else np.zeros((0, 3))


def per_view_confidence(state, obs):
    out = []
    for v in range(state.n_views):
        conf = np.zeros(state.global_pointmaps[v].shape)
        for o in obs:
            if v in o.edge:
                conf = np.maximum(conf, o.view(v)[1].values)
        out.append(conf)
    return out


class GlobalAligner(BaseEstimator):
    """scikit-learn style front end to :func:`optimize_global`.

    ``fit(obs, graph=...)`` runs initialization and optimization.

    Attributes
    ----------
    state_ : AlignmentState
    trajectory_ : Trajectory
    energy_history_ : list of float
    n_iter_ : int
    """

    def __init__(self, max_iters=300, step_size=0.01, convergence_tol=1e-6, subsample_stride=1,
                 squared=False, conf_threshold=0.0):
        self.max_iters = max_iters
        self.step_size = step_size
        self.convergence_tol = convergence_tol
        self.subsample_stride = subsample_stride
        self.squared = squared
        self.conf_threshold = conf_threshold

    def _config(self):
        return AlignmentConfig(
            max_iters=self.max_iters, step_size=self.step_size,
            convergence_tol=self.convergence_tol, subsample_stride=self.subsample_stride,
            squared=self.squared,
        )

    def fit(self, obs, graph=None):
        obs = list(obs)
        if graph is None:
            n = 1 + max(max(o.edge) for o in obs)
            graph = PairGraph(n, tuple(o.edge for o in obs))
        res = optimize_global_detailed(graph, obs, self._config())
        self.obs_ = obs
        self.graph_ = graph
        self.state_ = res.state
        self.trajectory_ = res.trajectory
        self.energy_history_ = list(res.energy_history)
        self.n_iter_ = res.iterations
        return self

    def predict(self, obs=None):
        """Camera positions ``(n_views, 3)`` of the fitted trajectory."""
        check_is_fitted(self, "state_")
        return self.trajectory_.positions

    def point_cloud(self):
        check_is_fitted(self, "state_")
        return fuse_global_cloud(self.state_, self.obs_, self.conf_threshold)

    def energy(self, obs=None):
        check_is_fitted(self, "state_")
        return alignment_energy(self.state_, obs if obs is not None else self.obs_, self.squared)
