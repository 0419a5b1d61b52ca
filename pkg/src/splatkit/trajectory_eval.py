"""Camera trajectory accuracy: Umeyama alignment, ATE and RPE.

Units: ATE and RPE_t are in scene units, RPE_r in degrees.
"""

from dataclasses import asdict, dataclass

import numpy as np

from ._validation import as_points, check_scalar
from .core_types import RigidPose, SimilarityTransform, Trajectory, rotation_angle
from .exceptions import DegeneracyError, SizeError, ValidationError

__all__ = ["TrajectoryMetrics", "umeyama_align", "ate", "rpe", "evaluate"]


@dataclass(frozen=True)
class TrajectoryMetrics:
    ate: float
    rpe_t: float
    rpe_r: float

    def __post_init__(self):
        for name in ("ate", "rpe_t", "rpe_r"):
            check_scalar(getattr(self, name), name, min_val=0.0)

    def to_dict(self):
        return asdict(self)


def umeyama_align(src, dst, weights=None, with_scale=True):
    """Least-squares similarity transform taking ``src`` onto ``dst``.

    Minimizes ``sum_i w_i * ||dst_i - (s R src_i + t)||^2`` in closed form
    (Umeyama 1991).  The rotation is always proper; with a reflected target the
    best proper rotation is returned and the residual stays non-zero.

    Parameters
    ----------
    src, dst : (N, 3) array_like
        Corresponding points.
    weights : (N,) array_like, optional
        Non-negative per-point weights.  Defaults to uniform.
    with_scale : bool
        If False the scale is pinned to 1 (rigid fit).

    Returns
    -------
    SimilarityTransform

    Raises
    ------
    DegeneracyError
        If fewer than three points carry weight, or the weighted source
        points are collinear (rank < 2).
    """
    return _umeyama(src, dst, weights, with_scale, strict=True)


def _umeyama(src, dst, weights, with_scale, strict):
    # strict=False accepts collinear or coincident sources and returns one
    # of the (then non-unique) least-squares minimizers
    src = as_points(src, "src")
    dst = as_points(dst, "dst")
    if src.shape != dst.shape:
        raise ValidationError(f"src {src.shape} and dst {dst.shape} differ in shape")
    if weights is None:
        w = np.ones(len(src))
    else:
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape != (len(src),) or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("weights must be finite, non-negative, one per point")
    if np.count_nonzero(w) < (3 if strict else 1):
        raise DegeneracyError("need at least 3 weighted correspondences")
    w = w / w.sum()

    mu_s = w @ src
    mu_d = w @ dst
    xs = src - mu_s
    xd = dst - mu_d
    var_s = w @ np.einsum("ij,ij->i", xs, xs)
    cov = (xd * w[:, None]).T @ xs

    # rank test on the source spread, relative to its largest direction
    sv_src = np.linalg.svd((xs * np.sqrt(w)[:, None]), compute_uv=False)
    if sv_src[0] == 0 or sv_src[1] <= 1e-12 * sv_src[0]:
        if strict:
            raise DegeneracyError("source points are collinear or coincident")
        if sv_src[0] == 0:
            return SimilarityTransform(1.0, RigidPose.from_matrix(np.eye(3), mu_d - mu_s))

    U, D, Vt = np.linalg.svd(cov)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = (U * S) @ Vt
    scale = float((D * S).sum() / var_s) if with_scale else 1.0
    if scale <= 0:
        raise DegeneracyError("non-positive scale; points are degenerate")
    t = mu_d - scale * R @ mu_s
    return SimilarityTransform(scale, RigidPose.from_matrix(R, t))


def _check_pair(est, gt, min_len):
    if len(est) != len(gt):
        raise SizeError(f"trajectory lengths differ: {len(est)} vs {len(gt)}")
    if len(est) < min_len:
        raise SizeError(f"trajectories need at least {min_len} poses, got {len(est)}")


def ate(est, gt):
    """RMSE of camera positions after similarity-aligning ``est`` onto ``gt``."""
    _check_pair(est, gt, 3)
    p_est, p_gt = est.positions, gt.positions
    # collinear camera paths are allowed here: any minimizer gives the same RMSE
    S = _umeyama(p_est, p_gt, None, True, strict=False)
    err = S.apply(p_est) - p_gt
    return float(np.sqrt(np.mean(np.einsum("ij,ij->i", err, err))))


def rpe(est, gt, delta=1):
    """Relative pose error over frame gap ``delta``.

    Returns ``(rpe_t, rpe_r)``: RMSE of the translation norms (scene units)
    and rotation angles (degrees) of ``(gt_i^-1 gt_{i+d})^-1 (est_i^-1 est_{i+d})``.
    """
    check_scalar(delta, "delta", min_val=1, integer=True)
    _check_pair(est, gt, delta + 1)
    t_err, r_err = [], []
    for i in range(len(est) - delta):
        rel_gt = gt[i].inverse().compose(gt[i + delta])
        rel_est = est[i].inverse().compose(est[i + delta])
        E = rel_gt.inverse().compose(rel_est)
        t_err.append(np.linalg.norm(E.translation))
        r_err.append(rotation_angle(E.rotation))
    t_err = np.asarray(t_err)
    r_err = np.degrees(np.asarray(r_err))
    return float(np.sqrt(np.mean(t_err**2))), float(np.sqrt(np.mean(r_err**2)))


def evaluate(est, gt, delta=1):
    rpe_t, rpe_r = rpe(est, gt, delta)
    return TrajectoryMetrics(ate=ate(est, gt), rpe_t=rpe_t, rpe_r=rpe_r)
