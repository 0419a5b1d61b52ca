"""Ground-truth scene generator.

Fabricates what a pairwise pointmap network would output, but from a known
scene, so that alignment and densification can be checked exactly:

* :func:`gen_scene` places cameras (orbit or linear dolly) around a random
  point cloud;
* :func:`gen_edge_observations` renders per-edge pointmaps with a pinhole
  z-buffer;
* :func:`ground_truth_state` is the alignment state those observations
  were generated from (zero energy when noise is off);
* :func:`gen_gaussian_set` builds primitive sets for the densifier.
"""

from dataclasses import dataclass, field
import logging

import numpy as np
from scipy.spatial.transform import Rotation

from ._validation import check_scalar
from .alignment import AlignmentState, EdgeObservation
from .core_types import (
    ConfidenceMap,
    GaussianSet,
    PointMap,
    RigidPose,
    SimilarityTransform,
    Trajectory,
)
from .exceptions import ValidationError

__all__ = [
    "SceneSpec",
    "Scene",
    "gen_scene",
    "gen_edge_observations",
    "ground_truth_state",
    "render_views",
    "gen_gaussian_set",
]

logger = logging.getLogger(__name__)

NEAR = 1e-6


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of a synthetic capture.

    Points are uniform in an axis-aligned cube whose diagonal equals
    ``diameter``; ``noise_sigma`` is a fraction of that diameter.  Focal
    length is ``H`` pixels with the principal point at the image centre.
    """

    n_views: int = 20
    motion: str = "orbit"
    orbit_radius: float = 1.0
    orbit_degrees: float = 360.0
    orbit_elevation: float = 0.3
    linear_step: float = 0.05
    n_points: int = 4000
    image_size: tuple = (48, 64)
    noise_sigma: float = 0.0
    conf_model: str = "uniform"
    conf_value: float = 1.0
    conf_decay: float = 1.0
    diameter: float = 1.0
    seed: int = 0

    def __post_init__(self):
        check_scalar(self.n_views, "n_views", min_val=2, integer=True)
        check_scalar(self.n_points, "n_points", min_val=8, integer=True)
        check_scalar(self.noise_sigma, "noise_sigma", min_val=0.0)
        check_scalar(self.diameter, "diameter", min_val=0.0, include_min=False)
        check_scalar(self.conf_value, "conf_value", min_val=0.0)
        check_scalar(self.conf_decay, "conf_decay", min_val=0.0)
        if self.motion not in ("orbit", "linear"):
            raise ValidationError(f"motion must be 'orbit' or 'linear', got {self.motion!r}")
        if self.conf_model not in ("uniform", "distance_decay"):
            raise ValidationError(f"conf_model must be 'uniform' or 'distance_decay', got {self.conf_model!r}")
        h, w = (int(v) for v in self.image_size)
        if h < 1 or w < 1:
            raise ValidationError(f"image_size must be positive, got {self.image_size}")
        object.__setattr__(self, "image_size", (h, w))


@dataclass(frozen=True, eq=False)
class Scene:
    spec: SceneSpec
    trajectory: Trajectory
    points: np.ndarray
    # per view: (H, W) index of the nearest point per pixel, -1 where empty
    zbuffers: tuple = field(repr=False)

    @property
    def diameter(self):
        return self.spec.diameter


def _look_at(center, target, up=(0.0, 0.0, 1.0)):
    """Camera-to-world pose, OpenCV axes (x right, y down, z forward)."""
    z = target - center
    z = z / np.linalg.norm(z)
    x = np.cross(z, up)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return RigidPose.from_matrix(np.stack([x, y, z], axis=1), center)


def _project(spec, pose, points):
    """Pixel rows/cols and depths of ``points`` in a camera."""
    h, w = spec.image_size
    f = float(h)
    cam = pose.inverse().apply(points)
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = f * cam[:, 0] / z + w / 2.0
        v = f * cam[:, 1] / z + h / 2.0
    inside = (z > NEAR) & (u >= 0) & (u < w) & (v >= 0) & (v < h)
    col = np.where(inside, np.floor(np.where(inside, u, 0)), -1).astype(np.int64)
    row = np.where(inside, np.floor(np.where(inside, v, 0)), -1).astype(np.int64)
    return row, col, z, inside, cam


def _zbuffer(spec, pose, points):
    h, w = spec.image_size
    row, col, z, inside, _ = _project(spec, pose, points)
    idx = np.flatnonzero(inside)
    lin = row[idx] * w + col[idx]
    # nearest first, then lower point index, so each pixel keeps its first hit
    order = np.lexsort((idx, z[idx], lin))
    lin, idx = lin[order], idx[order]
    first = np.ones(len(lin), dtype=bool)
    first[1:] = lin[1:] != lin[:-1]
    zb = np.full(h * w, -1, dtype=np.int64)
    zb[lin[first]] = idx[first]
    return zb.reshape(h, w)


def gen_scene(spec):
    """Cameras and world points for ``spec`` (pure function of the spec)."""
    rng = np.random.default_rng(spec.seed)
    side = spec.diameter / np.sqrt(3.0)
    points = (rng.random((spec.n_points, 3)) - 0.5) * side
    centroid = points.mean(axis=0)

    poses = []
    if spec.motion == "orbit":
        r = spec.orbit_radius * spec.diameter
        height = spec.orbit_elevation * spec.diameter
        for k in range(spec.n_views):
            theta = np.radians(spec.orbit_degrees * k / spec.n_views)
            c = centroid + np.array([r * np.cos(theta), r * np.sin(theta), height])
            poses.append(_look_at(c, centroid))
    else:
        dist = spec.orbit_radius * spec.diameter
        rot = _look_at(np.array([0.0, -1.0, 0.0]), np.zeros(3)).rotation
        for k in range(spec.n_views):
            offset = (k - (spec.n_views - 1) / 2.0) * spec.linear_step * spec.diameter
            c = centroid + np.array([offset, -dist, 0.0])
            poses.append(RigidPose(rot, c))
    traj = Trajectory(tuple(poses))
    zbuffers = tuple(_zbuffer(spec, p, points) for p in poses)
    return Scene(spec, traj, points, zbuffers)


def _confidence(spec, depth):
    if spec.conf_model == "uniform":
        return np.full(depth.shape, spec.conf_value)
    return spec.conf_value * np.exp(-spec.conf_decay * depth / spec.diameter)


def _view_grid(scene, spec, v, frame_pose, other):
    """Pointmap of view ``v``'s pixels in ``frame_pose``'s frame, plus confidence.

    A pixel carries confidence only if its nearest point is also in front of,
    and inside the image of, camera ``other``.
    """
    h, w = spec.image_size
    zb = scene.zbuffers[v].reshape(-1)
    has = zb >= 0
    pts = np.zeros((h * w, 3))
    world = scene.points[zb[has]]
    pts[has] = frame_pose.inverse().apply(world)
    _, _, _, inside_other, _ = _project(spec, scene.trajectory[other], world)
    depth_v = scene.trajectory[v].inverse().apply(world)[:, 2]
    conf = np.zeros(h * w)
    conf[has] = np.where(inside_other, _confidence(spec, depth_v), 0.0)
    return pts.reshape(h, w, 3), conf.reshape(h, w)


def gen_edge_observations(scene, graph, spec=None, dtype=np.float64):
    """One :class:`EdgeObservation` per graph edge, in graph order.

    Both pointmaps of edge ``(i, j)`` are in camera ``i``'s frame.  Noise is
    isotropic Gaussian with std ``noise_sigma * diameter``, drawn per edge from
    a generator seeded by ``(seed, i, j)``.  ``dtype=np.float32`` rounds the
    grids to what the ``.pmap`` file format can store.
    """
    spec = spec or scene.spec
    # only the noise and confidence fields of an override spec are used
    if spec.image_size != scene.spec.image_size:
        raise ValidationError("spec image_size must match the scene's")
    if graph.n_views != spec.n_views:
        raise ValidationError(f"graph has {graph.n_views} views, scene has {spec.n_views}")
    sigma = spec.noise_sigma * spec.diameter
    out = []
    for i, j in graph.edges:
        frame = scene.trajectory[i]
        Xi, Ci = _view_grid(scene, spec, i, frame, j)
        Xj, Cj = _view_grid(scene, spec, j, frame, i)
        if sigma > 0:
            rng = np.random.default_rng([spec.seed, i, j])
            Xi = Xi + rng.normal(scale=sigma, size=Xi.shape)
            Xj = Xj + rng.normal(scale=sigma, size=Xj.shape)
        if not (Ci.any() and Cj.any()):
            logger.warning("edge (%d, %d) has no covisible points", i, j)
        out.append(
            EdgeObservation(
                (i, j),
                PointMap(Xi.astype(dtype)), PointMap(Xj.astype(dtype)),
                ConfidenceMap(Ci.astype(dtype)), ConfidenceMap(Cj.astype(dtype)),
            )
        )
    return out


def ground_truth_state(scene, obs):
    """The state the observations were rendered from.

    World pointmaps hold each pixel's nearest world point (zeros where a pixel
    sees nothing); every edge transform is its first camera's pose, scale 1.
    """
    h, w = scene.spec.image_size
    gps = []
    for v in range(scene.spec.n_views):
        zb = scene.zbuffers[v].reshape(-1)
        pts = np.zeros((h * w, 3))
        pts[zb >= 0] = scene.points[zb[zb >= 0]]
        gps.append(PointMap(pts.reshape(h, w, 3)))
    edges = tuple(o.edge for o in obs)
    transforms = tuple(SimilarityTransform(1.0, scene.trajectory[i]) for i, _ in edges)
    return AlignmentState(tuple(gps), edges, transforms)


def render_views(scene, background=0.5):
    """``(n_views, H, W, 3)`` RGB images: each pixel takes its nearest point's colour.

    Point colours are drawn once per scene from the spec seed.
    """
    h, w = scene.spec.image_size
    colors = np.random.default_rng([scene.spec.seed, 7]).random((len(scene.points), 3))
    imgs = np.full((scene.spec.n_views, h, w, 3), float(background))
    for v, zb in enumerate(scene.zbuffers):
        hit = zb >= 0
        imgs[v][hit] = colors[zb[hit]]
    return imgs


# --------------------------------------------------------------------------
# Gaussian sets
# --------------------------------------------------------------------------


def _parse_law(law):
    if isinstance(law, str):
        name, _, rest = law.partition(":")
        args = tuple(float(a) for a in rest.split(",") if a)
        return (name,) + args
    return tuple(law)


def gen_gaussian_set(n, size_law=("uniform", 0.01, 0.02), grad_law=("constant", 1.0), seed=0,
                     base_scale=0.01, lattice=1.6):
    """Random Gaussian primitives in the unit cube.

    size_law
        ``("uniform", lo, hi)``: every axis length uniform in ``[lo, hi]``.
        ``("heavy_tail", alpha)``: isotropic, radius ``base_scale * x`` with
        ``x`` Pareto(alpha) on ``[1, inf)``, snapped down to the geometric
        lattice ``lattice**k``.  Splitting a lattice Gaussian by ``lattice``
        then yields exactly the next level down and never a Gaussian smaller
        than the background.
    grad_law
        ``("constant", v)`` or ``("bimodal", p, lo, hi)`` (``hi`` with
        probability ``p``, else ``lo``).
    """
    check_scalar(n, "n", min_val=2, integer=True)
    size_law = _parse_law(size_law)
    grad_law = _parse_law(grad_law)
    rng = np.random.default_rng(seed)
    positions = rng.random((n, 3))
    rot_xyzw = Rotation.random(n, random_state=rng).as_quat()
    rotations = np.concatenate([rot_xyzw[:, 3:], rot_xyzw[:, :3]], axis=1)

    if size_law[0] == "uniform":
        _, lo, hi = size_law
        if not 0 < lo <= hi:
            raise ValidationError(f"uniform size law needs 0 < lo <= hi, got {size_law}")
        scales = rng.uniform(lo, hi, size=(n, 3))
    elif size_law[0] == "heavy_tail":
        alpha = float(size_law[1])
        check_scalar(alpha, "alpha", min_val=0.0, include_min=False)
        x = 1.0 + rng.pareto(alpha, size=n)
        level = np.floor(np.log(x) / np.log(lattice) + 1e-12).astype(np.int64)
        # build the ladder top-down by repeated division so a child of level
        # k (scale / lattice) lands bit-exactly on level k - 1
        ladder = [base_scale * lattice ** int(level.max())]
        for _ in range(int(level.max())):
            ladder.append(ladder[-1] / lattice)
        ladder = np.array(ladder[::-1])
        scales = np.repeat(ladder[level][:, None], 3, axis=1)
    else:
        raise ValidationError(f"unknown size law {size_law[0]!r}")

    if grad_law[0] == "constant":
        grads = np.full(n, float(grad_law[1]))
    elif grad_law[0] == "bimodal":
        _, p, lo, hi = grad_law
        grads = np.where(rng.random(n) < p, hi, lo).astype(np.float64)
    else:
        raise ValidationError(f"unknown gradient law {grad_law[0]!r}")

    opacities = rng.uniform(0.1, 1.0, size=n)
    return GaussianSet(positions, scales, rotations, opacities, grads)
