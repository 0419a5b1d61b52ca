"""Geometric value types shared across the package.

Every type here is immutable after construction: arrays are copied on the way
in and marked read-only.  Quaternions are stored as ``(w, x, y, z)`` and
canonicalized to ``w >= 0`` so that equal rotations compare equal.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from ._validation import as_float_array, as_points, check_scalar, frozen
from .exceptions import ValidationError

__all__ = [
    "quat_normalize",
    "quat_multiply",
    "quat_to_matrix",
    "matrix_to_quat",
    "rotvec_to_quat",
    "rotation_angle",
    "RigidPose",
    "SimilarityTransform",
    "PointMap",
    "ConfidenceMap",
    "GaussianPrimitive",
    "GaussianSet",
    "PairGraph",
    "Trajectory",
]


# --------------------------------------------------------------------------
# quaternion helpers (w, x, y, z)
# --------------------------------------------------------------------------


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise ValidationError("zero-norm quaternion")
    # leave already-unit quaternions alone so normalization is idempotent
    n = np.where(np.abs(n - 1.0) <= 4 * np.finfo(np.float64).eps, 1.0, n)
    q = q / n
    return np.where(q[..., :1] < 0, -q, q)


def quat_multiply(a, b):
    """Hamilton product ``a * b`` for (w, x, y, z) quaternions (broadcasts)."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_to_matrix(q):
    """Rotation matrices for unit quaternions of shape ``(..., 4)``."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def matrix_to_quat(R):
    xyzw = Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_quat()
    return quat_normalize(np.concatenate([xyzw[..., 3:], xyzw[..., :3]], axis=-1))


def rotvec_to_quat(rotvec):
    xyzw = Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_quat()
    return quat_normalize(np.concatenate([xyzw[..., 3:], xyzw[..., :3]], axis=-1))


def rotation_angle(q):
    """Rotation angle in radians, safe under the quaternion double cover."""
    q = np.asarray(q, dtype=np.float64)
    return 2.0 * np.arctan2(np.linalg.norm(q[..., 1:], axis=-1), np.abs(q[..., 0]))


# --------------------------------------------------------------------------
# transforms
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RigidPose:
    """Proper rigid motion ``x -> R x + t``.

    For camera poses the convention is camera-to-world.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = as_float_array(self.rotation, shape=(4,), name="rotation")
        object.__setattr__(self, "rotation", frozen(quat_normalize(q)))
        t = as_float_array(self.translation, shape=(3,), name="translation")
        object.__setattr__(self, "translation", frozen(t))

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, R, t=(0.0, 0.0, 0.0)):
        R = as_float_array(R, shape=(3, 3), name="R")
        if np.linalg.det(R) <= 0:
            raise ValidationError("rotation matrix must have positive determinant")
        return cls(matrix_to_quat(R), t)

    @classmethod
    def from_matrix4(cls, T):
        T = as_float_array(T, shape=(4, 4), name="T")
        return cls.from_matrix(T[:3, :3], T[:3, 3])

    @property
    def R(self):
        return quat_to_matrix(self.rotation)

    def as_matrix4(self):
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def compose(self, other):
        """Return ``self ∘ other`` (``other`` is applied first)."""
        q = quat_multiply(self.rotation, other.rotation)
        return RigidPose(q, self.R @ other.translation + self.translation)

    __matmul__ = compose

    def inverse(self):
        q_inv = self.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        return RigidPose(q_inv, -(quat_to_matrix(q_inv) @ self.translation))

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.R.T + self.translation

    @property
    def angle(self):
        return float(rotation_angle(self.rotation))

    def allclose(self, other, atol=1e-9):
        dq = self.inverse().compose(other)
        return dq.angle <= atol and np.linalg.norm(self.translation - other.translation) <= atol

    def __eq__(self, other):
        if not isinstance(other, RigidPose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    def __repr__(self):
        return f"RigidPose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """``x -> scale * R x + t`` with ``scale > 0``."""

    scale: float = 1.0
    pose: RigidPose = field(default_factory=RigidPose)

    def __post_init__(self):
        check_scalar(float(self.scale), "scale", min_val=0.0, include_min=False)
        object.__setattr__(self, "scale", float(self.scale))
        if not isinstance(self.pose, RigidPose):
            raise ValidationError("pose must be a RigidPose")

    @classmethod
    def identity(cls):
        return cls()

    def __eq__(self, other):
        if not isinstance(other, SimilarityTransform):
            return NotImplemented
        return self.scale == other.scale and self.pose == other.pose

    @property
    def R(self):
        return self.pose.R

    @property
    def translation(self):
        return self.pose.translation

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return self.scale * (points @ self.R.T) + self.pose.translation

    def compose(self, other):
        """Return ``self ∘ other``."""
        R = self.R
        t = self.scale * (R @ other.translation) + self.translation
        q = quat_multiply(self.pose.rotation, other.pose.rotation)
        return SimilarityTransform(self.scale * other.scale, RigidPose(q, t))

    def inverse(self):
        inv_pose = self.pose.inverse()
        return SimilarityTransform(
            1.0 / self.scale, RigidPose(inv_pose.rotation, inv_pose.translation / self.scale)
        )

    def as_matrix4(self):
        T = self.pose.as_matrix4()
        T[:3, :3] *= self.scale
        return T

    def __repr__(self):
        return f"SimilarityTransform(scale={self.scale!r}, pose={self.pose!r})"


# --------------------------------------------------------------------------
# per-pixel grids
# --------------------------------------------------------------------------


def _grid(values, trailing, name):
    arr = np.array(values, copy=True)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    if arr.ndim != 2 + len(trailing) or arr.shape[2:] != trailing or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError(f"{name} must have shape (H, W{', 3' if trailing else ''}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return frozen(arr)


@dataclass(frozen=True, eq=False)
class PointMap:
    """An ``H x W`` grid of 3D points.

    The array keeps the dtype it was given (float32 from files, float64 from
    the synthetic generator) so that file round-trips stay bit-exact.
    """

    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _grid(self.points, (3,), "points"))

    @property
    def height(self):
        return self.points.shape[0]

    @property
    def width(self):
        return self.points.shape[1]

    @property
    def shape(self):
        return self.points.shape[:2]

    def flat(self):
        return self.points.reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class ConfidenceMap:
    values: np.ndarray

    def __post_init__(self):
        arr = _grid(self.values, (), "confidence")
        if np.any(arr < 0):
            raise ValidationError("confidence values must be non-negative")
        object.__setattr__(self, "values", arr)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def flat(self):
        return self.values.reshape(-1)


# --------------------------------------------------------------------------
# Gaussian primitives
# --------------------------------------------------------------------------


def _check_gaussian_arrays(positions, scales, rotations, opacities, grad_stats):
    n = positions.shape[0]
    for name, arr, shape in (
        ("scales", scales, (n, 3)),
        ("rotations", rotations, (n, 4)),
        ("opacities", opacities, (n,)),
        ("grad_stats", grad_stats, (n,)),
    ):
        if arr.shape != shape:
            raise ValidationError(f"{name} must have shape {shape}, got {arr.shape}")
    if np.any(scales <= 0):
        raise ValidationError("all scale components must be > 0")
    if np.any((opacities < 0) | (opacities > 1)):
        raise ValidationError("opacity must lie in [0, 1]")
    if np.any(grad_stats < 0):
        raise ValidationError("grad_stat must be non-negative")
    norms = np.linalg.norm(rotations, axis=1)
    if np.any(norms == 0):
        raise ValidationError("zero-norm rotation quaternion")


@dataclass(frozen=True, eq=False)
class GaussianPrimitive:
    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    opacity: float = 1.0
    grad_stat: float = 0.0

    def __post_init__(self):
        pos = as_float_array(self.position, shape=(3,), name="position")
        s = as_float_array(self.scale, shape=(3,), name="scale")
        q = as_float_array(self.rotation, shape=(4,), name="rotation")
        op = float(check_scalar(float(self.opacity), "opacity", 0.0, 1.0))
        g = float(check_scalar(float(self.grad_stat), "grad_stat", 0.0))
        _check_gaussian_arrays(pos[None], s[None], q[None], np.array([op]), np.array([g]))
        object.__setattr__(self, "position", frozen(pos))
        object.__setattr__(self, "scale", frozen(s))
        object.__setattr__(self, "rotation", frozen(quat_normalize(q)))
        object.__setattr__(self, "opacity", op)
        object.__setattr__(self, "grad_stat", g)

    def __eq__(self, other):
        if not isinstance(other, GaussianPrimitive):
            return NotImplemented
        return (
            np.array_equal(self.position, other.position)
            and np.array_equal(self.scale, other.scale)
            and np.array_equal(self.rotation, other.rotation)
            and self.opacity == other.opacity
            and self.grad_stat == other.grad_stat
        )


@dataclass(frozen=True, eq=False)
class GaussianSet:
    """Columnar storage for a collection of :class:`GaussianPrimitive`.

    Indexing with an integer returns a primitive; iteration yields primitives.
    """

    positions: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    grad_stats: np.ndarray

    def __post_init__(self):
        pos = as_float_array(self.positions, shape=(None, 3), name="positions")
        s = as_float_array(self.scales, name="scales")
        q = as_float_array(self.rotations, name="rotations")
        op = as_float_array(self.opacities, name="opacities")
        g = as_float_array(self.grad_stats, name="grad_stats")
        _check_gaussian_arrays(pos, s, q, op, g)
        object.__setattr__(self, "positions", frozen(pos))
        object.__setattr__(self, "scales", frozen(s))
        object.__setattr__(self, "rotations", frozen(quat_normalize(q) if len(q) else q.reshape(0, 4)))
        object.__setattr__(self, "opacities", frozen(op))
        object.__setattr__(self, "grad_stats", frozen(g))

    @classmethod
    def from_primitives(cls, prims):
        prims = list(prims)
        if not prims:
            return cls.empty()
        return cls(
            np.stack([p.position for p in prims]),
            np.stack([p.scale for p in prims]),
            np.stack([p.rotation for p in prims]),
            np.array([p.opacity for p in prims]),
            np.array([p.grad_stat for p in prims]),
        )

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros(0))

    def __len__(self):
        return self.positions.shape[0]

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return GaussianPrimitive(
                self.positions[i], self.scales[i], self.rotations[i],
                float(self.opacities[i]), float(self.grad_stats[i]),
            )
        idx = np.arange(len(self))[i]
        return self.subset(idx)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, idx):
        return GaussianSet(
            self.positions[idx], self.scales[idx], self.rotations[idx],
            self.opacities[idx], self.grad_stats[idx],
        )

    def replace(self, **changes):
        fields = dict(
            positions=self.positions, scales=self.scales, rotations=self.rotations,
            opacities=self.opacities, grad_stats=self.grad_stats,
        )
        fields.update(changes)
        return GaussianSet(**fields)

    @staticmethod
    def concatenate(sets):
        sets = list(sets)
        return GaussianSet(
            np.concatenate([s.positions for s in sets]),
            np.concatenate([s.scales for s in sets]),
            np.concatenate([s.rotations for s in sets]),
            np.concatenate([s.opacities for s in sets]),
            np.concatenate([s.grad_stats for s in sets]),
        )

    def equals(self, other):
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("positions", "scales", "rotations", "opacities", "grad_stats")
        )


def as_gaussian_set(gaussians):
    if isinstance(gaussians, GaussianSet):
        return gaussians
    return GaussianSet.from_primitives(gaussians)


# --------------------------------------------------------------------------
# pair graph and trajectory
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PairGraph:
    """Directed, symmetric image-pair graph over ``n_views`` views."""

    n_views: int
    edges: tuple

    def __post_init__(self):
        check_scalar(self.n_views, "n_views", min_val=1, integer=True)
        edges = tuple((int(i), int(j)) for i, j in self.edges)
        seen = set()
        for i, j in edges:
            if not (0 <= i < self.n_views and 0 <= j < self.n_views):
                raise ValidationError(f"edge {(i, j)} out of range for {self.n_views} views")
            if i == j:
                raise ValidationError(f"self-loop {(i, j)}")
            if (i, j) in seen:
                raise ValidationError(f"duplicate edge {(i, j)}")
            seen.add((i, j))
        missing = [(i, j) for i, j in edges if (j, i) not in seen]
        if missing:
            raise ValidationError(f"graph is not symmetric, e.g. {missing[0]} lacks its reverse")
        object.__setattr__(self, "n_views", int(self.n_views))
        object.__setattr__(self, "edges", edges)

    def __len__(self):
        return len(self.edges)

    def edge_set(self):
        return frozenset(self.edges)

    def components(self):
        """Connected components of the underlying undirected graph."""
        parent = list(range(self.n_views))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for i, j in self.edges:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
        groups = {}
        for v in range(self.n_views):
            groups.setdefault(find(v), []).append(v)
        return list(groups.values())

    def is_connected(self):
        return len(self.components()) == 1

    def to_dict(self):
        return {"n_views": self.n_views, "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["n_views"]), tuple(tuple(e) for e in d["edges"]))


@dataclass(frozen=True)
class Trajectory:
    """Ordered camera-to-world poses, one per view."""

    poses: tuple

    def __post_init__(self):
        poses = tuple(self.poses)
        if not all(isinstance(p, RigidPose) for p in poses):
            raise ValidationError("trajectory entries must be RigidPose")
        object.__setattr__(self, "poses", poses)

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    def __iter__(self):
        return iter(self.poses)

    @property
    def positions(self):
        if not self.poses:
            return np.zeros((0, 3))
        return np.stack([p.translation for p in self.poses])

    @property
    def quaternions(self):
        return np.stack([p.rotation for p in self.poses])

    def transformed(self, transform):
        """Left-multiply every pose by a rigid or similarity transform.

        A similarity scales camera positions only; rotations stay proper.
        """
        if isinstance(transform, SimilarityTransform):
            s, g = transform.scale, transform.pose
        else:
            s, g = 1.0, transform
        out = []
        for p in self.poses:
            q = quat_multiply(g.rotation, p.rotation)
            out.append(RigidPose(q, s * (g.R @ p.translation) + g.translation))
        return Trajectory(tuple(out))

    def relative_to_first(self):
        """Re-express all poses so that the first one is the identity."""
        inv0 = self.poses[0].inverse()
        return Trajectory(tuple(inv0.compose(p) for p in self.poses))
