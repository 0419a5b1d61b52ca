"""Readers and writers for the on-disk formats.

* Pointmap (``.pmap``): ``b"PMAP"`` | u32 version (=1) | u32 H | u32 W |
  H*W*3 float32 xyz | H*W float32 confidence, little-endian throughout.
* Gaussians (``.ply``): binary little-endian PLY, one float32 vertex
  property each for ``x y z scale_0 scale_1 scale_2 rot_0 rot_1 rot_2
  rot_3 opacity grad`` (``rot_0`` is the quaternion w component).
* Trajectory (``.txt``): one pose per line, ``index tx ty tz qw qx qy qz``.
* Pair graph (``.json``): ``{"n_views": n, "edges": [[i, j], ...]}``.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .core_types import ConfidenceMap, GaussianSet, PairGraph, PointMap, RigidPose, Trajectory
from .exceptions import FormatError, LengthError, ValidationError

PMAP_MAGIC = b"PMAP"
PMAP_VERSION = 1
_PMAP_HEADER = struct.Struct("<4sIII")

GAUSSIAN_PROPERTIES = (
    "x", "y", "z",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "opacity", "grad",
)
_GAUSSIAN_DTYPE = np.dtype([(name, "<f4") for name in GAUSSIAN_PROPERTIES])


# --------------------------------------------------------------------------
# pointmaps
# --------------------------------------------------------------------------


def save_pointmap(pointmap, confidence, path):
    if pointmap.shape != confidence.shape:
        raise ValidationError(
            f"pointmap {pointmap.shape} and confidence {confidence.shape} dimensions differ"
        )
    h, w = pointmap.shape
    with open(path, "wb") as f:
        f.write(_PMAP_HEADER.pack(PMAP_MAGIC, PMAP_VERSION, h, w))
        f.write(np.ascontiguousarray(pointmap.points, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(confidence.values, dtype="<f4").tobytes())


def load_pointmap(path):
    """Read a ``.pmap`` file and return ``(PointMap, ConfidenceMap)`` (float32)."""
    data = Path(path).read_bytes()
    if len(data) < _PMAP_HEADER.size:
        raise FormatError(f"{path}: file too short for a pointmap header")
    magic, version, h, w = _PMAP_HEADER.unpack_from(data)
    if magic != PMAP_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {PMAP_MAGIC!r}")
    if version != PMAP_VERSION:
        raise FormatError(f"{path}: unsupported pointmap version {version}")
    if h == 0 or w == 0:
        raise FormatError(f"{path}: empty grid {h}x{w}")
    expected = _PMAP_HEADER.size + 4 * h * w * 4
    if len(data) != expected:
        raise LengthError(f"{path}: payload is {len(data)} bytes, header implies {expected}")
    off = _PMAP_HEADER.size
    pts = np.frombuffer(data, dtype="<f4", count=h * w * 3, offset=off).reshape(h, w, 3)
    conf = np.frombuffer(data, dtype="<f4", count=h * w, offset=off + 12 * h * w).reshape(h, w)
    return PointMap(pts.astype(np.float32)), ConfidenceMap(conf.astype(np.float32))


# --------------------------------------------------------------------------
# Gaussians (PLY)
# --------------------------------------------------------------------------


def _ply_header(n, properties, dtype_name="float"):
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    lines += [f"property {dtype_name} {p}" for p in properties]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def save_gaussians(gaussians, path):
    gs = gaussians if isinstance(gaussians, GaussianSet) else GaussianSet.from_primitives(gaussians)
    if len(gs) == 0:
        raise ValidationError("refusing to write an empty Gaussian set")
    rec = np.empty(len(gs), dtype=_GAUSSIAN_DTYPE)
    for k, name in enumerate(("x", "y", "z")):
        rec[name] = gs.positions[:, k]
        rec[f"scale_{k}"] = gs.scales[:, k]
    for k in range(4):
        rec[f"rot_{k}"] = gs.rotations[:, k]
    rec["opacity"] = gs.opacities
    rec["grad"] = gs.grad_stats
    with open(path, "wb") as f:
        f.write(_ply_header(len(gs), GAUSSIAN_PROPERTIES))
        f.write(rec.tobytes())


def _read_ply_header(data, path):
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise FormatError(f"{path}: only binary_little_endian PLY is supported")
    n, props = None, []
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n = int(parts[2])
        elif parts and parts[0] == "property":
            if parts[1] not in ("float", "float32"):
                raise FormatError(f"{path}: unsupported property type {parts[1]}")
            props.append(parts[2])
    if n is None:
        raise FormatError(f"{path}: no vertex element")
    return n, props, end + len(b"end_header\n")


def load_gaussians(path):
    data = Path(path).read_bytes()
    n, props, off = _read_ply_header(data, path)
    if tuple(props) != GAUSSIAN_PROPERTIES:
        raise FormatError(f"{path}: vertex properties {props} do not match the Gaussian layout")
    if len(data) - off != n * _GAUSSIAN_DTYPE.itemsize:
        raise LengthError(f"{path}: vertex payload does not match {n} records")
    rec = np.frombuffer(data, dtype=_GAUSSIAN_DTYPE, count=n, offset=off)
    cols = {name: rec[name].astype(np.float64) for name in GAUSSIAN_PROPERTIES}
    return GaussianSet(
        np.stack([cols["x"], cols["y"], cols["z"]], axis=1),
        np.stack([cols[f"scale_{k}"] for k in range(3)], axis=1),
        np.stack([cols[f"rot_{k}"] for k in range(4)], axis=1),
        cols["opacity"],
        cols["grad"],
    )


def save_point_cloud(points, path):
    """Write an xyz-only binary PLY."""
    pts = np.ascontiguousarray(np.asarray(points).reshape(-1, 3), dtype="<f4")
    with open(path, "wb") as f:
        f.write(_ply_header(len(pts), ("x", "y", "z")))
        f.write(pts.tobytes())


def load_point_cloud(path):
    data = Path(path).read_bytes()
    n, props, off = _read_ply_header(data, path)
    if props != ["x", "y", "z"]:
        raise FormatError(f"{path}: expected x y z vertex properties")
    return np.frombuffer(data, dtype="<f4", count=3 * n, offset=off).reshape(n, 3).astype(np.float64)


# --------------------------------------------------------------------------
# trajectories and graphs
# --------------------------------------------------------------------------


def save_trajectory(traj, path):
    with open(path, "w") as f:
        for i, p in enumerate(traj.poses):
            vals = list(p.translation) + list(p.rotation)
            f.write(f"{i} " + " ".join(repr(float(v)) for v in vals) + "\n")


def load_trajectory(path):
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise FormatError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            rows.append((int(parts[0]), [float(v) for v in parts[1:]]))
    rows.sort(key=lambda r: r[0])
    if [r[0] for r in rows] != list(range(len(rows))):
        raise FormatError(f"{path}: pose indices must be 0..n-1")
    return Trajectory(tuple(RigidPose(v[3:], v[:3]) for _, v in rows))


def save_graph(graph, path):
    with open(path, "w") as f:
        json.dump(graph.to_dict(), f)
        f.write("\n")


def load_graph(path):
    with open(path) as f:
        try:
            return PairGraph.from_dict(json.load(f))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: malformed pair graph ({exc})") from exc
