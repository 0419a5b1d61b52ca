"""Pair-graph construction for an ordered image sequence.

Four schemes are provided: ``complete``, ``oneref``, cyclic ``swin`` and the
similarity-driven ``group`` scheme.  The group scheme measures the cosine
similarity of adjacent frames, takes the absolute difference of consecutive
similarities, cuts the sequence at the ``k`` largest jumps and pairs every
member of each resulting group with the group's first view.

Every scheme emits symmetric graphs (both ``(i, j)`` and ``(j, i)``).
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_scalar
from .core_types import PairGraph
from .exceptions import ConfigurationError, DegenerateInputError, SizeError, ValidationError

__all__ = [
    "PairingScheme",
    "GroupPartition",
    "image_to_feature",
    "cosine_similarity",
    "adjacent_similarities",
    "difference_array",
    "select_split_points",
    "build_groups",
    "build_pair_graph",
    "pair_graph_stats",
    "PairGraphBuilder",
]

SCHEMES = ("complete", "oneref", "swin", "group")


@dataclass(frozen=True)
class PairingScheme:
    """Pairing scheme name plus its parameter.

    ``window`` is used by ``swin``, ``k`` by ``group``.  ``link_groups`` makes
    the group scheme additionally pair consecutive group references so that
    the graph is connected (off by default; see :func:`build_pair_graph`).
    """

    name: str
    window: int = 3
    k: int = 2
    link_groups: bool = False

    def __post_init__(self):
        if self.name not in SCHEMES:
            raise ValidationError(f"unknown scheme {self.name!r}; choose from {SCHEMES}")
        check_scalar(self.window, "window", min_val=1, integer=True)
        check_scalar(self.k, "k", min_val=0, integer=True)

    @classmethod
    def complete(cls):
        return cls("complete")

    @classmethod
    def oneref(cls):
        return cls("oneref")

    @classmethod
    def swin(cls, window=3):
        return cls("swin", window=window)

    @classmethod
    def group(cls, k=2, link_groups=False):
        return cls("group", k=k, link_groups=link_groups)

    @property
    def label(self):
        if self.name == "swin":
            return f"swin{self.window}"
        if self.name == "group":
            return f"group{self.k}" + ("+link" if self.link_groups else "")
        return self.name


@dataclass(frozen=True)
class GroupPartition:
    """Contiguous, ordered, non-empty index ranges covering ``[0, n)``.

    Each group is stored as ``(start, stop)`` with ``stop`` exclusive.
    """

    n_views: int
    groups: tuple

    def __post_init__(self):
        groups = tuple((int(a), int(b)) for a, b in self.groups)
        pos = 0
        for a, b in groups:
            if a != pos or b <= a:
                raise ValidationError(f"groups {groups} are not contiguous non-empty ranges")
            pos = b
        if pos != self.n_views:
            raise ValidationError(f"groups {groups} do not cover {self.n_views} views")
        object.__setattr__(self, "groups", groups)

    def __len__(self):
        return len(self.groups)

    def members(self, p):
        a, b = self.groups[p]
        return list(range(a, b))

    def as_lists(self):
        return [list(range(a, b)) for a, b in self.groups]


# --------------------------------------------------------------------------
# similarity features
# --------------------------------------------------------------------------


def _area_weights(n_in, n_out):
    """(n_out, n_in) matrix whose rows average the covered input cells by area."""
    edges_out = np.arange(n_out + 1) * (n_in / n_out)
    lo = np.maximum(edges_out[:-1, None], np.arange(n_in)[None, :])
    hi = np.minimum(edges_out[1:, None], np.arange(1, n_in + 1)[None, :])
    overlap = np.clip(hi - lo, 0.0, None)
    return overlap / (n_in / n_out)


def image_to_feature(pixels, downsample=64):
    """Area-average an ``H x W x 3`` image to ``downsample x downsample`` and flatten.

    Non-integer block sizes are handled with fractional pixel coverage, so the
    result is the exact mean over each output cell's footprint.
    """
    img = np.asarray(pixels, dtype=np.float64)
    if img.size == 0:
        raise DegenerateInputError("empty image")
    if img.ndim == 2:
        img = img[..., None].repeat(3, axis=2)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValidationError(f"image must be H x W x 3, got {img.shape}")
    check_scalar(downsample, "downsample", min_val=1, integer=True)
    h, w = img.shape[:2]
    if downsample > min(h, w):
        raise SizeError(f"downsample {downsample} exceeds image size {h}x{w}")
    Ar = _area_weights(h, downsample)
    Ac = _area_weights(w, downsample)
    out = np.einsum("ih,hwc,jw->ijc", Ar, img, Ac)
    return out.reshape(-1)


def _as_feature(v, name):
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise DegenerateInputError(f"{name} is empty")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} contains non-finite values")
    return v


def cosine_similarity(a, b):
    a = _as_feature(a, "a")
    b = _as_feature(b, "b")
    if a.shape != b.shape:
        raise ValidationError(f"feature lengths differ: {a.size} vs {b.size}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    return float(np.clip(np.dot(a / na, b / nb), -1.0, 1.0))


def adjacent_similarities(features):
    """Cosine similarity of each consecutive pair; length ``n - 1``."""
    feats = [_as_feature(f, f"features[{i}]") for i, f in enumerate(features)]
    if len(feats) < 2:
        raise SizeError("need at least two frames")
    if len({f.size for f in feats}) != 1:
        raise ValidationError("all feature vectors must have equal length")
    return [cosine_similarity(feats[i], feats[i + 1]) for i in range(len(feats) - 1)]


def difference_array(sims):
    sims = np.asarray(sims, dtype=np.float64)
    if sims.ndim != 1 or sims.size < 2:
        raise SizeError("difference array needs at least two similarities")
    return list(np.abs(sims[:-1] - sims[1:]))


def select_split_points(delta, k):
    """Indices of the ``k`` largest entries, ascending; ties go to the lower index."""
    delta = np.asarray(delta, dtype=np.float64)
    check_scalar(k, "k", min_val=0, integer=True)
    if k > delta.size:
        raise SizeError(f"cannot select {k} split points from {delta.size} differences")
    # stable sort on -delta keeps lower indices first among equal values
    order = np.argsort(-delta, kind="stable")
    return sorted(int(i) for i in order[:k])


def build_groups(n_views, splits):
    """Cut ``range(n_views)`` after view ``i + 1`` for every split index ``i``."""
    check_scalar(n_views, "n_views", min_val=1, integer=True)
    splits = [int(s) for s in splits]
    if splits != sorted(set(splits)):
        raise ValidationError(f"split indices must be strictly ascending, got {splits}")
    for s in splits:
        if not 0 <= s < n_views - 2:
            raise ValidationError(f"split index {s} out of range for {n_views} views")
    cuts = [0] + [s + 2 for s in splits] + [n_views]
    return GroupPartition(n_views, tuple(zip(cuts[:-1], cuts[1:])))


# --------------------------------------------------------------------------
# graph construction
# --------------------------------------------------------------------------


def _symmetrize(pairs):
    edges = []
    seen = set()
    for i, j in pairs:
        for e in ((i, j), (j, i)):
            if e not in seen:
                seen.add(e)
                edges.append(e)
    return edges


def group_partition(features, k):
    """Run the similarity/difference/top-k steps and return the partition."""
    n = len(features)
    if k > max(n - 3, 0):
        raise ConfigurationError(f"k={k} split points need k <= n - 3 = {n - 3}")
    if k == 0:
        return GroupPartition(n, ((0, n),))
    delta = difference_array(adjacent_similarities(features))
    return build_groups(n, select_split_points(delta, k))


def build_pair_graph(scheme, n_views, features=None):
    """Build the directed, symmetric pair graph for ``scheme``.

    Edge counts: complete ``n(n-1)``, oneref ``2(n-1)``, swin ``2wn`` (for
    ``n > 2w``, cyclic window), group ``2(n-g)`` with ``g = k + 1`` groups.

    The plain group graph has one connected component per group.  With
    ``scheme.link_groups`` the reference of each group is also paired with the
    reference of the next group, adding ``2(g-1)`` edges and connecting it.
    """
    if isinstance(scheme, str):
        scheme = PairingScheme(scheme)
    check_scalar(n_views, "n_views", min_val=2, integer=True)
    n = n_views

    if scheme.name == "complete":
        pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    elif scheme.name == "oneref":
        pairs = [(0, j) for j in range(1, n)]
    elif scheme.name == "swin":
        pairs = [(i, (i + d) % n) for i in range(n) for d in range(1, scheme.window + 1)]
        pairs = [(i, j) for i, j in pairs if i != j]
    else:
        if features is None:
            raise ConfigurationError("the group scheme needs per-view features")
        if len(features) != n:
            raise ConfigurationError(f"got {len(features)} feature vectors for {n} views")
        part = group_partition(features, scheme.k)
        pairs = []
        for a, b in part.groups:
            pairs += [(a, q) for q in range(a + 1, b)]
        if scheme.link_groups:
            refs = [a for a, _ in part.groups]
            pairs += list(zip(refs[:-1], refs[1:]))

    edges = _symmetrize(pairs)
    if not edges:
        raise ConfigurationError(f"scheme {scheme.label} produced no edges for {n} views")
    return PairGraph(n, tuple(edges))


def pair_graph_stats(graph, bytes_per_edge):
    """Edge count and a linear memory estimate ``count * bytes_per_edge``."""
    check_scalar(bytes_per_edge, "bytes_per_edge", min_val=0)
    count = len(graph.edges)
    return {"edge_count": count, "memory_bytes": count * bytes_per_edge}


class PairGraphBuilder(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` on per-view features (or images), yields a graph.

    Parameters
    ----------
    scheme : {"complete", "oneref", "swin", "group"}
    window : int
        Cyclic window for ``swin``.
    k : int
        Number of split points for ``group``.
    link_groups : bool
        Pair consecutive group references (group scheme only).
    downsample : int or None
        If set, ``fit`` treats its input as ``(n, H, W, 3)`` images and
        converts each with :func:`image_to_feature`.

    Attributes
    ----------
    graph_ : PairGraph
    partition_ : GroupPartition or None
    n_views_ : int
    """

    def __init__(self, scheme="group", window=3, k=2, link_groups=False, downsample=None):
        self.scheme = scheme
        self.window = window
        self.k = k
        self.link_groups = link_groups
        self.downsample = downsample

    def _scheme(self):
        return PairingScheme(self.scheme, window=self.window, k=self.k, link_groups=self.link_groups)

    def fit(self, X, y=None):
        """``X`` is either a view count (int) or a sequence of per-view inputs."""
        scheme = self._scheme()
        if isinstance(X, (int, np.integer)):
            n, feats = int(X), None
        else:
            feats = list(X)
            if self.downsample is not None:
                feats = [image_to_feature(img, self.downsample) for img in feats]
            n = len(feats)
        self.graph_ = build_pair_graph(scheme, n, feats)
        self.partition_ = group_partition(feats, scheme.k) if scheme.name == "group" else None
        self.n_views_ = n
        return self

    def transform(self, X=None):
        """Return the fitted edges as an ``(E, 2)`` integer array."""
        check_is_fitted(self, "graph_")
        return np.asarray(self.graph_.edges, dtype=np.int64).reshape(-1, 2)
