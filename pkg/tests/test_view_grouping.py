import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from splatkit.exceptions import ConfigurationError, DegenerateInputError, SizeError, ValidationError
from splatkit.view_grouping import (
    PairGraphBuilder,
    PairingScheme,
    adjacent_similarities,
    build_groups,
    build_pair_graph,
    cosine_similarity,
    difference_array,
    image_to_feature,
    pair_graph_stats,
    select_split_points,
)


def random_features(n, seed=0, dim=12):
    return list(np.random.default_rng(seed).random((n, dim)) + 0.1)


def check_graph(g):
    edges = set(g.edges)
    assert len(edges) == len(g.edges)
    for i, j in edges:
        assert 0 <= i < g.n_views and 0 <= j < g.n_views and i != j
        assert (j, i) in edges


# --------------------------------------------------------------------------
# features and similarity
# --------------------------------------------------------------------------


def test_constant_gray_downsample_to_one():
    out = image_to_feature(np.full((2, 2, 3), 0.3), 1)
    assert out.shape == (3,)
    np.testing.assert_allclose(out, 0.3, rtol=0, atol=1e-15)


def test_downsample_to_input_size_is_identity():
    img = np.random.default_rng(0).random((5, 5, 3))
    np.testing.assert_allclose(image_to_feature(img, 5), img.reshape(-1), atol=1e-15)


def test_checkerboard_block_means():
    board = (np.indices((4, 4)).sum(axis=0) % 2).astype(float)
    img = np.stack([board, 2 * board, 1 - board], axis=-1)
    expect = np.zeros((2, 2, 3))
    for r in range(2):
        for c in range(2):
            expect[r, c] = img[2 * r:2 * r + 2, 2 * c:2 * c + 2].mean(axis=(0, 1))
    np.testing.assert_allclose(image_to_feature(img, 2), expect.reshape(-1), atol=1e-15)


def test_fractional_area_average():
    # 3 pixels into 2 cells: cell 0 covers p0 + half p1, cell 1 covers half p1 + p2
    img = np.zeros((3, 3, 3))
    img[:, :, 0] = np.array([1.0, 2.0, 4.0])[None, :]
    out = image_to_feature(img, 2).reshape(2, 2, 3)
    np.testing.assert_allclose(out[0, :, 0], [(1 + 1) / 1.5, (1 + 4) / 1.5])


def test_image_to_feature_errors():
    with pytest.raises(DegenerateInputError):
        image_to_feature(np.zeros((0, 0, 3)), 1)
    with pytest.raises(SizeError):
        image_to_feature(np.zeros((4, 4, 3)), 8)


def test_cosine_examples():
    assert cosine_similarity([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0, abs=1e-12)
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    with pytest.raises(DegenerateInputError):
        cosine_similarity([0, 0], [1, 0])


vec = st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=3).filter(
    lambda v: np.linalg.norm(v) > 1e-3
)


@given(vec, vec, st.floats(1e-3, 1e3))
def test_cosine_properties(a, b, alpha):
    s = cosine_similarity(a, b)
    assert -1 <= s <= 1
    assert s == pytest.approx(cosine_similarity(b, a), abs=1e-12)
    assert cosine_similarity(np.multiply(alpha, a), b) == pytest.approx(s, abs=1e-12)
    assert cosine_similarity(a, a) == pytest.approx(1.0, abs=1e-12)


def test_adjacent_similarities():
    f = [np.ones(4)] * 5
    assert adjacent_similarities(f) == pytest.approx([1.0] * 4)
    frames = [np.array([1.0, 0, 0]), np.array([1.0, 1, 0]), np.array([0, 1.0, 1])]
    # direct evaluation: 1/sqrt2 and 1/2
    assert adjacent_similarities(frames) == pytest.approx([1 / math.sqrt(2), 0.5], abs=1e-12)
    assert len(adjacent_similarities(frames[:2])) == 1


def test_difference_array():
    assert difference_array([0.7, 0.7, 0.7]) == [0, 0]
    assert difference_array([0.9, 0.5, 0.8]) == pytest.approx([0.4, 0.3], abs=1e-12)
    assert len(difference_array([0.1, 0.2])) == 1
    with pytest.raises(SizeError):
        difference_array([0.1])


def test_select_split_points():
    assert select_split_points([0.4, 0.3], 1) == [0]
    assert select_split_points([0.4, 0.3], 0) == []
    assert select_split_points([0.2, 0.2, 0.1], 2) == [0, 1]
    with pytest.raises(SizeError):
        select_split_points([0.1], 2)


@given(
    st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=30),
    st.integers(0, 10),
    st.integers(0, 5),
)
def test_select_split_points_ignores_appended_minus_inf(delta, k, pad):
    k = min(k, len(delta))
    base = select_split_points(delta, k)
    assert select_split_points(delta + [-math.inf] * pad, k) == base
    # brute force: sort by (-value, index)
    expect = sorted(sorted(range(len(delta)), key=lambda i: (-delta[i], i))[:k])
    assert base == expect


def test_build_groups_examples():
    assert build_groups(6, [1]).as_lists() == [[0, 1, 2], [3, 4, 5]]
    assert build_groups(5, []).as_lists() == [[0, 1, 2, 3, 4]]
    assert build_groups(6, [0, 3]).as_lists() == [[0, 1], [2, 3, 4], [5]]
    with pytest.raises(ValidationError):
        build_groups(6, [4])
    with pytest.raises(ValidationError):
        build_groups(6, [3, 1])


# --------------------------------------------------------------------------
# graphs
# --------------------------------------------------------------------------


def test_pair_counts_at_400_views():
    assert len(build_pair_graph(PairingScheme.complete(), 400).edges) == 159_600
    assert len(build_pair_graph(PairingScheme.oneref(), 400).edges) == 798
    assert len(build_pair_graph(PairingScheme.swin(3), 400).edges) == 2_400
    g = build_pair_graph(PairingScheme.group(2), 400, random_features(400))
    assert len(g.edges) == 2 * (400 - 3)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 500), st.integers(1, 5), st.integers(0, 4), st.integers(0, 1000))
def test_all_schemes_valid_and_counts_hold(n, w, k, seed):
    g = build_pair_graph(PairingScheme.complete(), n) if n <= 120 else None
    if g is not None:
        check_graph(g)
        assert len(g.edges) == n * (n - 1)
    g = build_pair_graph(PairingScheme.oneref(), n)
    check_graph(g)
    assert len(g.edges) == 2 * (n - 1)
    g = build_pair_graph(PairingScheme.swin(w), n)
    check_graph(g)
    if n > 2 * w:
        assert len(g.edges) == 2 * w * n
    if n >= 3:
        k = min(k, n - 3)
        g = build_pair_graph(PairingScheme.group(k), n, random_features(n, seed, 4))
        check_graph(g)
        assert len(g.edges) == 2 * (n - (k + 1))


@given(st.integers(3, 60))
def test_group_k0_equals_oneref(n):
    feats = random_features(n)
    g = build_pair_graph(PairingScheme.group(0), n, feats)
    assert set(g.edges) == set(build_pair_graph(PairingScheme.oneref(), n).edges)


def test_group_picks_scene_cut():
    # frames 0-4 similar, 5-9 another look: the only large jump is around view 5
    rng = np.random.default_rng(1)
    a, b = rng.random(30), rng.random(30)
    feats = [a + 0.01 * rng.random(30) for _ in range(5)] + [b + 0.01 * rng.random(30) for _ in range(5)]
    builder = PairGraphBuilder(scheme="group", k=1).fit(feats)
    assert len(builder.partition_) == 2
    assert builder.partition_.groups[1][0] in (4, 5, 6)


def test_link_groups_connects():
    feats = random_features(30, 3)
    plain = build_pair_graph(PairingScheme.group(2), 30, feats)
    linked = build_pair_graph(PairingScheme.group(2, link_groups=True), 30, feats)
    assert len(plain.components()) == 3
    assert linked.is_connected()
    assert len(linked.edges) == len(plain.edges) + 4


def test_group_errors():
    with pytest.raises(ConfigurationError):
        build_pair_graph(PairingScheme.group(2), 10)
    with pytest.raises(ConfigurationError):
        build_pair_graph(PairingScheme.group(3), 5, random_features(5))
    with pytest.raises(ValidationError):
        PairingScheme.swin(0)


def test_pair_graph_stats():
    g = build_pair_graph(PairingScheme.complete(), 400)
    assert pair_graph_stats(g, 7) == {"edge_count": 159_600, "memory_bytes": 159_600 * 7}
    o = build_pair_graph(PairingScheme.oneref(), 400)
    assert pair_graph_stats(o, 2**20)["memory_bytes"] == 798 * 2**20
    from splatkit.core_types import PairGraph

    assert pair_graph_stats(PairGraph(3, ()), 10) == {"edge_count": 0, "memory_bytes": 0}


def test_builder_estimator_api():
    b = PairGraphBuilder(scheme="swin", window=2)
    assert b.get_params()["window"] == 2
    c = clone(b).set_params(window=1)
    edges = c.fit_transform(10)
    assert edges.shape == (20, 2)


def test_builder_from_images():
    imgs = np.random.default_rng(2).random((6, 8, 8, 3))
    b = PairGraphBuilder(scheme="group", k=1, downsample=4).fit(imgs)
    assert len(b.graph_.edges) == 2 * (6 - 2)
