import numpy as np
import pytest
from sklearn.base import clone

from splatkit.alignment import (
    AlignmentConfig,
    AlignmentState,
    EdgeObservation,
    GlobalAligner,
    _own_edges,
    alignment_energy,
    extract_poses,
    fuse_global_cloud,
    init_alignment,
    optimize_global,
    optimize_global_detailed,
)
from splatkit.core_types import ConfidenceMap, PairGraph, PointMap, RigidPose, SimilarityTransform
from splatkit.exceptions import ConnectivityError, ConsistencyError, DivergenceError, SizeError
from splatkit.synthetic import SceneSpec, gen_edge_observations, gen_scene, ground_truth_state, render_views
from splatkit.trajectory_eval import ate
from splatkit.view_grouping import PairingScheme, build_pair_graph, image_to_feature


def pm(*pts):
    return PointMap(np.asarray(pts, dtype=float).reshape(1, len(pts), 3))


def cm(*vals):
    return ConfidenceMap(np.asarray(vals, dtype=float).reshape(1, len(vals)))


@pytest.fixture(scope="module")
def scene():
    return gen_scene(SceneSpec(n_views=20, seed=0))


@pytest.fixture(scope="module")
def small():
    sc = gen_scene(SceneSpec(n_views=6, seed=1, n_points=2000))
    g = build_pair_graph(PairingScheme.swin(1), 6)
    return sc, g, gen_edge_observations(sc, g)


def scheme_graph(scheme, scene):
    feats = [image_to_feature(im, 16) for im in render_views(scene)]
    return build_pair_graph(scheme, scene.spec.n_views, feats)


# --------------------------------------------------------------------------
# energy
# --------------------------------------------------------------------------


def test_energy_hand_example():
    o = EdgeObservation((0, 1), pm((0, 0, 0)), pm((5, 5, 5)), cm(2.0), cm(0.0))
    state = AlignmentState((pm((1, 0, 0)), pm((9, 9, 9))), ((0, 1),), (SimilarityTransform(1.0),))
    assert alignment_energy(state, [o]) == 2.0
    assert alignment_energy(state, [o], squared=True) == 2.0


def test_energy_zero_confidence(small):
    sc, g, obs = small
    zero = [o.scaled_confidence(0.0) for o in obs]
    state = init_alignment(g, obs)
    moved = AlignmentState(tuple(PointMap(p.points + 3.0) for p in state.global_pointmaps), state.edges, state.edge_transforms)
    assert alignment_energy(moved, zero) == 0.0


def test_energy_at_ground_truth(scene):
    g = build_pair_graph(PairingScheme.swin(2), 20)
    obs = gen_edge_observations(scene, g)
    assert alignment_energy(ground_truth_state(scene, obs), obs) <= 1e-9


def test_energy_missing_edge(small):
    sc, g, obs = small
    state = ground_truth_state(sc, obs[:-1])
    with pytest.raises(ConsistencyError):
        alignment_energy(state, obs)


def _perturbed(state, rng):
    gps = tuple(PointMap(p.points + 0.01 * rng.normal(size=p.points.shape)) for p in state.global_pointmaps)
    return AlignmentState(gps, state.edges, state.edge_transforms)


def test_energy_gauge_invariance(small):
    sc, g, obs = small
    rng = np.random.default_rng(0)
    state = _perturbed(ground_truth_state(sc, obs), rng)
    G = RigidPose(rng.normal(size=4), rng.normal(size=3))
    moved = AlignmentState(
        tuple(PointMap(G.apply(p.points.reshape(-1, 3)).reshape(p.points.shape)) for p in state.global_pointmaps),
        state.edges,
        tuple(SimilarityTransform(1.0, G).compose(T) for T in state.edge_transforms),
    )
    assert abs(alignment_energy(moved, obs) - alignment_energy(state, obs)) <= 1e-9


def test_energy_homogeneous_in_confidence(small):
    sc, g, obs = small
    state = _perturbed(ground_truth_state(sc, obs), np.random.default_rng(1))
    e = alignment_energy(state, obs)
    assert alignment_energy(state, [o.scaled_confidence(4.0) for o in obs]) == pytest.approx(4 * e, rel=1e-12)


# --------------------------------------------------------------------------
# initialization and optimization
# --------------------------------------------------------------------------


def test_init_two_views_exact():
    sc = gen_scene(SceneSpec(n_views=2, orbit_degrees=40, seed=2))
    g = PairGraph(2, ((0, 1), (1, 0)))
    obs = gen_edge_observations(sc, g)
    assert alignment_energy(init_alignment(g, obs), obs) <= 1e-6


def test_init_gauge(small):
    sc, g, obs = small
    state = init_alignment(g, obs)
    assert state.edge_transforms[0].scale == 1.0


def test_disconnected_graph_names_components(small):
    sc, _, _ = small
    g = PairGraph(6, ((0, 1), (1, 0), (1, 2), (2, 1), (3, 4), (4, 3), (4, 5), (5, 4)))
    obs = gen_edge_observations(sc, g)
    with pytest.raises(ConnectivityError) as err:
        init_alignment(g, obs)
    assert sorted(err.value.components) == [[0, 1, 2], [3, 4, 5]]
    assert "{0, 1, 2}" in str(err.value) and "{3, 4, 5}" in str(err.value)


def test_zero_edges():
    with pytest.raises(SizeError):
        init_alignment(PairGraph(1, ()), [])


def test_observation_graph_mismatch(small):
    sc, g, obs = small
    with pytest.raises(ConsistencyError):
        optimize_global(g, obs[:-1])
    with pytest.raises(ConsistencyError):
        optimize_global(g, obs + obs[:1])


def test_zero_iterations_returns_init(small):
    sc, g, obs = small
    state, traj, hist = optimize_global(g, obs, AlignmentConfig(max_iters=0))
    init = init_alignment(g, obs)
    for a, b in zip(state.global_pointmaps, init.global_pointmaps):
        assert np.array_equal(a.points, b.points)
    assert state.edge_transforms == init.edge_transforms
    assert len(hist) == 1


@pytest.mark.parametrize("scheme", [PairingScheme.oneref(), PairingScheme.swin(3), PairingScheme.group(2, link_groups=True)])
def test_noiseless_recovery_per_scheme(scene, scheme):
    g = scheme_graph(scheme, scene)
    obs = gen_edge_observations(scene, g)
    state, traj, hist = optimize_global(g, obs)
    assert all(b <= a for a, b in zip(hist, hist[1:]))
    assert hist[-1] <= 1e-8
    assert ate(traj, scene.trajectory) <= 1e-6


def test_noisy_history_monotone_and_improves():
    sc = gen_scene(SceneSpec(n_views=8, noise_sigma=0.01, seed=4, n_points=2000))
    g = build_pair_graph(PairingScheme.swin(2), 8)
    obs = gen_edge_observations(sc, g)
    res = optimize_global_detailed(g, obs, AlignmentConfig(max_iters=60))
    h = res.energy_history
    assert all(b <= a for a, b in zip(h, h[1:]))
    assert h[-1] < h[0]
    assert res.state.edge_transforms[0].scale == 1.0
    assert res.trajectory[0].allclose(RigidPose.identity(), 1e-12)


def test_squared_variant_runs(small):
    sc, g, obs = small
    noisy = gen_edge_observations(sc, g, SceneSpec(n_views=6, seed=1, n_points=2000, noise_sigma=0.01))
    _, _, hist = optimize_global(g, noisy, AlignmentConfig(max_iters=20, squared=True))
    assert all(b <= a for a, b in zip(hist, hist[1:]))


def test_subsampled_optimization_keeps_full_maps(small):
    sc, g, obs = small
    state, traj, hist = optimize_global(g, obs, AlignmentConfig(max_iters=30, subsample_stride=3))
    assert all(p.shape == (48, 64) for p in state.global_pointmaps)
    assert ate(traj, sc.trajectory) <= 1e-6


def test_divergence_error(small):
    sc, g, obs = small
    init = init_alignment(g, obs)
    huge = AlignmentState(tuple(PointMap(np.full(p.points.shape, 1e308)) for p in init.global_pointmaps), init.edges, init.edge_transforms)
    with pytest.raises(DivergenceError) as err:
        optimize_global(g, obs, init_state=huge)
    assert err.value.last_state is huge


# --------------------------------------------------------------------------
# read-out
# --------------------------------------------------------------------------


def test_extract_from_ground_truth(scene):
    g = build_pair_graph(PairingScheme.swin(1), 20)
    obs = gen_edge_observations(scene, g)
    traj = extract_poses(ground_truth_state(scene, obs), obs)
    for a, b in zip(traj, scene.trajectory.relative_to_first()):
        assert a.allclose(b, atol=1e-9)


def test_extract_identity_scene():
    rng = np.random.default_rng(5)
    world = [PointMap(rng.normal(size=(3, 4, 3))) for _ in range(3)]
    conf = ConfidenceMap(np.ones((3, 4)))
    edges = ((0, 1), (1, 0), (1, 2), (2, 1))
    obs = [EdgeObservation(e, world[e[0]], world[e[1]], conf, conf) for e in edges]
    state = AlignmentState(tuple(world), edges, (SimilarityTransform(1.0),) * 4)
    assert alignment_energy(state, obs) == 0.0
    for p in extract_poses(state, obs):
        assert p.allclose(RigidPose.identity(), 1e-12)


def test_own_edge_tie_goes_to_lower_index():
    a = PointMap(np.zeros((2, 2, 3)))
    c = ConfidenceMap(np.ones((2, 2)))
    obs = [EdgeObservation(e, a, a, c, c) for e in ((0, 1), (1, 0), (1, 2), (2, 1))]
    assert _own_edges(obs, 3) == [0, 1, 3]
    richer = EdgeObservation((1, 2), a, a, ConfidenceMap(np.full((2, 2), 2.0)), c)
    assert _own_edges([obs[0], obs[1], richer, obs[3]], 3) == [0, 2, 3]


def test_fuse_cloud(scene):
    g = build_pair_graph(PairingScheme.swin(1), 20)
    spec = SceneSpec(n_views=20, seed=0, conf_model="distance_decay")
    obs = gen_edge_observations(scene, g, spec)
    state = ground_truth_state(scene, obs)
    assert len(fuse_global_cloud(state, obs, 0.0)) == 20 * 48 * 64
    top = max(float(o.conf_i.values.max()) for o in obs)
    assert len(fuse_global_cloud(state, obs, top * 1.01)) == 0
    # brute force: per-pixel max over incident edges, then count
    per_view = []
    for v in range(20):
        m = np.zeros((48, 64))
        for o in obs:
            if o.edge[0] == v:
                m = np.maximum(m, o.conf_i.values)
            if o.edge[1] == v:
                m = np.maximum(m, o.conf_j.values)
        per_view.append(m)
    allc = np.concatenate([m.ravel() for m in per_view])
    thr = float(np.median(allc[allc > 0]))
    cloud = fuse_global_cloud(state, obs, thr)
    assert len(cloud) == int((allc >= thr).sum())
    expect = np.concatenate([state.global_pointmaps[v].flat()[per_view[v].ravel() >= thr] for v in range(20)])
    assert np.array_equal(cloud, expect)


def test_aligner_estimator(small):
    sc, g, obs = small
    est = GlobalAligner(max_iters=20)
    assert clone(est).get_params()["max_iters"] == 20
    est.fit(obs, graph=g)
    assert est.predict().shape == (6, 3)
    assert est.energy() == pytest.approx(est.energy_history_[-1], abs=1e-12)
    assert est.point_cloud().shape == (6 * 48 * 64, 3)
