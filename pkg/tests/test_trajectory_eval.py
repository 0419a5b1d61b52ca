import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from splatkit.core_types import RigidPose, SimilarityTransform, Trajectory
from splatkit.exceptions import DegeneracyError, SizeError
from splatkit.trajectory_eval import ate, evaluate, rpe, umeyama_align


def random_traj(n, seed):
    rng = np.random.default_rng(seed)
    return Trajectory(tuple(RigidPose(rng.normal(size=4), rng.normal(size=3)) for _ in range(n)))


def random_sim(rng, scale=None):
    s = rng.uniform(0.2, 5) if scale is None else scale
    return SimilarityTransform(s, RigidPose(rng.normal(size=4), rng.normal(size=3) * 3))


def rz(deg):
    return Rotation.from_euler("z", deg, degrees=True)


def test_umeyama_identity():
    x = np.random.default_rng(0).normal(size=(10, 3))
    S = umeyama_align(x, x)
    assert abs(S.scale - 1) <= 1e-12
    assert S.pose.angle <= 1e-12
    assert np.linalg.norm(S.pose.translation) <= 1e-12


def test_umeyama_recovers_known_transform():
    x = np.random.default_rng(1).normal(size=(10, 3))
    R = rz(90).as_matrix()
    y = 2 * x @ R.T + [1, 2, 3]
    S = umeyama_align(x, y)
    assert S.scale == pytest.approx(2, abs=1e-9)
    np.testing.assert_allclose(S.pose.R, R, atol=1e-9)
    np.testing.assert_allclose(S.pose.translation, [1, 2, 3], atol=1e-9)


def test_umeyama_reflection_stays_proper():
    x = np.random.default_rng(2).normal(size=(10, 3))
    y = x * [1, 1, -1]
    S = umeyama_align(x, y)
    assert np.linalg.det(S.pose.R) == pytest.approx(1, abs=1e-12)
    assert np.linalg.norm(S.apply(x) - y) > 1e-3


def test_umeyama_degenerate():
    with pytest.raises(DegeneracyError):
        umeyama_align(np.zeros((5, 3)), np.zeros((5, 3)))
    line = np.outer(np.arange(5.0), [1, 2, 3])
    with pytest.raises(DegeneracyError):
        umeyama_align(line, line)
    with pytest.raises(DegeneracyError):
        umeyama_align(np.eye(3)[:2], np.eye(3)[:2])


@pytest.mark.parametrize("seed", range(10))
def test_umeyama_round_trip_random(seed):
    rng = np.random.default_rng(100 + seed)
    x = rng.normal(size=(rng.integers(3, 50), 3))
    T = random_sim(rng)
    S = umeyama_align(x, T.apply(x))
    assert S.scale == pytest.approx(T.scale, abs=1e-9)
    assert S.pose.allclose(T.pose, atol=1e-9)


def test_umeyama_is_global_minimum():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(30, 3))
    y = random_sim(rng).apply(x) + 0.05 * rng.normal(size=(30, 3))
    S = umeyama_align(x, y)
    best = np.sum((S.apply(x) - y) ** 2)
    for _ in range(100):
        dq = RigidPose.from_matrix(Rotation.from_rotvec(1e-3 * rng.normal(size=3)).as_matrix(), 1e-3 * rng.normal(size=3))
        P = SimilarityTransform(S.scale * math.exp(1e-3 * rng.normal()), dq.compose(S.pose))
        assert np.sum((P.apply(x) - y) ** 2) >= best


def test_ate_examples():
    gt = random_traj(12, 4)
    assert ate(gt, gt) <= 1e-12
    T = random_sim(np.random.default_rng(5), scale=3.0)
    assert ate(gt.transformed(T), gt) <= 1e-9


def test_ate_single_perturbation_matches_direct_rmse():
    gt = random_traj(10, 6)
    pos = gt.positions.copy()
    pos[4] += [0.0, 0.0, 0.05]
    est = Trajectory(tuple(RigidPose(p.rotation, t) for p, t in zip(gt, pos)))
    # oracle: independent alignment by brute RMSE after optimal similarity (via scipy)
    S = umeyama_align(pos, gt.positions)
    direct = math.sqrt(np.mean(np.sum((S.apply(pos) - gt.positions) ** 2, axis=1)))
    assert ate(est, gt) == pytest.approx(direct, rel=1e-12)
    # alignment can only reduce the error below the unaligned d/sqrt(n)
    assert ate(est, gt) <= 0.05 / math.sqrt(10) + 1e-12


def test_rpe_examples():
    gt = random_traj(8, 7)
    assert rpe(gt, gt) == (0.0, 0.0) or max(rpe(gt, gt)) <= 1e-12
    G = RigidPose(np.random.default_rng(8).normal(size=4), [3, -1, 2])
    est = Trajectory(tuple(G.compose(p) for p in gt))
    assert max(rpe(est, gt)) <= 1e-9


def test_rpe_single_rotation_error():
    n = 10
    gt = Trajectory(tuple(RigidPose.identity() for _ in range(n)))
    q5 = rz(5).as_quat()[[3, 0, 1, 2]]
    est = Trajectory(tuple(RigidPose(q5 if i >= 4 else [1, 0, 0, 0], [0, 0, 0]) for i in range(n)))
    rpe_t, rpe_r = rpe(est, gt)
    assert rpe_t <= 1e-12
    assert rpe_r == pytest.approx(5 / math.sqrt(n - 1), abs=1e-9)


def test_rpe_linear_step():
    d = 0.05
    gt = Trajectory(tuple(RigidPose.identity() for _ in range(6)))
    moving = Trajectory(tuple(RigidPose([1, 0, 0, 0], [d * i, 0, 0]) for i in range(6)))
    assert rpe(moving, gt)[0] == pytest.approx(d, abs=1e-12)


def test_length_mismatch():
    with pytest.raises(SizeError):
        ate(random_traj(4, 0), random_traj(5, 0))
    with pytest.raises(SizeError):
        rpe(random_traj(4, 0), random_traj(5, 0))
    with pytest.raises(SizeError):
        rpe(random_traj(3, 0), random_traj(3, 0), delta=3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_metric_invariances(seed):
    rng = np.random.default_rng(seed)
    gt = random_traj(8, seed)
    est = Trajectory(tuple(RigidPose(p.rotation + 0.05 * rng.normal(size=4), p.translation + 0.05 * rng.normal(size=3)) for p in gt))
    base_ate = ate(est, gt)
    base_rpe = rpe(est, gt)
    assert abs(ate(est.transformed(random_sim(rng)), gt) - base_ate) <= 1e-9
    G = RigidPose(rng.normal(size=4), rng.normal(size=3))
    moved = Trajectory(tuple(G.compose(p) for p in est))
    np.testing.assert_allclose(rpe(moved, gt), base_rpe, atol=1e-9)
    gmoved = Trajectory(tuple(G.compose(p) for p in gt))
    np.testing.assert_allclose(rpe(est, gmoved), base_rpe, atol=1e-9)


def test_evaluate_bundle():
    gt = random_traj(5, 9)
    m = evaluate(gt, gt)
    assert m.to_dict().keys() == {"ate", "rpe_t", "rpe_r"}
    assert max(m.to_dict().values()) <= 1e-9
