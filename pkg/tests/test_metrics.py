import numpy as np
import pytest

from videomotion.body import axis_angle_to_matrix
from videomotion.metrics import (
    FEATURE_DIM,
    VELOCITY_FEATURE_IDX,
    accel_error,
    diversity,
    fid,
    kinematic_features,
    mpjpe,
    pa_mpjpe,
    procrustes_align,
    pve,
)
from videomotion.motion import MotionSequence

from conftest import random_motion


def random_joints(rng, frames=4, joints=22):
    return rng.normal(0.0, 0.5, size=(frames, joints, 3))


class TestMpjpe:
    def test_identical_inputs(self, rng):
        x = random_joints(rng)
        assert mpjpe(x, x) == 0.0

    def test_global_offset_removed(self, rng):
        x = random_joints(rng)
        assert mpjpe(x + np.array([0.3, -0.2, 0.9]), x) < 1e-9

    def test_single_displacement_matches_loop_oracle(self, rng):
        frames, joints = 5, 22
        gt = random_joints(rng, frames, joints)
        pred = gt.copy()
        pred[2, 7, 1] += 0.005  # 5 mm on one joint of one frame
        got = mpjpe(pred, gt)
        # Naive double loop with explicit root alignment.
        total = 0.0
        for t in range(frames):
            for j in range(joints):
                d = (pred[t, j] - pred[t, 0]) - (gt[t, j] - gt[t, 0])
                total += np.linalg.norm(d)
        expected = total / (frames * joints) * 1000.0
        assert abs(got - expected) < 1e-9
        assert abs(got - 5.0 / (frames * joints)) < 1e-9

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(ValueError):
            mpjpe(random_joints(rng, 3), random_joints(rng, 4))


class TestProcrustes:
    def test_identity_recovery(self, rng):
        x = rng.normal(size=(10, 3))
        fit = procrustes_align(x, x)
        assert abs(fit.scale - 1.0) < 1e-10
        np.testing.assert_allclose(fit.rotation, np.eye(3), atol=1e-10)
        np.testing.assert_allclose(fit.translation, 0.0, atol=1e-10)
        assert not fit.degenerate

    def test_constructed_similarity_recovered(self, rng):
        x = rng.normal(size=(12, 3))
        rot0 = axis_angle_to_matrix(rng.normal(0, 0.8, 3))
        t0 = rng.normal(0, 2, 3)
        y = 2.0 * x @ rot0.T + t0
        fit = procrustes_align(x, y)
        assert abs(fit.scale - 2.0) < 1e-8
        np.testing.assert_allclose(fit.rotation, rot0, atol=1e-8)
        np.testing.assert_allclose(fit.translation, t0, atol=1e-8)

    def test_beats_random_search(self, rng):
        x = rng.normal(size=(8, 3))
        y = 1.5 * x @ axis_angle_to_matrix(rng.normal(0, 0.5, 3)).T + rng.normal(0, 1, 3)
        y += rng.normal(0, 0.05, size=y.shape)
        fit = procrustes_align(x, y)
        best = ((fit.scale * x @ fit.rotation.T + fit.translation - y) ** 2).sum()
        for _ in range(1000):
            s = rng.uniform(0.5, 2.5)
            rot = axis_angle_to_matrix(rng.normal(0, 1.0, 3))
            t = rng.normal(0, 1, 3)
            resid = ((s * x @ rot.T + t - y) ** 2).sum()
            assert best <= resid + 1e-12

    def test_degenerate_flagged(self):
        x = np.zeros((5, 3))
        fit = procrustes_align(x, np.ones((5, 3)))
        assert fit.degenerate
        assert fit.scale == 1.0
        np.testing.assert_array_equal(fit.rotation, np.eye(3))


class TestPaMpjpe:
    def test_similarity_copy_is_zero(self, rng):
        gt = random_joints(rng, frames=3)
        rot0 = axis_angle_to_matrix(rng.normal(0, 0.9, 3))
        pred = 1.7 * gt @ rot0.T + rng.normal(0, 1, 3)
        assert pa_mpjpe(pred, gt) < 1e-6

    def test_never_exceeds_mpjpe(self, rng):
        for _ in range(200):
            gt = random_joints(rng, frames=2, joints=8)
            pred = gt + rng.normal(0, 0.1, size=gt.shape)
            assert pa_mpjpe(pred, gt) <= mpjpe(pred, gt) + 1e-9

    def test_hand_built_four_point_frame(self):
        # X = +-e1, +-e2; Y equals X with the first point stretched to (2,0,0).
        # Closed form: H = diag(3, 2, 0), R = I, s = 5/4, t = (1/4, 0, 0);
        # residual norms are 0.5, 0, 0.25*sqrt(2), 0.25*sqrt(2).
        x = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0]])
        y = x.copy()
        y[0, 0] = 2.0
        expected_m = (0.5 + 2 * 0.25 * np.sqrt(2.0)) / 4.0
        got = pa_mpjpe(x[None], y[None])
        assert abs(got - expected_m * 1000.0) < 1e-9


class TestPve:
    def test_equal_meshes(self, rng):
        v = rng.normal(size=(3, 50, 3))
        assert pve(v, v) == 0.0

    def test_uniform_offset_with_fixed_roots(self, rng):
        v = rng.normal(size=(2, 40, 3))
        offset = np.array([0.0, 0.003, 0.0])
        roots = np.zeros((2, 3))
        got = pve(v + offset, v, pred_root=roots, gt_root=roots)
        assert abs(got - 3.0) < 1e-9

    def test_random_meshes_match_loop_oracle(self, rng):
        pred = rng.normal(size=(3, 20, 3))
        gt = rng.normal(size=(3, 20, 3))
        got = pve(pred, gt)
        total = 0.0
        for t in range(3):
            pc = pred[t] - pred[t].mean(axis=0)
            gc = gt[t] - gt[t].mean(axis=0)
            for vtx in range(20):
                total += np.linalg.norm(pc[vtx] - gc[vtx])
        assert abs(got - total / 60.0 * 1000.0) < 1e-9


class TestAccel:
    def test_identical_is_zero(self, rng):
        x = random_joints(rng, frames=6)
        assert accel_error(x, x) == 0.0

    def test_linear_trajectories_are_zero(self, rng):
        base = rng.normal(size=(1, 5, 3))
        slope_a = rng.normal(size=(1, 5, 3))
        slope_b = rng.normal(size=(1, 5, 3))
        t = np.arange(8)[:, None, None]
        assert accel_error(base + slope_a * t, base + slope_b * t) < 1e-9

    def test_quadratic_matches_closed_form(self):
        fps = 30.0
        c = np.array([0.7, -0.4, 1.1])
        t = np.arange(10)[:, None, None] / fps
        pred = 0.5 * c * t ** 2 * np.ones((10, 3, 3))
        gt = np.zeros((10, 3, 3))
        got = accel_error(pred, gt, fps=fps)
        assert abs(got - np.linalg.norm(c)) < 1e-6

    def test_too_short_rejected(self, rng):
        x = random_joints(rng, frames=2)
        with pytest.raises(ValueError):
            accel_error(x, x)


class TestFeatures:
    def test_deterministic(self, body, rng):
        m = random_motion(rng, frames=20)
        f1 = kinematic_features(m, body)
        f2 = kinematic_features(m, body)
        np.testing.assert_array_equal(f1, f2)
        assert f1.shape == (FEATURE_DIM,)

    def test_constant_motion_zero_velocity_block(self, body):
        m = MotionSequence(
            theta=np.tile(np.float32(0.1), (16, 63)), beta=np.zeros((16, 10), np.float32),
            phi=np.zeros((16, 3), np.float32), tau=np.full((16, 3), 0.5, np.float32))
        feats = kinematic_features(m, body)
        np.testing.assert_allclose(feats[list(VELOCITY_FEATURE_IDX)], 0.0, atol=1e-9)
        assert feats[6] != 0.0  # pelvis height

    def test_against_statistics_oracle(self, body, rng):
        from videomotion.body import joints_from_motion
        m = random_motion(rng, frames=18)
        feats = kinematic_features(m, body)
        joints = joints_from_motion(body, m)
        vel = np.diff(joints, axis=0) * m.fps
        speed = np.linalg.norm(vel, axis=-1)
        assert abs(feats[0] - speed.mean()) < 1e-9
        assert abs(feats[1] - speed.std()) < 1e-9
        assert abs(feats[6] - joints[:, 0, 1].mean()) < 1e-9
        assert abs(feats[10] - joints[:, 0, 1].min()) < 1e-9


class TestFid:
    def test_self_distance_zero(self, rng):
        a = rng.normal(size=(40, 5))
        assert fid(a, a) < 1e-6

    def test_shifted_unit_gaussian_1d(self, rng):
        z = rng.normal(size=(200, 1))
        z = (z - z.mean()) / z.std(ddof=1)  # exact sample stats (0, 1)
        d = 1.75
        assert abs(fid(z, z + d) - d * d) < 1e-8

    def test_2d_sampled_gaussians_near_closed_form(self, rng):
        mu_a, mu_b = np.array([0.0, 0.0]), np.array([1.0, -0.5])
        cov_a = np.array([[1.0, 0.3], [0.3, 0.8]])
        cov_b = np.array([[0.5, -0.1], [-0.1, 1.2]])
        a = rng.multivariate_normal(mu_a, cov_a, size=20000)
        b = rng.multivariate_normal(mu_b, cov_b, size=20000)
        def sqrtm(m):
            vals, vecs = np.linalg.eigh(m)
            return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T
        s = sqrtm(cov_a)
        closed = ((mu_a - mu_b) ** 2).sum() + np.trace(
            cov_a + cov_b - 2.0 * sqrtm(s @ cov_b @ s))
        assert abs(fid(a, b) - closed) < 0.05

    def test_symmetry(self, rng):
        a = rng.normal(size=(50, 4))
        b = rng.normal(1.0, 2.0, size=(60, 4))
        assert abs(fid(a, b) - fid(b, a)) < 1e-8

    def test_small_sample_rejected(self, rng):
        with pytest.raises(ValueError):
            fid(rng.normal(size=(1, 4)), rng.normal(size=(10, 4)))


class TestDiversity:
    def test_identical_rows(self):
        assert diversity(np.ones((6, 3))) == 0.0

    def test_two_points(self):
        a = np.array([[0.0, 0.0], [3.0, 4.0]])
        assert abs(diversity(a) - 5.0) < 1e-12

    def test_matches_loop_oracle(self, rng):
        a = rng.normal(size=(15, 6))
        got = diversity(a)
        total, count = 0.0, 0
        for i in range(15):
            for j in range(i + 1, 15):
                total += np.linalg.norm(a[i] - a[j])
                count += 1
        assert abs(got - total / count) < 1e-12

    def test_permutation_invariant(self, rng):
        a = rng.normal(size=(12, 4))
        perm = rng.permutation(12)
        assert abs(diversity(a) - diversity(a[perm])) < 1e-12


class TestRigidInvariance:
    def test_metrics_invariant_to_shared_rigid_transform(self, rng):
        pred = random_joints(rng, frames=5)
        gt = pred + rng.normal(0, 0.05, size=pred.shape)
        rot = axis_angle_to_matrix(rng.normal(0, 0.8, 3))
        t = rng.normal(0, 2, 3)
        pred2, gt2 = pred @ rot.T + t, gt @ rot.T + t
        assert abs(mpjpe(pred2, gt2) - mpjpe(pred, gt)) < 1e-6
        assert abs(pa_mpjpe(pred2, gt2) - pa_mpjpe(pred, gt)) < 1e-6
        assert abs(accel_error(pred2, gt2) - accel_error(pred, gt)) < 1e-6
        assert abs(pve(pred2, gt2) - pve(pred, gt)) < 1e-6
