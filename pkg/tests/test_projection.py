import numpy as np
import pytest

from earfit.projection import (Pose, ProjectedShape, project_sop, rotation_derivatives,
                               rotation_from_euler, select_landmarks)


class TestRotation:
    def test_zero_angles_identity(self):
        np.testing.assert_allclose(rotation_from_euler(np.zeros(3)), np.eye(3), atol=1e-15)

    def test_quarter_roll(self):
        r = rotation_from_euler(np.array([0.0, 0.0, np.pi / 2]))
        np.testing.assert_allclose(r @ np.array([1.0, 0, 0]), [0, 1, 0], atol=1e-12)

    def test_orthonormal(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            r = rotation_from_euler(rng.uniform(-np.pi, np.pi, 3))
            np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
            assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-10)

    def test_derivatives_match_fd(self):
        rng = np.random.default_rng(1)
        ang = rng.uniform(-1.0, 1.0, 3)
        d = rotation_derivatives(ang)
        h = 1e-6
        for k in range(3):
            ap = ang.copy(); ap[k] += h
            am = ang.copy(); am[k] -= h
            fd = (rotation_from_euler(ap) - rotation_from_euler(am)) / (2 * h)
            np.testing.assert_allclose(d[k], fd, atol=1e-8)


class TestProjectSop:
    def test_identity_pose_keeps_xy(self):
        s = np.random.default_rng(2).normal(size=(7, 3))
        p = project_sop(s, Pose(r=np.zeros(3), t=np.zeros(2), f=1.0))
        np.testing.assert_allclose(p.v, s[:, :2], atol=1e-15)
        np.testing.assert_allclose(p.depth, s[:, 2], atol=1e-15)

    def test_single_vertex_substitution(self):
        p = project_sop(np.array([[1.0, 1.0, 5.0]]),
                        Pose(r=np.zeros(3), t=np.array([10.0, 20.0]), f=2.0))
        np.testing.assert_allclose(p.v[0], [12.0, 22.0], atol=1e-15)
        assert p.depth[0] == pytest.approx(5.0)

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(3)
        s = rng.normal(size=(11, 3))
        pose = Pose(r=rng.uniform(-1, 1, 3), t=rng.normal(size=2), f=rng.uniform(0.5, 3.0))
        got = project_sop(s, pose)
        rot = rotation_from_euler(pose.r)
        for i in range(s.shape[0]):
            q = rot @ s[i]
            np.testing.assert_allclose(got.v[i], pose.f * q[:2] + pose.t, atol=1e-12)
            assert got.depth[i] == pytest.approx(q[2], abs=1e-12)

    def test_linearity_in_f(self):
        rng = np.random.default_rng(4)
        s = rng.normal(size=(9, 3))
        r = rng.uniform(-1, 1, 3)
        t = np.array([4.0, -2.0])
        va = project_sop(s, Pose(r=r, t=t, f=1.3)).v - t
        vb = project_sop(s, Pose(r=r, t=t, f=2.6)).v - t
        np.testing.assert_allclose(vb, 2.0 * va, atol=1e-12)

    def test_depth_invariant_to_t_and_f(self):
        rng = np.random.default_rng(5)
        s = rng.normal(size=(9, 3))
        r = rng.uniform(-1, 1, 3)
        d1 = project_sop(s, Pose(r=r, t=np.zeros(2), f=1.0)).depth
        d2 = project_sop(s, Pose(r=r, t=np.array([50.0, -9.0]), f=7.0)).depth
        np.testing.assert_array_equal(d1, d2)

    def test_invalid_pose(self):
        with pytest.raises(ValueError):
            Pose(r=np.zeros(3), t=np.zeros(2), f=0.0)
        with pytest.raises(ValueError):
            Pose(r=np.array([np.nan, 0, 0]), t=np.zeros(2), f=1.0)


class TestSelectLandmarks:
    def _proj(self, n=60):
        rng = np.random.default_rng(6)
        return ProjectedShape(v=rng.normal(size=(n, 2)), depth=rng.normal(size=n))

    def test_identity_gather(self):
        p = self._proj()
        idx = np.arange(55)
        np.testing.assert_array_equal(select_landmarks(p, idx), p.v[:55])

    def test_permuted_gather(self):
        p = self._proj()
        idx = np.random.default_rng(7).permutation(60)[:55]
        got = select_landmarks(p, idx)
        for i, j in enumerate(idx):
            np.testing.assert_array_equal(got[i], p.v[j])

    def test_out_of_range(self):
        p = self._proj(10)
        with pytest.raises(ValueError):
            select_landmarks(p, np.array([0, 10]))

    def test_commutes_with_projection(self, small_model):
        model, _ = small_model
        rng = np.random.default_rng(8)
        shape = model.mean_shape.reshape(-1, 3)
        pose = Pose(r=rng.uniform(-0.5, 0.5, 3), t=np.array([3.0, 4.0]), f=2.0)
        a = select_landmarks(project_sop(shape, pose), model.landmark_indices)
        b = project_sop(shape[model.landmark_indices], pose).v
        np.testing.assert_allclose(a, b, atol=1e-12)
