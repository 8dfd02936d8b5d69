import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from adgs.errors import InvalidParameterError, ShapeError
from adgs.scene_model import (SH_C0, SH_C1, Camera, Gaussian3D, GaussianCloud, build_covariance,
                              eval_sh_color, normalize_quat, quat_to_rotmat, sh_coeff_count)

finite = st.floats(-3.0, 3.0, allow_nan=False)
quats = st.tuples(finite, finite, finite, finite).filter(lambda q: np.linalg.norm(q) > 1e-3)
log_scales = st.tuples(*(st.floats(-4.0, 1.5) for _ in range(3)))


def rotz(deg):
    return Rotation.from_euler("z", deg, degrees=True).as_matrix()


def quat_of(R):
    x, y, z, w = Rotation.from_matrix(R).as_quat()
    return np.array([w, x, y, z])


class TestCovariance:
    def test_identity(self):
        np.testing.assert_allclose(build_covariance([0, 0, 0], [1, 0, 0, 0]), np.eye(3), atol=1e-15)

    def test_axis_aligned(self):
        cov = build_covariance([np.log(2), 0, 0], [1, 0, 0, 0])
        np.testing.assert_allclose(cov, np.diag([4.0, 1.0, 1.0]), atol=1e-12)

    def test_rotated_about_z(self):
        cov = build_covariance([np.log(2), 0, 0], quat_of(rotz(90)))
        R = rotz(90)
        oracle = R @ np.diag([4.0, 1.0, 1.0]) @ R.T
        np.testing.assert_allclose(cov, oracle, atol=1e-12)
        np.testing.assert_allclose(cov, np.diag([1.0, 4.0, 1.0]), atol=1e-12)

    def test_zero_quaternion_rejected(self):
        with pytest.raises(InvalidParameterError):
            build_covariance([0, 0, 0], [0, 0, 0, 0])

    @settings(max_examples=200, deadline=None)
    @given(log_scales, quats)
    def test_spd_and_symmetric(self, ls, q):
        cov = build_covariance(ls, q)
        assert np.max(np.abs(cov - cov.T)) <= 1e-12
        assert np.linalg.eigvalsh(cov).min() > 0

    @settings(max_examples=200, deadline=None)
    @given(log_scales, quats, quats)
    def test_rotation_equivariance(self, ls, q, r):
        Rr = quat_to_rotmat(r)
        rq = quat_of(Rr @ quat_to_rotmat(q))
        lhs = build_covariance(ls, rq)
        rhs = Rr @ build_covariance(ls, q) @ Rr.T
        assert np.max(np.abs(lhs - rhs)) <= 1e-9 * max(1.0, np.abs(rhs).max())

    def test_matches_scipy_rotation(self):
        rng = np.random.default_rng(3)
        q = rng.normal(size=(50, 4))
        qn = q / np.linalg.norm(q, axis=1, keepdims=True)
        oracle = Rotation.from_quat(np.roll(qn, -1, axis=1)).as_matrix()
        np.testing.assert_allclose(quat_to_rotmat(q), oracle, atol=1e-12)


class TestQuaternion:
    @pytest.mark.parametrize("q, expected", [
        ((1, 0, 0, 0), (1, 0, 0, 0)),
        ((2, 0, 0, 0), (1, 0, 0, 0)),
        ((1, 1, 1, 1), (0.5, 0.5, 0.5, 0.5)),
    ])
    def test_examples(self, q, expected):
        np.testing.assert_allclose(normalize_quat(q), expected, atol=1e-15)

    def test_near_zero(self):
        with pytest.raises(InvalidParameterError):
            normalize_quat([1e-13, 0, 0, 0])

    @settings(max_examples=100, deadline=None)
    @given(quats)
    def test_unit_norm(self, q):
        assert abs(np.linalg.norm(normalize_quat(q)) - 1) <= 1e-12


class TestSH:
    def test_zero_coefficients(self):
        for degree in range(3):
            out = eval_sh_color(np.zeros((sh_coeff_count(degree), 3)), [0.0, 0.6, 0.8])
            np.testing.assert_array_equal(out, [0.5, 0.5, 0.5])

    def test_dc_saturates(self):
        out = eval_sh_color(np.full((1, 3), 1 / SH_C0), [0.0, 0.0, 1.0])
        np.testing.assert_array_equal(out, [1.0, 1.0, 1.0])

    def test_z_band_odd(self):
        sh = np.zeros((4, 3))
        sh[2] = 0.2
        plus = eval_sh_color(sh, [0, 0, 1.0])
        minus = eval_sh_color(sh, [0, 0, -1.0])
        np.testing.assert_allclose(plus - minus, 2 * SH_C1 * 0.2, atol=1e-15)

    def test_degree0_view_independent(self):
        rng = np.random.default_rng(0)
        sh = rng.normal(scale=0.5, size=(1, 3))
        dirs = rng.normal(size=(20, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        outs = [eval_sh_color(sh, d) for d in dirs]
        for o in outs[1:]:
            np.testing.assert_array_equal(o, outs[0])

    def test_bad_count(self):
        with pytest.raises(ShapeError):
            eval_sh_color(np.zeros((5, 3)), [0, 0, 1.0])

    def test_non_unit_direction(self):
        with pytest.raises(InvalidParameterError):
            eval_sh_color(np.zeros((1, 3)), [0, 0, 1.1])


class TestCamera:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(InvalidParameterError):
            Camera(10, 10, 5, 5, 10, 10, np.diag([1.0, 1.0, 1.0 + 1e-6]), np.zeros(3))

    @pytest.mark.parametrize("kw", [dict(fx=0), dict(fy=-1), dict(width=0), dict(near=0)])
    def test_rejects_bad_intrinsics(self, kw):
        args = dict(fx=10, fy=10, cx=5, cy=5, width=10, height=10, rotation=np.eye(3),
                    translation=np.zeros(3))
        args.update(kw)
        with pytest.raises(InvalidParameterError):
            Camera(**args)

    def test_look_at(self):
        cam = Camera.look_at([1.0, 2.0, -3.0], [0.0, 0.0, 0.0], fx=50, width=20, height=10)
        np.testing.assert_allclose(cam.center, [1.0, 2.0, -3.0], atol=1e-12)
        fwd = -cam.center / np.linalg.norm(cam.center)
        np.testing.assert_allclose(cam.rotation[2], fwd, atol=1e-12)
        assert (cam.cx, cam.cy) == (10.0, 5.0)


class TestCloud:
    def make(self, n=4):
        gs = [Gaussian3D(np.full(3, float(i)), np.zeros(3), np.array([1.0, 0, 0, 0]), 0.0,
                         np.zeros((1, 3))) for i in range(n)]
        return GaussianCloud.from_gaussians(gs)

    def test_roundtrip_gaussians(self):
        cloud = self.make()
        assert len(cloud) == 4
        assert [g.mu[0] for g in cloud] == [0.0, 1.0, 2.0, 3.0]
        assert cloud[2].opacity == 0.5

    def test_mixed_degree_rejected(self):
        g0 = Gaussian3D(np.zeros(3), np.zeros(3), np.array([1.0, 0, 0, 0]), 0.0, np.zeros((1, 3)))
        g1 = Gaussian3D(np.zeros(3), np.zeros(3), np.array([1.0, 0, 0, 0]), 0.0, np.zeros((4, 3)))
        with pytest.raises(ShapeError):
            GaussianCloud.from_gaussians([g0, g1])

    def test_select_append(self):
        cloud = self.make()
        part = cloud.select([3, 1])
        assert part.mu[:, 0].tolist() == [3.0, 1.0]
        both = part.append(cloud.select([0]))
        assert both.mu[:, 0].tolist() == [3.0, 1.0, 0.0]
        assert part.mu is not cloud.mu

    def test_empty(self):
        cloud = GaussianCloud.empty(sh_degree=2)
        assert len(cloud) == 0 and cloud.sh_degree == 2
