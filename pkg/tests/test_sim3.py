import numpy as np
import pytest

from gsalign.sim3 import (Sim3Transform, axis_angle_matrix, euler_xyz_matrix,
                          matrix_to_quat, quat_multiply, quat_normalize,
                          quat_to_matrix, random_rotation, rotation_angle_rad,
                          validate_rotation)
from tests.conftest import random_sim3_uniform


def rot_z(deg: float) -> np.ndarray:
    a = np.deg2rad(deg)
    return np.array([[np.cos(a), -np.sin(a), 0.0],
                     [np.sin(a), np.cos(a), 0.0],
                     [0.0, 0.0, 1.0]])


class TestQuaternions:
    def test_round_trip_1000(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            R = random_rotation(rng)
            R2 = quat_to_matrix(matrix_to_quat(R))
            assert np.linalg.norm(R - R2) < 1e-9

    def test_multiply_matches_matrix_product(self, rng):
        for _ in range(100):
            Ra, Rb = random_rotation(rng), random_rotation(rng)
            q = quat_multiply(matrix_to_quat(Ra), matrix_to_quat(Rb))
            assert np.allclose(quat_to_matrix(q), Ra @ Rb, atol=1e-12)

    def test_canonical_sign(self):
        q = quat_normalize(np.array([-1.0, 0.2, 0.0, 0.1]))
        assert q[0] > 0
        q = quat_normalize(np.array([0.0, -0.6, 0.8, 0.0]))
        assert q[1] > 0

    def test_zero_quat_rejected(self):
        with pytest.raises(ValueError):
            quat_normalize(np.zeros(4))


class TestRotationHelpers:
    def test_euler_order_applies_x_first(self):
        R = euler_xyz_matrix(np.pi / 2, 0.0, np.pi / 2)
        # x then z: (0,0,1) -x90-> (0,-1,0) -z90-> (1,0,0)
        assert np.allclose(R @ np.array([0.0, 0.0, 1.0]),
                           np.array([1.0, 0.0, 0.0]), atol=1e-12)

    def test_axis_angle_small_angle(self):
        R = axis_angle_matrix(np.array([1e-12, 0.0, 0.0]))
        assert np.allclose(R, np.eye(3), atol=1e-11)
        validate_rotation(R)

    def test_axis_angle_round_trip(self, rng):
        for _ in range(50):
            w = rng.normal(size=3)
            w *= rng.uniform(0.1, 3.0) / np.linalg.norm(w)
            R = axis_angle_matrix(w)
            angle = rotation_angle_rad(matrix_to_quat(R))
            assert abs(angle - np.linalg.norm(w)) < 1e-9

    def test_validate_rejects_reflection(self):
        M = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            validate_rotation(M)


class TestSim3Group:
    def test_identity_applies_trivially(self):
        T = Sim3Transform.identity()
        p = np.array([1.0, 2.0, 3.0])
        assert np.allclose(T.apply(p), p)

    def test_apply_scale_translation(self):
        T = Sim3Transform.from_rotation_matrix(2.0, np.eye(3), np.ones(3))
        assert np.allclose(T.apply(np.array([1.0, 0.0, 0.0])),
                           np.array([3.0, 1.0, 1.0]))

    def test_apply_rotation(self):
        T = Sim3Transform.from_rotation_matrix(1.0, rot_z(90.0), np.zeros(3))
        assert np.allclose(T.apply(np.array([1.0, 0.0, 0.0])),
                           np.array([0.0, 1.0, 0.0]), atol=1e-12)

    def test_compose_identity_neutral(self, rng):
        T = random_sim3_uniform(rng)
        eye = Sim3Transform.identity()
        for got in (T.compose(eye), eye.compose(T)):
            assert abs(got.scale - T.scale) < 1e-12
            assert np.allclose(got.rotation, T.rotation, atol=1e-12)
            assert np.allclose(got.translation, T.translation, atol=1e-12)

    def test_compose_against_sequential_application(self):
        a = Sim3Transform.from_rotation_matrix(2.0, rot_z(90.0),
                                               np.array([1.0, 0.0, 0.0]))
        b = Sim3Transform.from_rotation_matrix(3.0, np.eye(3),
                                               np.array([0.0, 1.0, 0.0]))
        p = np.array([1.0, 1.0, 1.0])
        assert np.allclose(a.compose(b).apply(p), a.apply(b.apply(p)),
                           atol=1e-12)

    def test_compose_random_sequential(self, rng):
        pts = rng.normal(size=(20, 3))
        for _ in range(50):
            a, b = random_sim3_uniform(rng), random_sim3_uniform(rng)
            assert np.allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)),
                               atol=1e-12)

    def test_associativity(self, rng):
        p = rng.normal(size=(10, 3))
        for _ in range(50):
            a, b, c = (random_sim3_uniform(rng) for _ in range(3))
            lhs = a.compose(b).compose(c)
            rhs = a.compose(b.compose(c))
            assert np.allclose(lhs.apply(p), rhs.apply(p), atol=1e-9)

    def test_inverse_closed_form(self):
        T = Sim3Transform.from_rotation_matrix(2.0, np.eye(3),
                                               np.array([4.0, 0.0, 0.0]))
        inv = T.inverse()
        assert abs(inv.scale - 0.5) < 1e-12
        assert np.allclose(inv.rotation, np.eye(3))
        assert np.allclose(inv.translation, np.array([-2.0, 0.0, 0.0]))

    def test_inverse_round_trip_points(self, rng):
        T = random_sim3_uniform(rng)
        p = rng.normal(size=(100, 3))
        assert np.allclose(T.inverse().apply(T.apply(p)), p, atol=1e-12)

    def test_double_inverse(self, rng):
        T = random_sim3_uniform(rng)
        TT = T.inverse().inverse()
        assert abs(TT.scale - T.scale) < 1e-12
        assert np.allclose(TT.rotation, T.rotation, atol=1e-12)
        assert np.allclose(TT.translation, T.translation, atol=1e-12)

    def test_compose_with_inverse_is_identity(self, rng):
        T = random_sim3_uniform(rng)
        assert T.compose(T.inverse()).is_close_to_identity(1e-9)
        assert T.inverse().compose(T).is_close_to_identity(1e-9)

    def test_is_close_to_identity_scales_translation(self):
        T = Sim3Transform.from_rotation_matrix(1.0, np.eye(3),
                                               np.array([0.5, 0.0, 0.0]))
        assert T.is_close_to_identity(1e-3, translation_scale=1e6)
        assert not T.is_close_to_identity(1e-3, translation_scale=1.0)

    def test_dict_round_trip(self, rng):
        T = random_sim3_uniform(rng)
        T2 = Sim3Transform.from_dict(T.to_dict())
        assert T2.scale == T.scale
        assert np.array_equal(T2.quat, T.quat)
        assert np.array_equal(T2.translation, T.translation)

    def test_invalid_scale_rejected(self):
        with pytest.raises(ValueError):
            Sim3Transform(scale=-1.0, quat=np.array([1.0, 0, 0, 0]),
                          translation=np.zeros(3))
