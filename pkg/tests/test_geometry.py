import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rlio import geometry as geo


def taylor_exp_so3(v, terms=20):
    """Series oracle: exp(K) = sum K^n / n!."""
    K = geo.skew(v)
    out = np.eye(3)
    term = np.eye(3)
    for n in range(1, terms):
        term = term @ K / n
        out = out + term
    return out


def random_unit_quat(rng):
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)


def rotvecs(max_norm=np.pi - 1e-3):
    return st.tuples(
        st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0)
    ).map(lambda t: np.array(t) * max_norm / np.sqrt(3.0))


class TestExpSo3:
    def test_identity(self):
        assert np.allclose(geo.exp_so3(np.zeros(3)), np.eye(3), atol=1e-15)

    def test_quarter_turn_about_z(self):
        R = geo.exp_so3([0, 0, np.pi / 2])
        assert np.allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-12)

    def test_matches_series_oracle(self):
        v = np.array([0.3, -0.2, 0.1])
        assert np.allclose(geo.exp_so3(v), taylor_exp_so3(v), atol=1e-12)

    def test_small_angle_branch(self):
        v = np.array([1e-9, -2e-9, 5e-10])
        assert np.allclose(geo.exp_so3(v), taylor_exp_so3(v), atol=1e-16)


class TestLogSo3:
    def test_identity(self):
        assert np.allclose(geo.log_so3(np.eye(3)), np.zeros(3))

    def test_round_trip(self):
        v = np.array([0, 0, np.pi / 2])
        assert np.allclose(geo.log_so3(geo.exp_so3(v)), v, atol=1e-12)

    def test_pi_about_x(self):
        # antipodal branch: built directly as diag(1, -1, -1)
        R = np.diag([1.0, -1.0, -1.0])
        assert np.allclose(geo.log_so3(R), [np.pi, 0, 0], atol=1e-12)

    def test_near_pi_stable(self):
        v = (np.pi - 1e-7) * np.array([1.0, 0, 0])
        assert np.allclose(geo.log_so3(geo.exp_so3(v)), v, atol=1e-6)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(geo.GeometryError):
            geo.log_so3(np.eye(3) * 1.1)


class TestQuaternion:
    def test_identity_to_rot(self):
        assert np.allclose(geo.quat_to_rot(geo.quat_identity()), np.eye(3))

    def test_mul_conj_is_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            q = random_unit_quat(rng)
            assert np.allclose(
                geo.quat_mul(q, geo.quat_conj(q)), geo.quat_identity(), atol=1e-14
            )

    def test_round_trip_1000(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            q = random_unit_quat(rng)
            q2 = geo.rot_to_quat(geo.quat_to_rot(q))
            if np.dot(q, q2) < 0:
                q2 = -q2
            assert np.allclose(q, q2, atol=1e-12)

    def test_rot_to_quat_positive_w(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            q = geo.rot_to_quat(geo.quat_to_rot(random_unit_quat(rng)))
            assert q[0] >= 0

    def test_quat_mul_matrices(self):
        rng = np.random.default_rng(3)
        q1, q2 = random_unit_quat(rng), random_unit_quat(rng)
        prod = geo.quat_mul(q1, q2)
        assert np.allclose(geo.quat_left(q1) @ q2, prod)
        assert np.allclose(geo.quat_right(q2) @ q1, prod)

    def test_exp_log_quat(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            v = rng.uniform(-1, 1, 3)
            assert np.allclose(geo.quat_log(geo.quat_exp(v)), v, atol=1e-12)


class TestProperties:
    @settings(max_examples=200, deadline=None)
    @given(rotvecs())
    def test_exp_log_round_trip(self, v):
        err = np.linalg.norm(geo.log_so3(geo.exp_so3(v)) - v)
        assert err < 1e-9

    def test_rotation_matrix_in_so3(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            R = geo.quat_to_rot(random_unit_quat(rng))
            assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
            assert abs(np.linalg.det(R) - 1.0) < 1e-12

    def test_homomorphism(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            q1, q2 = random_unit_quat(rng), random_unit_quat(rng)
            lhs = geo.quat_to_rot(geo.quat_mul(q1, q2))
            rhs = geo.quat_to_rot(q1) @ geo.quat_to_rot(q2)
            assert np.allclose(lhs, rhs, atol=1e-10)


class TestJacobians:
    def fd(self, f, v, h=1e-7):
        J = np.zeros((3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            J[:, j] = (f(v + e) - f(v - e)) / (2 * h)
        return J

    def test_right_jacobian(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            v = rng.uniform(-2, 2, 3)
            # Exp(v + d) ~ Exp(v) Exp(Jr d)  =>  Log(Exp(v)^T Exp(v+d)) ~ Jr d
            Jr = geo.right_jacobian(v)
            R0 = geo.exp_so3(v)
            J_num = self.fd(lambda u: geo.log_so3(R0.T @ geo.exp_so3(u)), v)
            assert np.allclose(Jr, J_num, atol=1e-6)

    def test_jacobian_inverses(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            v = rng.uniform(-2, 2, 3)
            assert np.allclose(
                geo.right_jacobian(v) @ geo.right_jacobian_inv(v), np.eye(3),
                atol=1e-10,
            )
            assert np.allclose(
                geo.left_jacobian(v) @ geo.left_jacobian_inv(v), np.eye(3),
                atol=1e-10,
            )

    def test_small_angle_jacobians(self):
        v = np.array([1e-10, 0, -1e-10])
        assert np.allclose(geo.right_jacobian(v) @ geo.right_jacobian_inv(v),
                           np.eye(3), atol=1e-12)
