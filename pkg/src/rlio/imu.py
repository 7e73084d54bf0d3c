"""IMU preintegration between consecutive window knots.

Builds the relative position/velocity/rotation integrals (alpha, beta,
gamma) from raw gyro/accel samples at nominal biases, together with the
five bias Jacobians, and a 9x9 error covariance over (dtheta, dalpha,
dbeta). Gravity never enters the preintegrated quantities; it appears
only in state prediction and in the residual model.

Gravity convention: the `gravity` argument everywhere is the physical
gravity acceleration vector, (0, 0, -9.81) by default, so that an
accelerometer at rest reads -R^T g.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .state import StateNode

GRAVITY = np.array([0.0, 0.0, -9.81])


class ImuBufferError(ValueError):
    """Raised for empty/short or non-monotonic sample buffers."""


@dataclass
class ImuSample:
    t: float
    w: np.ndarray  # angular velocity, rad/s, body frame
    a: np.ndarray  # specific force, m/s^2, body frame

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.a = np.asarray(self.a, dtype=float)


@dataclass
class ImuNoise:
    """Continuous-time noise densities (per sqrt(Hz))."""

    sigma_g: float = 1e-3    # gyro white noise, rad/s
    sigma_a: float = 1e-2    # accel white noise, m/s^2
    sigma_bg: float = 1e-5   # gyro bias random walk, rad/s
    sigma_ba: float = 1e-4   # accel bias random walk, m/s^2


@dataclass
class ImuPreintegration:
    """Preintegrated IMU measurement over one window interval."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray  # unit quaternion
    dt: float
    bw: np.ndarray     # nominal gyro bias used for integration
    ba: np.ndarray     # nominal accel bias
    A_w: np.ndarray    # d alpha / d bw
    A_a: np.ndarray    # d alpha / d ba
    B_w: np.ndarray    # d beta / d bw
    B_a: np.ndarray    # d beta / d ba
    C_w: np.ndarray    # d Log(gamma) / d bw
    P: np.ndarray      # 9x9 covariance over (dtheta, dalpha, dbeta)
    noise: ImuNoise = field(default_factory=ImuNoise)

    def full_covariance(self) -> np.ndarray:
        """15x15 covariance in residual order (gamma, alpha, beta, bw, ba).

        Bias blocks follow the random-walk model over the interval.
        """
        P = np.zeros((15, 15))
        P[0:9, 0:9] = self.P
        P[9:12, 9:12] = np.eye(3) * self.noise.sigma_bg**2 * self.dt
        P[12:15, 12:15] = np.eye(3) * self.noise.sigma_ba**2 * self.dt
        # keep the weight well defined for noiseless test configurations
        jitter = 1e-14
        return P + jitter * np.eye(15)


def _interp_sample(s0: ImuSample, s1: ImuSample, t: float) -> ImuSample:
    u = (t - s0.t) / (s1.t - s0.t)
    return ImuSample(t, (1 - u) * s0.w + u * s1.w, (1 - u) * s0.a + u * s1.a)


def slice_samples(samples, t0: float, t1: float):
    """Samples covering [t0, t1], endpoints linearly interpolated.

    The buffer must straddle both endpoints (or hit them exactly).
    """
    samples = sorted(samples, key=lambda s: s.t)
    if samples[0].t > t0 + 1e-12 or samples[-1].t < t1 - 1e-12:
        raise ImuBufferError(
            f"buffer [{samples[0].t}, {samples[-1].t}] does not cover [{t0}, {t1}]")
    out = []
    for i, s in enumerate(samples):
        if s.t <= t0:
            continue
        if not out and s.t > t0:
            out.append(_interp_sample(samples[i - 1], s, t0))
        if s.t >= t1:
            if s.t > t1:
                out.append(_interp_sample(samples[i - 1], s, t1))
            else:
                out.append(s)
            break
        out.append(s)
    return out


def preintegrate(samples, bw, ba, noise: ImuNoise | None = None,
                 method: str = "zoh") -> ImuPreintegration:
    """Integrate an ordered sample buffer at nominal biases (bw, ba).

    method: 'zoh' holds each sample over its step; 'rk4' integrates the
    kinematic ODE with 4th-order Runge-Kutta and linearly interpolated
    samples. Bias Jacobians and covariance use the per-step discrete
    error-state transition in both cases.
    """
    if noise is None:
        noise = ImuNoise()
    samples = list(samples)
    if len(samples) < 2:
        raise ImuBufferError("need at least 2 IMU samples")
    ts = np.array([s.t for s in samples])
    if np.any(np.diff(ts) <= 0):
        raise ImuBufferError("IMU timestamps must be strictly increasing")
    bw = np.asarray(bw, dtype=float)
    ba = np.asarray(ba, dtype=float)
    if not (np.all(np.isfinite(bw)) and np.all(np.isfinite(ba))):
        raise ImuBufferError("nominal biases must be finite")
    if method not in ("zoh", "rk4"):
        raise ValueError(f"unknown integration method {method!r}")

    gamma = geo.quat_identity()
    alpha = np.zeros(3)
    beta = np.zeros(3)
    A_w = np.zeros((3, 3))
    A_a = np.zeros((3, 3))
    B_w = np.zeros((3, 3))
    B_a = np.zeros((3, 3))
    C_w = np.zeros((3, 3))
    P = np.zeros((9, 9))

    for i in range(len(samples) - 1):
        s0, s1 = samples[i], samples[i + 1]
        dt = s1.t - s0.t
        w_hat = s0.w - bw
        a_hat = s0.a - ba
        R_i = geo.quat_to_rot(gamma)
        ax = geo.skew(a_hat)

        # bias Jacobians (use pre-step B, C)
        A_a = A_a + B_a * dt - 0.5 * R_i * dt**2
        A_w = A_w + B_w * dt - 0.5 * (R_i @ ax @ C_w) * dt**2
        B_a = B_a - R_i * dt
        B_w = B_w - (R_i @ ax @ C_w) * dt
        E = geo.exp_so3(w_hat * dt)
        Jr = geo.right_jacobian(w_hat * dt)
        C_w = E.T @ C_w - Jr * dt

        # covariance: discrete error-state transition over (dtheta, dalpha, dbeta)
        F = np.zeros((9, 9))
        F[0:3, 0:3] = E.T
        F[3:6, 0:3] = -0.5 * dt**2 * (R_i @ ax)
        F[3:6, 3:6] = np.eye(3)
        F[3:6, 6:9] = dt * np.eye(3)
        F[6:9, 0:3] = -dt * (R_i @ ax)
        F[6:9, 6:9] = np.eye(3)
        G = np.zeros((9, 6))
        G[0:3, 0:3] = Jr * dt
        G[3:6, 3:6] = 0.5 * dt**2 * R_i
        G[6:9, 3:6] = dt * R_i
        Qd = np.zeros((6, 6))
        Qd[0:3, 0:3] = np.eye(3) * noise.sigma_g**2 / dt
        Qd[3:6, 3:6] = np.eye(3) * noise.sigma_a**2 / dt
        P = F @ P @ F.T + G @ Qd @ G.T

        # nominal integrals
        if method == "zoh":
            alpha = alpha + beta * dt + 0.5 * (R_i @ a_hat) * dt**2
            beta = beta + (R_i @ a_hat) * dt
            gamma = geo.quat_normalize(geo.quat_mul(gamma, geo.quat_exp(w_hat * dt)))
        else:
            gamma, alpha, beta = _rk4_step(gamma, alpha, beta, s0, s1, bw, ba)

    return ImuPreintegration(alpha, beta, gamma, float(ts[-1] - ts[0]),
                             bw, ba, A_w, A_a, B_w, B_a, C_w, P, noise)


def _rk4_step(gamma, alpha, beta, s0: ImuSample, s1: ImuSample, bw, ba):
    """One RK4 step of (q, alpha, beta) with linearly interpolated inputs."""
    dt = s1.t - s0.t

    def inputs(u):
        return ((1 - u) * s0.w + u * s1.w - bw,
                (1 - u) * s0.a + u * s1.a - ba)

    def deriv(q, b, u):
        w_hat, a_hat = inputs(u)
        dq = 0.5 * geo.quat_mul(q, np.concatenate(([0.0], w_hat)))
        db = geo.quat_to_rot(geo.quat_normalize(q)) @ a_hat
        da = b
        return dq, da, db

    k1q, k1a, k1b = deriv(gamma, beta, 0.0)
    k2q, k2a, k2b = deriv(gamma + 0.5 * dt * k1q, beta + 0.5 * dt * k1b, 0.5)
    k3q, k3a, k3b = deriv(gamma + 0.5 * dt * k2q, beta + 0.5 * dt * k2b, 0.5)
    k4q, k4a, k4b = deriv(gamma + dt * k3q, beta + dt * k3b, 1.0)
    gamma = geo.quat_normalize(gamma + dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q))
    alpha = alpha + dt / 6.0 * (k1a + 2 * k2a + 2 * k3a + k4a)
    beta = beta + dt / 6.0 * (k1b + 2 * k2b + 2 * k3b + k4b)
    return gamma, alpha, beta


def predict_state(prev: StateNode, preint: ImuPreintegration,
                  gravity=GRAVITY) -> StateNode:
    """Propagate a state across the preintegration interval."""
    g = np.asarray(gravity, dtype=float)
    dt = preint.dt
    R = prev.R
    p = prev.p + prev.v * dt + 0.5 * g * dt**2 + R @ preint.alpha
    v = prev.v + g * dt + R @ preint.beta
    q = geo.quat_normalize(geo.quat_mul(prev.q, preint.gamma))
    return StateNode(q, p, v, prev.bw.copy(), prev.ba.copy(), prev.t + dt)


def imu_residual(xk: StateNode, xk1: StateNode, preint: ImuPreintegration,
                 gravity=GRAVITY, with_jacobians: bool = False):
    """15-vector residual (r_gamma, r_alpha, r_beta, r_bw, r_ba).

    With `with_jacobians`, also returns the two 15x15 Jacobians with
    respect to the local perturbations of xk and xk1, ordered
    [dtheta, dp, dv, dbw, dba].
    """
    g = np.asarray(gravity, dtype=float)
    dt = preint.dt
    Rk = xk.R
    dbw = xk.bw - preint.bw
    dba = xk.ba - preint.ba

    # first-order bias-corrected rotation error
    gt = np.concatenate(([1.0], -0.5 * (preint.C_w @ dbw)))
    q_rel = geo.quat_mul(geo.quat_conj(xk.q), xk1.q)
    e = geo.quat_mul(gt, geo.quat_mul(geo.quat_conj(preint.gamma), q_rel))
    r_gamma = 2.0 * e[1:4]

    u_p = xk1.p - xk.p - xk.v * dt - 0.5 * g * dt**2
    r_alpha = Rk.T @ u_p - preint.A_w @ dbw - preint.A_a @ dba - preint.alpha
    u_v = xk1.v - xk.v - g * dt
    r_beta = Rk.T @ u_v - preint.B_w @ dbw - preint.B_a @ dba - preint.beta

    r = np.concatenate([r_gamma, r_alpha, r_beta,
                        xk1.bw - xk.bw, xk1.ba - xk.ba])
    if not with_jacobians:
        return r

    Jk = np.zeros((15, 15))
    Jk1 = np.zeros((15, 15))
    I3 = np.eye(3)

    # r_gamma blocks via 4x4 quaternion product matrices
    M = geo.quat_left(geo.quat_mul(gt, geo.quat_conj(preint.gamma))) @ geo.quat_right(q_rel)
    Jk[0:3, 0:3] = -M[1:4, 1:4]
    Jk1[0:3, 0:3] = geo.quat_left(e)[1:4, 1:4]
    D = np.vstack([np.zeros((1, 3)), -0.5 * preint.C_w])
    Jk[0:3, 9:12] = 2.0 * (geo.quat_right(
        geo.quat_mul(geo.quat_conj(preint.gamma), q_rel)) @ D)[1:4, :]

    # r_alpha blocks
    Jk[3:6, 0:3] = geo.skew(Rk.T @ u_p)
    Jk[3:6, 3:6] = -Rk.T
    Jk[3:6, 6:9] = -Rk.T * dt
    Jk[3:6, 9:12] = -preint.A_w
    Jk[3:6, 12:15] = -preint.A_a
    Jk1[3:6, 3:6] = Rk.T

    # r_beta blocks
    Jk[6:9, 0:3] = geo.skew(Rk.T @ u_v)
    Jk[6:9, 6:9] = -Rk.T
    Jk[6:9, 9:12] = -preint.B_w
    Jk[6:9, 12:15] = -preint.B_a
    Jk1[6:9, 6:9] = Rk.T

    # bias random-walk blocks
    Jk[9:12, 9:12] = -I3
    Jk1[9:12, 9:12] = I3
    Jk[12:15, 12:15] = -I3
    Jk1[12:15, 12:15] = I3
    return r, Jk, Jk1
