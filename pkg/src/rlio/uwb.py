"""UWB anchor calibration, range bundling, and the body-offset range factor.

The range model interpolates the ranging node's pose inside the window
interval: orientation by geodesic interpolation between the two knot
rotations, position by integrating a linearly interpolated velocity
backward from the interval end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .state import StateNode


class CalibrationError(ValueError):
    """Raised when anchor geometry cannot be reconstructed from ranges."""


class DegenerateGeometryError(ValueError):
    """Raised when the range residual gradient is undefined (at the anchor)."""


@dataclass
class AnchorSet:
    """Two or three anchors at common height; their layout defines the world frame."""

    positions: np.ndarray  # (n, 3), n in {2, 3}
    z: float

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))

    @property
    def count(self) -> int:
        return len(self.positions)


@dataclass
class UwbMeasurement:
    """One range sample inside a window interval (t_k, t_k + dT]."""

    d: float            # measured range, m
    x: np.ndarray       # anchor position, world frame
    y: np.ndarray       # ranging-node offset, body frame
    dt: float           # offset of the sample into the interval, s
    dT: float           # interval length, s
    anchor_id: int = 0
    node_id: int = 0
    t: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)


@dataclass
class RangeBundle:
    """Accepted measurements of one interval plus the rejects with reasons."""

    t0: float
    t1: float
    measurements: list = field(default_factory=list)
    rejected: list = field(default_factory=list)  # (UwbMeasurement, reason)


def calibrate_anchors(d01: float, d02: float = None, d12: float = None,
                      z: float = 0.0, third_anchor_side: float = -1.0) -> AnchorSet:
    """Place anchors from averaged inter-anchor ranges.

    Anchor 0 sits at the origin, anchor 1 on the +x axis; the optional
    third anchor is placed by triangle geometry, its y sign chosen by
    `third_anchor_side` (ranges alone cannot disambiguate the reflection).
    """
    if d01 is None or d01 <= 0:
        raise CalibrationError("anchor 0-1 range must be positive")
    if d02 is None or d12 is None:
        pos = np.array([[0.0, 0.0, z], [d01, 0.0, z]])
        return AnchorSet(pos, z)
    if d02 <= 0 or d12 <= 0:
        raise CalibrationError("inter-anchor ranges must be positive")
    x2 = (d01**2 + d02**2 - d12**2) / (2.0 * d01)
    y2_sq = d02**2 - x2**2
    if y2_sq <= 0:
        raise CalibrationError(
            f"triangle inequality violated (d01={d01}, d02={d02}, d12={d12})")
    y2 = np.sign(third_anchor_side) * np.sqrt(y2_sq)
    pos = np.array([[0.0, 0.0, z], [d01, 0.0, z], [x2, y2, z]])
    return AnchorSet(pos, z)


@dataclass
class InterpCoeffs:
    s: float
    a: float
    b: float


def interp_coeffs(dt: float, dT: float) -> InterpCoeffs:
    """Closed-form interpolation scalars for a sample dt into an interval dT."""
    if dT <= 0:
        raise ValueError(f"interval length must be positive, got {dT}")
    if dt < 0 or dt > dT:
        raise ValueError(f"sample offset {dt} outside interval [0, {dT}]")
    s = dt / dT
    a = (dT**2 - dt**2) / (2.0 * dT)
    b = (dT - dt) ** 2 / (2.0 * dT)
    return InterpCoeffs(s, a, b)


def node_displacement(xk: StateNode, xk1: StateNode, meas: UwbMeasurement):
    """World vector from the anchor to the interpolated ranging node."""
    c = interp_coeffs(meas.dt, meas.dT)
    Rk = xk.R
    Rk1 = xk1.R
    phi = geo.log_so3(Rk.T @ Rk1)
    Rs = Rk @ geo.exp_so3(c.s * phi)
    d = xk1.p + Rs @ meas.y - c.a * xk1.v - c.b * xk.v - meas.x
    return d, c, Rk, Rs, phi


def uwb_residual(xk: StateNode, xk1: StateNode, meas: UwbMeasurement,
                 with_jacobians: bool = False):
    """Scalar range residual |d| - d_measured.

    Jacobians (1x15 rows per node, local order [dtheta, dp, dv, dbw, dba])
    are computed analytically via the right-Jacobian chain rule of the
    geodesic rotation interpolation.
    """
    d, c, Rk, Rs, phi = node_displacement(xk, xk1, meas)
    norm = np.linalg.norm(d)
    if norm < 1e-6:
        raise DegenerateGeometryError("ranging node coincides with the anchor")
    r = norm - meas.d
    if not with_jacobians:
        return r

    u = d / norm  # d|d|/dd
    yx = geo.skew(meas.y)
    Jr_s = geo.right_jacobian(c.s * phi)
    dd_th_k = -Rs @ yx @ (geo.exp_so3(c.s * phi).T
                          - c.s * Jr_s @ geo.left_jacobian_inv(phi))
    dd_th_k1 = -Rs @ yx @ (c.s * Jr_s @ geo.right_jacobian_inv(phi))

    Jk = np.zeros(15)
    Jk1 = np.zeros(15)
    Jk[0:3] = u @ dd_th_k
    Jk[6:9] = -c.b * u
    Jk1[0:3] = u @ dd_th_k1
    Jk1[3:6] = u
    Jk1[6:9] = -c.a * u
    return r, Jk, Jk1


def uwb_residuals_batch(xk: StateNode, xk1: StateNode, measurements):
    """Residuals and Jacobians for all measurements of one interval.

    Shares the relative-rotation log and groups measurements by sample
    offset (several body nodes typically range at the same instant), so
    the interpolation matrices are computed once per distinct offset.
    Returns (r (m,), Jk (m, 15), Jk1 (m, 15)).
    """
    m = len(measurements)
    r = np.zeros(m)
    Jk = np.zeros((m, 15))
    Jk1 = np.zeros((m, 15))
    if m == 0:
        return r, Jk, Jk1
    Rk, Rk1 = xk.R, xk1.R
    phi = geo.log_so3(Rk.T @ Rk1, check=False)
    Jl_inv = geo.left_jacobian_inv(phi)
    Jr_inv = geo.right_jacobian_inv(phi)

    by_dt: dict = {}
    for i, meas in enumerate(measurements):
        by_dt.setdefault((meas.dt, meas.dT), []).append(i)
    for (dt, dT), idxs in by_dt.items():
        c = interp_coeffs(dt, dT)
        E = geo.exp_so3(c.s * phi)
        Rs = Rk @ E
        Jr_s = geo.right_jacobian(c.s * phi)
        A_k = E.T - c.s * Jr_s @ Jl_inv
        A_k1 = c.s * Jr_s @ Jr_inv

        ii = np.asarray(idxs)
        Y = np.array([measurements[i].y for i in idxs])
        X = np.array([measurements[i].x for i in idxs])
        D = (xk1.p - c.a * xk1.v - c.b * xk.v) + Y @ Rs.T - X
        norms = np.linalg.norm(D, axis=1)
        if np.any(norms < 1e-6):
            raise DegenerateGeometryError(
                "ranging node coincides with the anchor")
        U = D / norms[:, None]
        r[ii] = norms - np.array([measurements[i].d for i in idxs])
        # -u^T Rs [y]x == -((Rs^T u) x y)^T
        rot_rows = -np.cross(U @ Rs, Y)
        Jk[ii, 0:3] = rot_rows @ A_k
        Jk[ii, 6:9] = -c.b * U
        Jk1[ii, 0:3] = rot_rows @ A_k1
        Jk1[ii, 3:6] = U
        Jk1[ii, 6:9] = -c.a * U
    return r, Jk, Jk1


def bundle_ranges(buffer, t0: float, t1: float,
                  state_k: StateNode, state_k1: StateNode,
                  gate: float = 1.0, v_max: float = 10.0,
                  history: dict | None = None) -> RangeBundle:
    """Collect measurements inside (t0, t1] and gate suspected outliers.

    A sample is rejected when its innovation against the predicted
    node-anchor distance exceeds `gate`, or when its range rate against
    the previous accepted sample of the same anchor-node pair exceeds
    `v_max`. `history` maps (anchor_id, node_id) -> (t, range) across
    intervals; it is updated in place.
    """
    if history is None:
        history = {}
    bundle = RangeBundle(t0, t1)
    for meas in sorted(buffer, key=lambda m: m.t):
        if not (t0 < meas.t <= t1):
            continue
        m = UwbMeasurement(meas.d, meas.x, meas.y, meas.t - t0, t1 - t0,
                           meas.anchor_id, meas.node_id, meas.t)
        d, _, _, _, _ = node_displacement(state_k, state_k1, m)
        if abs(np.linalg.norm(d) - m.d) > gate:
            bundle.rejected.append((m, "gate"))
            continue
        key = (m.anchor_id, m.node_id)
        prev = history.get(key)
        if prev is not None:
            t_prev, d_prev = prev
            dt = m.t - t_prev
            if dt > 0 and abs(m.d - d_prev) / dt > v_max:
                bundle.rejected.append((m, "rate"))
                continue
        history[key] = (m.t, m.d)
        bundle.measurements.append(m)
    return bundle
