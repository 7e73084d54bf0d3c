"""Robot state node: one knot of the sliding window.

The solver parameterizes a node by a 15-dimensional local tangent
vector [dtheta, dp, dv, dbw, dba]; orientation updates are applied
multiplicatively on the right (body-frame perturbation).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo

LOCAL_DIM = 15


@dataclass
class StateNode:
    """Orientation, position, velocity, and IMU biases at time t."""

    q: np.ndarray = field(default_factory=geo.quat_identity)
    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bw: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ba: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0

    def __post_init__(self):
        self.q = geo.quat_normalize(np.asarray(self.q, dtype=float))
        self.p = np.asarray(self.p, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.bw = np.asarray(self.bw, dtype=float)
        self.ba = np.asarray(self.ba, dtype=float)

    @property
    def R(self) -> np.ndarray:
        return geo.quat_to_rot(self.q)

    def copy(self) -> "StateNode":
        return StateNode(self.q.copy(), self.p.copy(), self.v.copy(),
                         self.bw.copy(), self.ba.copy(), self.t)

    def local_dim(self) -> int:
        return LOCAL_DIM

    def retract(self, delta: np.ndarray) -> "StateNode":
        """Apply a local tangent step; quaternion stays unit-norm."""
        delta = np.asarray(delta, dtype=float)
        q = geo.quat_normalize(geo.quat_mul(self.q, geo.quat_exp(delta[0:3])))
        return StateNode(q, self.p + delta[3:6], self.v + delta[6:9],
                         self.bw + delta[9:12], self.ba + delta[12:15], self.t)

    def local_diff(self, other: "StateNode") -> np.ndarray:
        """Tangent vector d with other.retract(d) == self (first order)."""
        dq = geo.quat_mul(geo.quat_conj(other.q), self.q)
        return np.concatenate([
            geo.quat_log(dq),
            self.p - other.p,
            self.v - other.v,
            self.bw - other.bw,
            self.ba - other.ba,
        ])


@dataclass
class VectorNode:
    """Plain Euclidean parameter block (used by linear test problems)."""

    x: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)

    def copy(self) -> "VectorNode":
        return VectorNode(self.x.copy(), self.t)

    def local_dim(self) -> int:
        return self.x.size

    def retract(self, delta: np.ndarray) -> "VectorNode":
        return VectorNode(self.x + delta, self.t)

    def local_diff(self, other: "VectorNode") -> np.ndarray:
        return self.x - other.x
