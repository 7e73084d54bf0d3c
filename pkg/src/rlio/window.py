"""Sliding window: concrete factors, cost assembly, and window sliding.

All factors feed the generic solver with pre-whitened residuals, so the
optimizer sees a plain least-squares stack: IMU factors are whitened by
the Cholesky factor of the inverse preintegration covariance, UWB and
lidar factors by their scalar noise sigmas (with optional Huber
downweighting).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import solver
from .config import EstimatorConfig
from .imu import ImuPreintegration, imu_residual
from .lidar import FeatureCloud, lidar_residuals_batch
from .state import StateNode
from .uwb import (AnchorSet, RangeBundle, UwbMeasurement, uwb_residual,
                  uwb_residuals_batch)


class WindowError(RuntimeError):
    """Raised when the window is structurally inconsistent."""


class ImuFactor:
    kind = "imu"
    loss = None

    def __init__(self, i: int, j: int, preint: ImuPreintegration, gravity):
        self.nodes = (i, j)
        self.preint = preint
        self.gravity = np.asarray(gravity, dtype=float)
        P = preint.full_covariance()
        L = np.linalg.cholesky(np.linalg.inv(P))
        self.sqrt_info = L.T

    def linearize(self, values):
        r, Jk, Jk1 = imu_residual(values[self.nodes[0]], values[self.nodes[1]],
                                  self.preint, self.gravity, with_jacobians=True)
        W = self.sqrt_info
        return W @ r, [W @ Jk, W @ Jk1]


class UwbFactor:
    kind = "uwb"

    def __init__(self, i: int, j: int, meas: UwbMeasurement, sigma: float,
                 huber: float | None = None):
        self.nodes = (i, j)
        self.meas = meas
        self.w = 1.0 / sigma
        # loss threshold lives in whitened units
        self.loss = None if huber is None else huber / sigma

    def linearize(self, values):
        r, Jk, Jk1 = uwb_residual(values[self.nodes[0]], values[self.nodes[1]],
                                  self.meas, with_jacobians=True)
        return np.array([self.w * r]), [self.w * Jk[None, :], self.w * Jk1[None, :]]


class UwbBundleFactor:
    """All ranges of one interval evaluated together (shared interpolation).

    Huber downweighting acts per range row, matching the per-measurement
    robust loss of the scalar factor.
    """

    kind = "uwb"
    loss = None

    def __init__(self, i: int, j: int, measurements, sigma: float,
                 huber: float | None = None):
        self.nodes = (i, j)
        self.measurements = list(measurements)
        self.w = 1.0 / sigma
        self.huber = None if huber is None else huber / sigma

    def __len__(self):
        return len(self.measurements)

    def linearize(self, values):
        r, Jk, Jk1 = uwb_residuals_batch(values[self.nodes[0]],
                                         values[self.nodes[1]],
                                         self.measurements)
        r = self.w * r
        Jk = self.w * Jk
        Jk1 = self.w * Jk1
        if self.huber is not None:
            mag = np.abs(r)
            mask = mag > self.huber
            if np.any(mask):
                s = np.sqrt(self.huber / mag[mask])
                r[mask] *= s
                Jk[mask] *= s[:, None]
                Jk1[mask] *= s[:, None]
        return r, [Jk, Jk1]


class LidarFactor:
    """All coefficients of one (window-head, node) pair, evaluated batched.

    Huber downweighting is applied per coefficient row inside linearize,
    since robustness must act on individual feature residuals.
    """

    kind = "lidar"
    loss = None

    def __init__(self, w_idx: int, m_idx: int, coeffs, sigma: float,
                 huber: float | None = None):
        self.nodes = (w_idx, m_idx)
        self.F = np.array([c.f for c in coeffs], dtype=float).reshape(-1, 3)
        self.N = np.array([c.n for c in coeffs], dtype=float).reshape(-1, 3)
        self.C = np.array([c.c for c in coeffs], dtype=float)
        self.w = 1.0 / sigma
        self.huber = None if huber is None else huber / sigma

    def __len__(self):
        return len(self.C)

    def linearize(self, values):
        r, Jw, Jm = lidar_residuals_batch(
            values[self.nodes[0]], values[self.nodes[1]],
            self.F, self.N, self.C, with_jacobians=True)
        r = self.w * r
        Jw = self.w * Jw
        Jm = self.w * Jm
        if self.huber is not None:
            mag = np.abs(r)
            mask = mag > self.huber
            if np.any(mask):
                s = np.sqrt(self.huber / mag[mask])
                r[mask] *= s
                Jw[mask] *= s[:, None]
                Jm[mask] *= s[:, None]
        return r, [Jw, Jm]


def bootstrap_prior(node: StateNode, pose_weight: float,
                    vel_bias_weight: float) -> solver.PriorFactor:
    """Strong diagonal prior pinning node 0 during bootstrap (gauge fix)."""
    w = np.concatenate([np.full(6, pose_weight), np.full(9, vel_bias_weight)])
    return solver.PriorFactor((0,), [node.copy()], np.zeros(15), [np.diag(w)])


@dataclass
class SlidingWindow:
    """M+1 state nodes with the measurements attached to each interval."""

    nodes: list = field(default_factory=list)
    preints: list = field(default_factory=list)    # one per interval
    bundles: list = field(default_factory=list)    # one RangeBundle per interval
    clouds: list = field(default_factory=list)     # one FeatureCloud per node
    coeff_sets: list = field(default_factory=list) # per node, rebuilt on demand
    prior: solver.PriorFactor | None = None

    def __len__(self):
        return len(self.nodes)

    def append(self, node: StateNode, preint: ImuPreintegration | None,
               bundle: RangeBundle | None, cloud: FeatureCloud | None):
        if self.nodes:
            if preint is None:
                raise WindowError("appending a node requires a preintegration")
            self.preints.append(preint)
            self.bundles.append(bundle if bundle is not None
                                else RangeBundle(self.nodes[-1].t, node.t))
        self.nodes.append(node)
        self.clouds.append(cloud)
        self.coeff_sets.append([])


def assemble_cost(window: SlidingWindow, anchors: AnchorSet | None,
                  config: EstimatorConfig):
    """Factor list for the current window per the joint cost layout.

    IMU factors per interval, one UWB factor per bundled measurement
    (only when anchors are configured), one batched lidar factor per
    non-head node with coefficients, plus the prior.
    """
    n = len(window.nodes)
    if n < 2:
        raise WindowError("window needs at least two nodes")
    if len(window.preints) != n - 1:
        raise WindowError(
            f"{n - 1} intervals but {len(window.preints)} preintegrations")
    factors = []
    for i, preint in enumerate(window.preints):
        if preint is None:
            raise WindowError(f"missing preintegration for interval {i}")
        factors.append(ImuFactor(i, i + 1, preint, config.gravity))
    if anchors is not None and anchors.count > 0:
        for i, bundle in enumerate(window.bundles):
            if bundle is None or not bundle.measurements:
                continue
            factors.append(UwbBundleFactor(i, i + 1, bundle.measurements,
                                           config.sigma_uwb,
                                           config.huber_delta))
    for m in range(1, n):
        coeffs = window.coeff_sets[m] if m < len(window.coeff_sets) else []
        if coeffs:
            factors.append(LidarFactor(0, m, coeffs, config.sigma_lidar,
                                       config.huber_delta))
    if window.prior is not None:
        factors.append(window.prior)
    return factors


def optimize_window(window: SlidingWindow, factors, config: EstimatorConfig):
    """Run the solver and write the result back into the window nodes."""
    nodes, report = solver.optimize(window.nodes, factors, config.solver)
    window.nodes = nodes
    return report


def slide(window: SlidingWindow, config: EstimatorConfig):
    """Marginalize the oldest node into a prior and drop its payload.

    Lidar factors are deliberately left out of the marginalization:
    their coefficients are re-associated against the rebuilt local map
    every window, so absorbing them into the prior would double-count
    the same feature information.
    """
    marg_factors = [ImuFactor(0, 1, window.preints[0], config.gravity)]
    if window.bundles[0] is not None and window.bundles[0].measurements:
        marg_factors.append(UwbBundleFactor(0, 1, window.bundles[0].measurements,
                                            config.sigma_uwb,
                                            config.huber_delta))
    if window.prior is not None:
        marg_factors.append(window.prior)
    prior = solver.marginalize(window.nodes, marg_factors, [0])
    mapping = {i: i - 1 for i in range(1, len(window.nodes))}
    window.prior = prior.remap(mapping)
    window.nodes.pop(0)
    window.preints.pop(0)
    window.bundles.pop(0)
    window.clouds.pop(0)
    window.coeff_sets.pop(0)
    return window
