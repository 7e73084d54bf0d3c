"""Deterministic synthetic world: trajectory, IMU, UWB, and feature streams.

The trajectory is a sum of sinusoids per position axis and per ZYX Euler
angle, so velocity, acceleration, and body rates are all analytic. Scene
geometry is a set of bounded planes and edge segments; each scan samples
points on the surfaces near the robot so that consecutive scans overlap
(what a short-range lidar would see), with optional noise along the
measurement ray and labeled UWB outliers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .imu import GRAVITY, ImuSample
from .lidar import FeatureCloud
from .state import StateNode


class SimulationError(ValueError):
    pass


@dataclass
class Sinusoid:
    """offset + slope * t + sum_i amps[i] * sin(2 pi freqs[i] t + phases[i])."""

    offset: float = 0.0
    amps: tuple = ()
    freqs: tuple = ()
    phases: tuple = ()
    slope: float = 0.0

    def value(self, t):
        t = np.asarray(t, dtype=float)
        out = self.offset + self.slope * t
        for A, f, ph in zip(self.amps, self.freqs, self.phases):
            out = out + A * np.sin(2 * np.pi * f * t + ph)
        return out

    def d1(self, t):
        out = np.full_like(np.asarray(t, dtype=float), self.slope)
        for A, f, ph in zip(self.amps, self.freqs, self.phases):
            w = 2 * np.pi * f
            out = out + A * w * np.cos(w * np.asarray(t) + ph)
        return out

    def d2(self, t):
        out = np.zeros_like(np.asarray(t, dtype=float))
        for A, f, ph in zip(self.amps, self.freqs, self.phases):
            w = 2 * np.pi * f
            out = out - A * w * w * np.sin(w * np.asarray(t) + ph)
        return out


@dataclass
class Plane:
    point: np.ndarray
    normal: np.ndarray
    extent: float = 10.0  # half-size of the square patch

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float)
        n = np.asarray(self.normal, dtype=float)
        self.normal = n / np.linalg.norm(n)
        # deterministic in-plane basis
        axis = np.zeros(3)
        axis[np.argmin(np.abs(self.normal))] = 1.0
        self.u = np.cross(self.normal, axis)
        self.u /= np.linalg.norm(self.u)
        self.v = np.cross(self.normal, self.u)


@dataclass
class Edge:
    point: np.ndarray
    direction: np.ndarray
    half_length: float = 5.0

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float)
        d = np.asarray(self.direction, dtype=float)
        self.direction = d / np.linalg.norm(d)


@dataclass
class WorldModel:
    planes: list
    edges: list
    anchors: np.ndarray          # ground-truth anchor positions, (n, 3)
    node_offsets: np.ndarray     # UWB node positions in the body frame
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())

    def __post_init__(self):
        self.anchors = np.atleast_2d(np.asarray(self.anchors, dtype=float))
        self.node_offsets = np.atleast_2d(np.asarray(self.node_offsets, dtype=float))
        self.gravity = np.asarray(self.gravity, dtype=float)


# UWB nodes sit on the corners of a 0.75 m x 0.55 m rectangle around the
# body center.
NODE_RECTANGLE = np.array([
    [0.375, 0.275, 0.0],
    [0.375, -0.275, 0.0],
    [-0.375, 0.275, 0.0],
    [-0.375, -0.275, 0.0],
])


def default_world(anchor_count: int = 3) -> WorldModel:
    """Hall-like scene: floor, ceiling, four walls, four corner edges.

    Anchors sit on tripods near the floor while the trajectory flies
    well above them, so the ranges carry height information.
    """
    planes = [
        Plane([0, 0, 0], [0, 0, 1], extent=20.0),    # floor
        Plane([0, 0, 6.0], [0, 0, -1], extent=20.0),  # ceiling
        Plane([-2.0, -5.0, 3.0], [1, 0, 0], extent=12.0),
        Plane([14.0, -5.0, 3.0], [-1, 0, 0], extent=12.0),
        Plane([6.0, 2.0, 3.0], [0, -1, 0], extent=12.0),
        Plane([6.0, -12.0, 3.0], [0, 1, 0], extent=12.0),
    ]
    edges = [
        Edge([-2.0, 2.0, 3.0], [0, 0, 1], half_length=3.0),
        Edge([14.0, 2.0, 3.0], [0, 0, 1], half_length=3.0),
        Edge([14.0, -12.0, 3.0], [0, 0, 1], half_length=3.0),
        Edge([-2.0, -12.0, 3.0], [0, 0, 1], half_length=3.0),
    ]
    all_anchors = np.array([[0.0, 0.0, 0.3], [12.0, 0.0, 0.3], [10.0, -8.0, 0.3]])
    return WorldModel(planes, edges, all_anchors[:anchor_count], NODE_RECTANGLE)


@dataclass
class TrajectorySpec:
    duration: float = 60.0
    imu_rate: float = 100.0
    uwb_rate: float = 25.0       # per ranging node
    cloud_rate: float = 10.0
    v_max: float = 5.0
    x: Sinusoid = field(default_factory=lambda: Sinusoid(
        6.0, (4.0,), (0.05,), (0.0,)))
    y: Sinusoid = field(default_factory=lambda: Sinusoid(
        -5.0, (3.0,), (0.07,), (1.0,)))
    z: Sinusoid = field(default_factory=lambda: Sinusoid(
        3.0, (0.4,), (0.1,), (0.5,)))
    yaw: Sinusoid = field(default_factory=lambda: Sinusoid(
        0.0, (0.8,), (0.03,), (0.3,)))
    pitch: Sinusoid = field(default_factory=lambda: Sinusoid(
        0.0, (0.08,), (0.11,), (0.0,)))
    roll: Sinusoid = field(default_factory=lambda: Sinusoid(
        0.0, (0.08,), (0.09,), (1.2,)))
    plane_points_per_scan: int = 4   # per visible plane
    edge_points_per_scan: int = 2    # per visible edge
    sample_radius: float = 2.0       # in-surface sampling patch radius, m
    max_range: float = 30.0
    # (t0, t1) windows during which only the floor plane and no edges
    # are visible (feature-sparse stretch)
    sparse_windows: tuple = ()

    def position(self, t):
        return np.stack([self.x.value(t), self.y.value(t), self.z.value(t)],
                        axis=-1)

    def velocity(self, t):
        return np.stack([self.x.d1(t), self.y.d1(t), self.z.d1(t)], axis=-1)

    def acceleration(self, t):
        return np.stack([self.x.d2(t), self.y.d2(t), self.z.d2(t)], axis=-1)

    def rotation(self, t):
        cy, sy = np.cos(self.yaw.value(t)), np.sin(self.yaw.value(t))
        cp, sp = np.cos(self.pitch.value(t)), np.sin(self.pitch.value(t))
        cr, sr = np.cos(self.roll.value(t)), np.sin(self.roll.value(t))
        Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
        Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
        Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
        return Rz @ Ry @ Rx

    def body_rates(self, t):
        """Exact body angular velocity from the ZYX Euler rates."""
        phi = self.roll.value(t)
        theta = self.pitch.value(t)
        dphi, dtheta, dpsi = self.roll.d1(t), self.pitch.d1(t), self.yaw.d1(t)
        cphi, sphi = np.cos(phi), np.sin(phi)
        ctheta, stheta = np.cos(theta), np.sin(theta)
        return np.array([
            dphi - dpsi * stheta,
            dtheta * cphi + dpsi * ctheta * sphi,
            -dtheta * sphi + dpsi * ctheta * cphi,
        ])

    def state(self, t) -> StateNode:
        return StateNode(q=geo.rot_to_quat(self.rotation(t)),
                         p=self.position(t), v=self.velocity(t), t=float(t))


@dataclass
class NoiseSpec:
    sigma_g: float = 1e-3
    sigma_a: float = 1e-2
    sigma_bg: float = 1e-5
    sigma_ba: float = 1e-4
    sigma_uwb: float = 0.05
    sigma_lidar: float = 0.02
    outlier_rate: float = 0.0
    outlier_low: float = 1.0
    outlier_high: float = 3.0
    seed: int = 0

    def silent(self) -> bool:
        return all(s == 0.0 for s in (self.sigma_g, self.sigma_a, self.sigma_bg,
                                      self.sigma_ba, self.sigma_uwb,
                                      self.sigma_lidar, self.outlier_rate))


ZERO_NOISE = NoiseSpec(0, 0, 0, 0, 0, 0, 0)


@dataclass
class UwbRecord:
    t: float
    anchor_id: int
    node_id: int
    d: float
    outlier: bool = False


@dataclass
class Dataset:
    spec: TrajectorySpec
    world: WorldModel
    noise: NoiseSpec
    imu: list
    uwb: list
    clouds: list
    groundtruth: list           # StateNode per cloud time
    anchor_ranging: np.ndarray  # rows (i, j, range)


def _visible(spec: TrajectorySpec, world: WorldModel, t: float):
    for t0, t1 in spec.sparse_windows:
        if t0 <= t <= t1:
            return [world.planes[0]], []
    return world.planes, world.edges


def _scan(spec: TrajectorySpec, world: WorldModel, noise: NoiseSpec,
          rng, t: float) -> FeatureCloud:
    p = spec.position(t)
    R = spec.rotation(t)
    planes, edges = _visible(spec, world, t)
    plane_pts, edge_pts = [], []
    for pl in planes:
        # sample near the projection of the robot onto the plane
        center = p - pl.normal * (pl.normal @ (p - pl.point))
        for _ in range(spec.plane_points_per_scan):
            du, dv = rng.uniform(-spec.sample_radius, spec.sample_radius, 2)
            off_u = np.clip(pl.u @ (center - pl.point) + du, -pl.extent, pl.extent)
            off_v = np.clip(pl.v @ (center - pl.point) + dv, -pl.extent, pl.extent)
            x = pl.point + off_u * pl.u + off_v * pl.v
            if np.linalg.norm(x - p) <= spec.max_range:
                plane_pts.append(x)
    for ed in edges:
        s_center = ed.direction @ (p - ed.point)
        for _ in range(spec.edge_points_per_scan):
            s = np.clip(s_center + rng.uniform(-spec.sample_radius,
                                               spec.sample_radius),
                        -ed.half_length, ed.half_length)
            x = ed.point + s * ed.direction
            if np.linalg.norm(x - p) <= spec.max_range:
                edge_pts.append(x)

    def to_body(points):
        if not points:
            return np.zeros((0, 3))
        body = (np.asarray(points) - p) @ R
        if noise.sigma_lidar > 0:
            rays = body / np.linalg.norm(body, axis=1, keepdims=True)
            body = body + rays * rng.normal(0, noise.sigma_lidar,
                                            (len(body), 1))
        return body

    return FeatureCloud(to_body(plane_pts), to_body(edge_pts), t)


def generate(spec: TrajectorySpec, world: WorldModel,
             noise: NoiseSpec) -> Dataset:
    """Produce the full synthetic dataset for one run."""
    ts_check = np.linspace(0, spec.duration, 512)
    speeds = np.linalg.norm(spec.velocity(ts_check), axis=1)
    if speeds.max() > spec.v_max:
        raise SimulationError(
            f"trajectory speed {speeds.max():.2f} exceeds v_max {spec.v_max}")

    rng = np.random.default_rng(noise.seed)
    g = world.gravity

    # IMU stream with bias random walk and white noise
    n_imu = int(round(spec.duration * spec.imu_rate)) + 1
    imu_ts = np.arange(n_imu) / spec.imu_rate
    dt = 1.0 / spec.imu_rate
    bg = np.zeros(3)
    ba = np.zeros(3)
    imu = []
    for t in imu_ts:
        R = spec.rotation(t)
        w = spec.body_rates(t)
        a = R.T @ (spec.acceleration(t) - g)
        if not noise.silent():
            bg = bg + rng.normal(0, noise.sigma_bg * np.sqrt(dt), 3)
            ba = ba + rng.normal(0, noise.sigma_ba * np.sqrt(dt), 3)
            w = w + bg + rng.normal(0, noise.sigma_g / np.sqrt(dt), 3)
            a = a + ba + rng.normal(0, noise.sigma_a / np.sqrt(dt), 3)
        imu.append(ImuSample(float(t), w, a))

    # UWB stream: each body node ranges at uwb_rate, cycling the anchors
    uwb = []
    if len(world.anchors) and spec.uwb_rate > 0:
        n_nodes = len(world.node_offsets)
        n_rng = int(round(spec.duration * spec.uwb_rate))
        counter = 0
        for i in range(1, n_rng + 1):
            t = i / spec.uwb_rate
            p = spec.position(t)
            R = spec.rotation(t)
            for node_id in range(n_nodes):
                anchor_id = counter % len(world.anchors)
                counter += 1
                x = world.anchors[anchor_id]
                y = world.node_offsets[node_id]
                d = float(np.linalg.norm(p + R @ y - x))
                is_outlier = False
                if noise.sigma_uwb > 0:
                    d += rng.normal(0, noise.sigma_uwb)
                if noise.outlier_rate > 0 and rng.uniform() < noise.outlier_rate:
                    d += rng.uniform(noise.outlier_low, noise.outlier_high)
                    is_outlier = True
                uwb.append(UwbRecord(float(t), anchor_id, node_id, d, is_outlier))

    # feature clouds and ground truth at cloud times
    n_clouds = int(round(spec.duration * spec.cloud_rate)) + 1
    cloud_ts = np.arange(n_clouds) / spec.cloud_rate
    clouds = [_scan(spec, world, noise, rng, float(t)) for t in cloud_ts]
    groundtruth = [spec.state(float(t)) for t in cloud_ts]

    ranging = emit_anchor_ranging(world, noise, samples_per_pair=400, rng=rng)
    return Dataset(spec, world, noise, imu, uwb, clouds, groundtruth, ranging)


def emit_anchor_ranging(world: WorldModel, noise: NoiseSpec,
                        samples_per_pair: int = 50, rng=None) -> np.ndarray:
    """Repeated noisy inter-anchor ranges, rows (i, j, range)."""
    if rng is None:
        rng = np.random.default_rng(noise.seed + 1)
    rows = []
    n = len(world.anchors)
    for i in range(n):
        for j in range(i + 1, n):
            d = np.linalg.norm(world.anchors[i] - world.anchors[j])
            for _ in range(samples_per_pair):
                noisy = d + (rng.normal(0, noise.sigma_uwb)
                             if noise.sigma_uwb > 0 else 0.0)
                rows.append((i, j, noisy))
    return np.array(rows) if rows else np.zeros((0, 3))
