"""Estimator configuration with JSON round-trip support."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .imu import ImuNoise
from .lidar import LidarParams
from .solver import SolverConfig


@dataclass
class EstimatorConfig:
    window_size: int = 10          # M: window holds M+1 nodes
    sigma_uwb: float = 0.05        # m
    sigma_lidar: float = 0.02     # m
    huber_delta: float = 0.5       # m, applied sigma-normalized to UWB/lidar
    uwb_gate: float = 1.0          # m innovation gate
    uwb_v_max: float = 10.0        # m/s range-rate gate
    outer_iterations: int = 2      # coefficient re-association rounds
    integration: str = "zoh"       # or "rk4"
    gravity: tuple = (0.0, 0.0, -9.81)
    prior_pose_weight: float = 1e4     # bootstrap prior, 1/m and 1/rad
    prior_vel_bias_weight: float = 1e2
    imu_noise: ImuNoise = field(default_factory=ImuNoise)
    lidar: LidarParams = field(default_factory=LidarParams)
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(
        max_iterations=4, rel_cost_tol=1e-5))

    def to_json(self, **kw) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, **kw)

    @classmethod
    def from_json(cls, text: str) -> "EstimatorConfig":
        raw = json.loads(text)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "EstimatorConfig":
        raw = dict(raw)
        if "imu_noise" in raw and isinstance(raw["imu_noise"], dict):
            raw["imu_noise"] = ImuNoise(**raw["imu_noise"])
        if "lidar" in raw and isinstance(raw["lidar"], dict):
            raw["lidar"] = LidarParams(**raw["lidar"])
        if "solver" in raw and isinstance(raw["solver"], dict):
            raw["solver"] = SolverConfig(**raw["solver"])
        if "gravity" in raw:
            raw["gravity"] = tuple(raw["gravity"])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)
