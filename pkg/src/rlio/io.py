"""Dataset directory layout and trajectory file round-trips.

A dataset directory contains:

    imu.csv             t,wx,wy,wz,ax,ay,az
    uwb.csv             t,anchor_id,node_id,range_m
    uwb_outliers.csv    row indices into uwb.csv that were injected outliers
    features/<t>.csv    t,label,x,y,z with label in {plane, edge}
    groundtruth.csv     t,px,py,pz,qx,qy,qz,qw,vx,vy,vz
    anchor_ranging.csv  anchor_i,anchor_j,range_m (repeated noisy samples)
    world.json          scene geometry, anchors, node offsets, gravity
    noise.json          the noise parameters used to generate the run

Quaternions are stored in x,y,z,w column order; in memory they are
w,x,y,z.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from .imu import ImuSample
from .lidar import FeatureCloud
from .simulate import (Dataset, Edge, NoiseSpec, Plane, UwbRecord, WorldModel)
from .state import StateNode

FMT = "%.9f"


def _save_csv(path, header, rows, fmt=FMT):
    arr = np.asarray(rows, dtype=float).reshape(-1, len(header.split(",")))
    np.savetxt(path, arr, delimiter=",", header=header, comments="", fmt=fmt)


def _load_csv(path, n_cols):
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if arr.size == 0:
        return np.zeros((0, n_cols))
    return arr


def write_trajectory(path, nodes):
    rows = []
    for n in nodes:
        w, x, y, z = n.q
        rows.append([n.t, *n.p, x, y, z, w, *n.v])
    _save_csv(path, "t,px,py,pz,qx,qy,qz,qw,vx,vy,vz", rows)


def read_trajectory(path):
    arr = _load_csv(path, 11)
    nodes = []
    for row in arr:
        t, px, py, pz, qx, qy, qz, qw = row[:8]
        v = row[8:11]
        nodes.append(StateNode(q=[qw, qx, qy, qz], p=[px, py, pz], v=v, t=t))
    return nodes


def _world_to_dict(world: WorldModel) -> dict:
    return {
        "planes": [{"point": p.point.tolist(), "normal": p.normal.tolist(),
                    "extent": p.extent} for p in world.planes],
        "edges": [{"point": e.point.tolist(), "direction": e.direction.tolist(),
                   "half_length": e.half_length} for e in world.edges],
        "anchors": world.anchors.tolist(),
        "node_offsets": world.node_offsets.tolist(),
        "gravity": world.gravity.tolist(),
    }


def _world_from_dict(raw: dict) -> WorldModel:
    return WorldModel(
        planes=[Plane(p["point"], p["normal"], p["extent"])
                for p in raw["planes"]],
        edges=[Edge(e["point"], e["direction"], e["half_length"])
               for e in raw["edges"]],
        anchors=np.asarray(raw["anchors"], dtype=float).reshape(-1, 3),
        node_offsets=np.asarray(raw["node_offsets"], dtype=float),
        gravity=np.asarray(raw["gravity"], dtype=float),
    )


def write_dataset(ds: Dataset, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    _save_csv(path / "imu.csv", "t,wx,wy,wz,ax,ay,az",
              [[s.t, *s.w, *s.a] for s in ds.imu])
    _save_csv(path / "uwb.csv", "t,anchor_id,node_id,range_m",
              [[r.t, r.anchor_id, r.node_id, r.d] for r in ds.uwb])
    outlier_rows = [[i] for i, r in enumerate(ds.uwb) if r.outlier]
    np.savetxt(path / "uwb_outliers.csv",
               np.asarray(outlier_rows, dtype=int).reshape(-1, 1),
               delimiter=",", header="uwb_row", comments="", fmt="%d")

    feat_dir = path / "features"
    feat_dir.mkdir(exist_ok=True)
    for old in feat_dir.glob("*.csv"):
        old.unlink()
    for cloud in ds.clouds:
        rows = []
        for x in cloud.plane:
            rows.append(f"{cloud.t:.9f},plane,{x[0]:.9f},{x[1]:.9f},{x[2]:.9f}")
        for x in cloud.edge:
            rows.append(f"{cloud.t:.9f},edge,{x[0]:.9f},{x[1]:.9f},{x[2]:.9f}")
        text = "t,label,x,y,z\n" + "\n".join(rows) + ("\n" if rows else "")
        (feat_dir / f"{cloud.t:.6f}.csv").write_text(text)

    write_trajectory(path / "groundtruth.csv", ds.groundtruth)
    _save_csv(path / "anchor_ranging.csv", "anchor_i,anchor_j,range_m",
              ds.anchor_ranging)
    (path / "world.json").write_text(
        json.dumps(_world_to_dict(ds.world), indent=2) + "\n")
    (path / "noise.json").write_text(
        json.dumps(dataclasses.asdict(ds.noise), indent=2) + "\n")
    return path


def read_dataset(path) -> Dataset:
    path = Path(path)
    world = _world_from_dict(json.loads((path / "world.json").read_text()))
    noise = NoiseSpec(**json.loads((path / "noise.json").read_text()))

    imu = [ImuSample(row[0], row[1:4], row[4:7])
           for row in _load_csv(path / "imu.csv", 7)]

    uwb_arr = _load_csv(path / "uwb.csv", 4)
    outlier_path = path / "uwb_outliers.csv"
    outlier_rows = set()
    if outlier_path.exists():
        body = outlier_path.read_text().splitlines()[1:]
        outlier_rows = {int(line) for line in body if line.strip()}
    uwb = [UwbRecord(row[0], int(row[1]), int(row[2]), row[3],
                     i in outlier_rows)
           for i, row in enumerate(uwb_arr)]

    clouds = []
    feat_dir = path / "features"
    for f in sorted(feat_dir.glob("*.csv"), key=lambda p: float(p.stem)):
        plane_pts, edge_pts = [], []
        t = float(f.stem)
        with open(f) as fh:
            next(fh)  # header
            for line in fh:
                parts = line.strip().split(",")
                if len(parts) != 5:
                    continue
                t = float(parts[0])
                xyz = [float(p) for p in parts[2:5]]
                (plane_pts if parts[1] == "plane" else edge_pts).append(xyz)
        clouds.append(FeatureCloud(np.asarray(plane_pts).reshape(-1, 3),
                                   np.asarray(edge_pts).reshape(-1, 3), t))

    groundtruth = read_trajectory(path / "groundtruth.csv")
    ranging = _load_csv(path / "anchor_ranging.csv", 3)
    return Dataset(None, world, noise, imu, uwb, clouds, groundtruth, ranging)
