"""Trajectory error metrics against ground truth.

Estimated and reference trajectories are associated by nearest
timestamp; position/rotation RMSE can be computed either in the raw
frames ("none") or after a rigid SE(3) alignment of the estimate onto
the reference ("se3", least-squares over the associated positions).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as geo


class EvaluationError(ValueError):
    pass


@dataclass
class ErrorReport:
    alignment: str
    n_pairs: int
    rmse_pos: float           # m
    rmse_rot_deg: float
    max_pos: float            # m
    t: np.ndarray = field(repr=False, default=None)
    err_xyz: np.ndarray = field(repr=False, default=None)   # (n, 3) per-axis
    err_rot_deg: np.ndarray = field(repr=False, default=None)

    def to_text(self) -> str:
        lines = [
            f"alignment: {self.alignment}",
            f"pairs: {self.n_pairs}",
            f"rmse_pos_m: {self.rmse_pos:.6f}",
            f"rmse_rot_deg: {self.rmse_rot_deg:.6f}",
            f"max_pos_m: {self.max_pos:.6f}",
        ]
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        rows = np.column_stack([self.t, self.err_xyz, self.err_rot_deg])
        np.savetxt(path, rows, delimiter=",",
                   header="t,ex,ey,ez,rot_deg", comments="", fmt="%.9f")


def associate(est_nodes, gt_nodes, max_dt: float = 0.01):
    """Nearest-timestamp pairing; unmatched estimates are dropped."""
    gt_t = np.array([n.t for n in gt_nodes])
    pairs = []
    for i, e in enumerate(est_nodes):
        j = int(np.argmin(np.abs(gt_t - e.t)))
        if abs(gt_t[j] - e.t) <= max_dt:
            pairs.append((i, j))
    return pairs


def align_se3(P_est: np.ndarray, P_ref: np.ndarray):
    """Least-squares rigid transform (R, t) minimizing |R p_est + t - p_ref|."""
    P_est = np.asarray(P_est, dtype=float)
    P_ref = np.asarray(P_ref, dtype=float)
    if len(P_est) < 3:
        raise EvaluationError("need at least 3 associated poses to align")
    mu_e = P_est.mean(axis=0)
    mu_r = P_ref.mean(axis=0)
    W = (P_ref - mu_r).T @ (P_est - mu_e)
    U, _, Vt = np.linalg.svd(W)
    S = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    R = U @ S @ Vt
    t = mu_r - R @ mu_e
    return R, t


def evaluate(est_nodes, gt_nodes, alignment: str = "se3",
             max_dt: float = 0.01) -> ErrorReport:
    if alignment not in ("se3", "none"):
        raise EvaluationError(f"unknown alignment {alignment!r}")
    pairs = associate(est_nodes, gt_nodes, max_dt)
    if not pairs:
        raise EvaluationError("no timestamp associations within tolerance")
    P_est = np.array([est_nodes[i].p for i, _ in pairs])
    P_ref = np.array([gt_nodes[j].p for _, j in pairs])
    R_align = np.eye(3)
    t_align = np.zeros(3)
    if alignment == "se3":
        R_align, t_align = align_se3(P_est, P_ref)

    err_xyz = (P_est @ R_align.T + t_align) - P_ref
    rot_err = np.zeros(len(pairs))
    for n, (i, j) in enumerate(pairs):
        R_e = R_align @ est_nodes[i].R
        rot_err[n] = np.degrees(np.linalg.norm(
            geo.log_so3(gt_nodes[j].R.T @ R_e)))

    norms = np.linalg.norm(err_xyz, axis=1)
    return ErrorReport(
        alignment=alignment,
        n_pairs=len(pairs),
        rmse_pos=float(np.sqrt(np.mean(norms**2))),
        rmse_rot_deg=float(np.sqrt(np.mean(rot_err**2))),
        max_pos=float(norms.max()),
        t=np.array([est_nodes[i].t for i, _ in pairs]),
        err_xyz=err_xyz,
        err_rot_deg=rot_err,
    )
