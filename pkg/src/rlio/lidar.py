"""Lidar feature handling: local map, feature coefficients, residual.

Feature clouds arrive pre-labeled as plane or edge points in the body
frame of their scan. The first M clouds of the window are merged into a
local map in the window-head body frame; each feature point is then
associated with map neighbors to produce a coefficient (f, n, c) whose
residual is the weighted distance to the fitted local plane.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import geometry as geo
from .state import StateNode


@dataclass
class FeatureCloud:
    """Plane and edge feature points of one scan, body frame, meters."""

    plane: np.ndarray  # (n, 3)
    edge: np.ndarray   # (m, 3)
    t: float = 0.0

    def __post_init__(self):
        self.plane = np.asarray(self.plane, dtype=float).reshape(-1, 3)
        self.edge = np.asarray(self.edge, dtype=float).reshape(-1, 3)
        if not (np.all(np.isfinite(self.plane)) and np.all(np.isfinite(self.edge))):
            raise ValueError("feature points must be finite")


@dataclass
class LidarParams:
    knn: int = 5
    search_radius: float = 1.0   # m, max accepted neighbor distance
    voxel_leaf: float = 0.2      # m, local-map downsampling
    cond_max: float = 1e6        # plane-fit conditioning guard


@dataclass
class LocalMap:
    """Merged plane/edge maps in the window-head body frame, with k-d trees."""

    plane: np.ndarray
    edge: np.ndarray
    plane_tree: cKDTree | None = field(default=None, repr=False)
    edge_tree: cKDTree | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.plane_tree is None and len(self.plane):
            self.plane_tree = cKDTree(self.plane)
        if self.edge_tree is None and len(self.edge):
            self.edge_tree = cKDTree(self.edge)


@dataclass
class LidarCoefficient:
    """Feature point with its weighted plane normal and offset."""

    f: np.ndarray   # feature point, body frame of its scan
    n: np.ndarray   # weighted normal
    c: float        # weighted offset

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        self.n = np.asarray(self.n, dtype=float)


def voxel_downsample(points: np.ndarray, leaf: float) -> np.ndarray:
    """Centroid per occupied voxel, rows ordered by voxel index."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0 or leaf <= 0:
        return points
    keys = np.floor(points / leaf).astype(np.int64)
    # stable unique voxel ids
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    keys, points = keys[order], points[order]
    _, starts, counts = np.unique(keys, axis=0, return_index=True,
                                  return_counts=True)
    out = np.add.reduceat(points, starts, axis=0) / counts[:, None]
    return out


def transform_points(points: np.ndarray, R: np.ndarray, p: np.ndarray):
    return points @ R.T + p


def build_local_map(clouds, transforms, params: LidarParams | None = None) -> LocalMap:
    """Merge M clouds into the body frame of the first one.

    `transforms` are the estimated world poses (R, p) of each cloud,
    index-aligned with `clouds`; points are mapped via T_w^-1 T_m.
    """
    if params is None:
        params = LidarParams()
    clouds = list(clouds)
    transforms = list(transforms)
    if len(clouds) != len(transforms):
        raise ValueError(
            f"{len(clouds)} clouds but {len(transforms)} transforms")
    Rw, pw = transforms[0]
    plane_parts, edge_parts = [], []
    for cloud, (Rm, pm) in zip(clouds, transforms):
        R_rel = Rw.T @ Rm
        p_rel = Rw.T @ (pm - pw)
        if len(cloud.plane):
            plane_parts.append(transform_points(cloud.plane, R_rel, p_rel))
        if len(cloud.edge):
            edge_parts.append(transform_points(cloud.edge, R_rel, p_rel))
    plane = np.vstack(plane_parts) if plane_parts else np.zeros((0, 3))
    edge = np.vstack(edge_parts) if edge_parts else np.zeros((0, 3))
    return LocalMap(voxel_downsample(plane, params.voxel_leaf),
                    voxel_downsample(edge, params.voxel_leaf))


def _perpendicular_unit(v: np.ndarray) -> np.ndarray:
    axis = np.zeros(3)
    axis[np.argmin(np.abs(v))] = 1.0
    n = np.cross(v, axis)
    return n / np.linalg.norm(n)


def _plane_coefficient(f, wf, local_map, params):
    tree = local_map.plane_tree
    if tree is None or len(local_map.plane) < params.knn:
        return None
    dists, idx = tree.query(wf, k=params.knn)
    if np.max(dists) > params.search_radius:
        return None
    X = local_map.plane[idx]
    if np.linalg.cond(X) > params.cond_max:
        return None
    n_bar, *_ = np.linalg.lstsq(X, -np.ones(params.knn), rcond=None)
    nn = np.linalg.norm(n_bar)
    wfn = np.linalg.norm(wf)
    if nn < 1e-12 or wfn < 1e-12:
        return None
    quality = 1.0 - 0.9 * abs(n_bar @ wf + 1.0) / (nn * wfn)
    if quality <= 0:
        return None
    g = quality / nn
    return [LidarCoefficient(f, g * n_bar, g)]


def _edge_coefficients(f, wf, local_map, params):
    tree = local_map.edge_tree
    if tree is None or len(local_map.edge) < params.knn:
        return None
    dists, idx = tree.query(wf, k=params.knn)
    if np.max(dists) > params.search_radius:
        return None
    X = local_map.edge[idx]
    centroid = X.mean(axis=0)
    centered = X - centroid
    scatter = centered.T @ centered / len(X)
    eigval, eigvec = np.linalg.eigh(scatter)
    v_max = eigvec[:, -1]

    x0 = wf
    x1 = centroid + 0.1 * v_max
    x2 = centroid - 0.1 * v_max
    x01 = x0 - x1
    x02 = x0 - x2
    x12 = x1 - x2
    cross = np.cross(x01, x02)
    cross_norm = np.linalg.norm(cross)
    if cross_norm < 1e-12:
        # point lies on the line: any direction perpendicular to it works
        n1 = _perpendicular_unit(x12)
    else:
        n1 = np.cross(x12, np.cross(-x01, x02))
        n1 = n1 / np.linalg.norm(n1)
    n2 = np.cross(x12, n1)
    f_perp = wf - np.outer(n1, n1) @ x01
    c1 = -n1 @ f_perp
    c2 = -n2 @ f_perp
    g = 0.5 * (1.0 - 0.9 * cross_norm / np.linalg.norm(x12))
    if g <= 0:
        return None
    return [LidarCoefficient(f, g * n1, g * c1),
            LidarCoefficient(f, g * n2, g * c2)]


def _plane_batch(W, local_map, params):
    """Vectorized plane association for all query points at once."""
    n = len(W)
    N = np.zeros((n, 3))
    C = np.zeros(n)
    ok = np.zeros(n, dtype=bool)
    tree = local_map.plane_tree
    if tree is None or len(local_map.plane) < params.knn or n == 0:
        return ok, N, C
    dists, idx = tree.query(W, k=params.knn)
    near = dists[:, -1] <= params.search_radius
    if not np.any(near):
        return ok, N, C
    X = local_map.plane[idx[near]]                      # (m, k, 3)
    U, S, Vt = np.linalg.svd(X, full_matrices=False)
    cond = S[:, 0] / np.maximum(S[:, -1], 1e-300)
    good = cond <= params.cond_max
    # least-squares plane n_bar with X n_bar = -1, via the SVD
    b = -np.ones(params.knn)
    n_bar = np.einsum("mji,mj->mi", Vt,
                      np.einsum("mkj,k->mj", U, b) / np.maximum(S, 1e-300))
    nn = np.linalg.norm(n_bar, axis=1)
    Wn = W[near]
    wfn = np.linalg.norm(Wn, axis=1)
    good &= (nn > 1e-12) & (wfn > 1e-12)
    quality = 1.0 - 0.9 * np.abs(np.einsum("mi,mi->m", n_bar, Wn) + 1.0) \
        / np.maximum(nn * wfn, 1e-300)
    good &= quality > 0
    g = np.where(good, quality / np.maximum(nn, 1e-300), 0.0)
    ok[near] = good
    N[near] = g[:, None] * n_bar
    C[near] = g
    return ok, N, C


def _edge_batch(W, local_map, params):
    """Vectorized edge association; two coefficient rows per query point."""
    n = len(W)
    N1 = np.zeros((n, 3))
    N2 = np.zeros((n, 3))
    C1 = np.zeros(n)
    C2 = np.zeros(n)
    ok = np.zeros(n, dtype=bool)
    tree = local_map.edge_tree
    if tree is None or len(local_map.edge) < params.knn or n == 0:
        return ok, N1, C1, N2, C2
    dists, idx = tree.query(W, k=params.knn)
    near = dists[:, -1] <= params.search_radius
    if not np.any(near):
        return ok, N1, C1, N2, C2
    X = local_map.edge[idx[near]]
    centroid = X.mean(axis=1)
    centered = X - centroid[:, None, :]
    scatter = np.einsum("mki,mkj->mij", centered, centered) / params.knn
    _, vecs = np.linalg.eigh(scatter)
    v_max = vecs[:, :, -1]

    x0 = W[near]
    x1 = centroid + 0.1 * v_max
    x2 = centroid - 0.1 * v_max
    x01 = x0 - x1
    x02 = x0 - x2
    x12 = x1 - x2
    cr = np.cross(x01, x02)
    cn = np.linalg.norm(cr, axis=1)
    n1 = np.cross(x12, np.cross(-x01, x02))
    n1n = np.linalg.norm(n1, axis=1)
    degen = cn < 1e-12
    for i in np.flatnonzero(degen):
        n1[i] = _perpendicular_unit(x12[i])
        n1n[i] = 1.0
    n1 = n1 / np.maximum(n1n, 1e-300)[:, None]
    n2 = np.cross(x12, n1)
    f_perp = x0 - n1 * np.einsum("mi,mi->m", n1, x01)[:, None]
    c1 = -np.einsum("mi,mi->m", n1, f_perp)
    c2 = -np.einsum("mi,mi->m", n2, f_perp)
    g = 0.5 * (1.0 - 0.9 * cn / np.maximum(np.linalg.norm(x12, axis=1), 1e-300))
    good = g > 0
    ok[near] = good
    N1[near] = g[:, None] * n1
    C1[near] = g * c1
    N2[near] = g[:, None] * n2
    C2[near] = g * c2
    return ok, N1, C1, N2, C2


def compute_coefficients(cloud: FeatureCloud, local_map: LocalMap, T_wm,
                         params: LidarParams | None = None):
    """Associate a feature cloud with the local map.

    T_wm = (R, p) maps points from the cloud's body frame into the
    window-head frame. Output order follows the input point order:
    plane points first, then edge points (two coefficients each).
    """
    if params is None:
        params = LidarParams()
    R, p = T_wm
    coeffs = []
    if len(cloud.plane):
        ok, N, C = _plane_batch(cloud.plane @ R.T + p, local_map, params)
        for f, o, nvec, c in zip(cloud.plane, ok, N, C):
            if o:
                coeffs.append(LidarCoefficient(f, nvec, c))
    if len(cloud.edge):
        ok, N1, C1, N2, C2 = _edge_batch(cloud.edge @ R.T + p, local_map,
                                         params)
        for i, f in enumerate(cloud.edge):
            if ok[i]:
                coeffs.append(LidarCoefficient(f, N1[i], C1[i]))
                coeffs.append(LidarCoefficient(f, N2[i], C2[i]))
    return coeffs


def lidar_residual(xw: StateNode, xm: StateNode, coeff: LidarCoefficient,
                   with_jacobians: bool = False):
    """Scalar feature residual n^T R_w^-1 (R_m f + p_m - p_w) + c."""
    Rw, Rm = xw.R, xm.R
    u = Rm @ coeff.f + xm.p - xw.p
    b = Rw.T @ u
    r = coeff.n @ b + coeff.c
    if not with_jacobians:
        return r
    Jw = np.zeros(15)
    Jm = np.zeros(15)
    Jw[0:3] = coeff.n @ geo.skew(b)
    Jw[3:6] = -coeff.n @ Rw.T
    Jm[0:3] = -coeff.n @ (Rw.T @ Rm @ geo.skew(coeff.f))
    Jm[3:6] = coeff.n @ Rw.T
    return r, Jw, Jm


def lidar_residuals_batch(xw: StateNode, xm: StateNode, F, N, C,
                          with_jacobians: bool = False):
    """Vectorized residuals for all coefficients of one (head, node) pair.

    F: (k, 3) feature points, N: (k, 3) weighted normals, C: (k,) offsets.
    Jacobian outputs are (k, 15) in the local state ordering.
    """
    Rw, Rm = xw.R, xm.R
    U = F @ Rm.T + (xm.p - xw.p)          # (k, 3)
    B = U @ Rw                            # R_w^T u, row-wise
    r = np.einsum("ij,ij->i", N, B) + C
    if not with_jacobians:
        return r
    k = len(F)
    Jw = np.zeros((k, 15))
    Jm = np.zeros((k, 15))
    Jw[:, 0:3] = np.cross(N, B)        # rows n^T [b]_x
    NRwT = N @ Rw.T                    # rows n^T R_w^T
    Jw[:, 3:6] = -NRwT
    Jm[:, 0:3] = -np.cross(NRwT @ Rm, F)
    Jm[:, 3:6] = NRwT
    return r, Jw, Jm
