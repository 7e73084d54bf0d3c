"""Factor-graph nonlinear least squares.

A problem is a list of nodes (anything exposing local_dim / retract /
local_diff) and a list of factors. Factors return whitened residuals and
Jacobian blocks with respect to the local perturbation of each attached
node; the Levenberg-Marquardt loop therefore sees an unweighted stack.

Also provides Schur-complement marginalization, which turns the factors
touching a departing node into a dense Gaussian prior on the remaining
involved nodes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np


class SolverDivergedError(RuntimeError):
    def __init__(self, report):
        super().__init__("non-finite cost encountered")
        self.report = report


@dataclass
class SolverConfig:
    max_iterations: int = 50
    rel_cost_tol: float = 1e-6
    grad_tol: float = 1e-8
    init_lambda: float = 1e-6
    lambda_up: float = 10.0
    lambda_down: float = 0.5
    max_lambda: float = 1e12


@dataclass
class SolverReport:
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    cost_breakdown: dict = field(default_factory=dict)
    converged: bool = False
    status: str = ""
    wall_time: float = 0.0


def _huber_sqrt_weight(norm: float, delta: float) -> float:
    if norm <= delta or norm == 0.0:
        return 1.0
    return np.sqrt(delta / norm)


def _robust_cost(norm: float, delta) -> float:
    """Squared norm, Huberized above delta when a loss is attached."""
    if delta is None or norm <= delta:
        return norm * norm
    return 2.0 * delta * norm - delta * delta


def _offsets(nodes):
    offs = []
    total = 0
    for n in nodes:
        offs.append(total)
        total += n.local_dim()
    return offs, total


def linearize_problem(nodes, factors, robust: bool = True):
    """Stacked (J, r, cost, breakdown) at the current node values."""
    offs, total = _offsets(nodes)
    rows = []
    blocks = []
    cost = 0.0
    breakdown = {}
    n_rows = 0
    for f in factors:
        r, Js = f.linearize(nodes)
        r = np.atleast_1d(r)
        norm = np.linalg.norm(r)
        delta = getattr(f, "loss", None)
        c = _robust_cost(norm, delta)
        cost += c
        kind = getattr(f, "kind", type(f).__name__)
        breakdown[kind] = breakdown.get(kind, 0.0) + c
        if robust and delta is not None:
            sw = _huber_sqrt_weight(norm, delta)
            if sw != 1.0:
                r = sw * r
                Js = [sw * J for J in Js]
        rows.append(r)
        blocks.append((n_rows, f.nodes, Js))
        n_rows += len(r)
    J = np.zeros((n_rows, total))
    for row0, node_ids, Js in blocks:
        for idx, Jb in zip(node_ids, Js):
            Jb = np.atleast_2d(Jb)
            J[row0:row0 + Jb.shape[0], offs[idx]:offs[idx] + Jb.shape[1]] += Jb
    r = np.concatenate(rows) if rows else np.zeros(0)
    return J, r, cost, breakdown


def evaluate_cost(nodes, factors):
    cost = 0.0
    breakdown = {}
    for f in factors:
        r = np.atleast_1d(f.linearize(nodes)[0])
        c = _robust_cost(np.linalg.norm(r), getattr(f, "loss", None))
        cost += c
        kind = getattr(f, "kind", type(f).__name__)
        breakdown[kind] = breakdown.get(kind, 0.0) + c
    return cost, breakdown


def optimize(nodes, factors, config: SolverConfig | None = None):
    """Levenberg-Marquardt minimization; returns (nodes, SolverReport).

    Raises SolverDivergedError when the cost turns non-finite.
    """
    if config is None:
        config = SolverConfig()
    t_start = time.perf_counter()
    nodes = [n.copy() for n in nodes]
    offs, total = _offsets(nodes)

    J, r, cost, breakdown = linearize_problem(nodes, factors)
    report = SolverReport(initial_cost=cost, final_cost=cost,
                          cost_breakdown=breakdown)
    if not np.isfinite(cost):
        report.status = "diverged"
        report.wall_time = time.perf_counter() - t_start
        raise SolverDivergedError(report)

    lam = config.init_lambda
    for it in range(config.max_iterations):
        report.iterations = it + 1
        grad = J.T @ r
        if np.abs(grad).max() < config.grad_tol:
            report.converged = True
            report.status = "gradient tolerance"
            break
        H = J.T @ J
        D = np.clip(np.diag(H), 1e-12, None)

        accepted = False
        while lam <= config.max_lambda:
            try:
                delta = np.linalg.solve(H + lam * np.diag(D), -grad)
            except np.linalg.LinAlgError:
                lam *= config.lambda_up
                continue
            trial = [n.retract(delta[o:o + n.local_dim()])
                     for n, o in zip(nodes, offs)]
            Jt, rt, cost_t, breakdown_t = linearize_problem(trial, factors)
            if not np.isfinite(cost_t):
                report.final_cost = cost_t
                report.status = "diverged"
                report.wall_time = time.perf_counter() - t_start
                raise SolverDivergedError(report)
            if cost_t < cost:
                accepted = True
                rel_drop = (cost - cost_t) / max(cost, 1e-300)
                nodes, J, r = trial, Jt, rt
                cost, breakdown = cost_t, breakdown_t
                lam = max(lam * config.lambda_down, 1e-12)
                if rel_drop < config.rel_cost_tol:
                    report.converged = True
                    report.status = "relative cost decrease"
                break
            lam *= config.lambda_up
        if not accepted:
            report.converged = True
            report.status = "no acceptable step"
            break
        if report.converged:
            break
    else:
        report.status = "iteration limit"

    report.final_cost = cost
    report.cost_breakdown = breakdown
    report.wall_time = time.perf_counter() - t_start
    return nodes, report


@dataclass
class PriorFactor:
    """Linear(ized) Gaussian prior: r(x) = r0 + sum_i J_i boxminus(x_i, lin_i)."""

    nodes: tuple
    lin_nodes: list
    r0: np.ndarray
    J_blocks: list
    kind: str = "prior"
    loss = None

    def linearize(self, values):
        r = self.r0.copy()
        for idx, lin, J in zip(self.nodes, self.lin_nodes, self.J_blocks):
            r = r + J @ values[idx].local_diff(lin)
        return r, list(self.J_blocks)

    def remap(self, mapping: dict) -> "PriorFactor":
        """Prior with node indices translated (after a window slide)."""
        return PriorFactor(tuple(mapping[i] for i in self.nodes),
                           self.lin_nodes, self.r0, self.J_blocks)


def marginalize(nodes, factors, marg_ids, eig_floor: float = 1e-10):
    """Schur-complement the given node indices out of the factor set.

    Returns a PriorFactor over the remaining nodes that appear in
    `factors` (indices kept in the original numbering; remap afterwards
    as needed). All factors are linearized at the current values.
    """
    marg_ids = set(marg_ids)
    involved = sorted({i for f in factors for i in f.nodes})
    keep = [i for i in involved if i not in marg_ids]
    marg = [i for i in involved if i in marg_ids]
    if not keep:
        raise ValueError("marginalization would leave no retained nodes")

    sub_nodes = [nodes[i] for i in involved]
    remap = {orig: local for local, orig in enumerate(involved)}

    class _Sub:
        def __init__(self, f):
            self.f = f
            self.nodes = tuple(remap[i] for i in f.nodes)
            self.loss = getattr(f, "loss", None)
            self.kind = getattr(f, "kind", "")

        def linearize(self, values):
            # original factor indexes the full node list
            full = list(nodes)
            for orig, local in remap.items():
                full[orig] = values[local]
            return self.f.linearize(full)

    J, r, _, _ = linearize_problem(sub_nodes, [_Sub(f) for f in factors])
    offs, total = _offsets(sub_nodes)
    H = J.T @ J
    b = J.T @ r

    def span(ids):
        cols = []
        for i in ids:
            o = offs[remap[i]]
            cols.extend(range(o, o + nodes[i].local_dim()))
        return np.array(cols, dtype=int)

    mi = span(marg)
    ki = span(keep)
    H_mm = H[np.ix_(mi, mi)]
    H_km = H[np.ix_(ki, mi)]
    H_kk = H[np.ix_(ki, ki)]
    b_m = b[mi]
    b_k = b[ki]

    H_mm_inv = np.linalg.pinv(H_mm, rcond=1e-12)
    H_new = H_kk - H_km @ H_mm_inv @ H_km.T
    b_new = b_k - H_km @ H_mm_inv @ b_m

    H_new = 0.5 * (H_new + H_new.T)
    vals, vecs = np.linalg.eigh(H_new)
    good = vals > eig_floor * max(1.0, vals.max(initial=0.0))
    S = np.sqrt(vals[good])
    V = vecs[:, good]
    J_prior = (V * S).T                      # J^T J == H_new
    r0 = (V / S).T @ b_new                   # J^T r0 == b_new

    J_blocks = []
    col = 0
    cols_per_node = [nodes[i].local_dim() for i in keep]
    for d in cols_per_node:
        J_blocks.append(J_prior[:, col:col + d])
        col += d
    lin = [nodes[i].copy() for i in keep]
    return PriorFactor(tuple(keep), lin, r0, J_blocks)
