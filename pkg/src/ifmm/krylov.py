"""Non-restarted GMRES with pluggable matvec and preconditioner.

Arnoldi with modified Gram-Schmidt and Givens-rotation least squares.
The residual history holds the quantity GMRES minimizes: the true
relative residual for right (or no) preconditioning, the preconditioned
residual for left preconditioning.

Also provides the fast hierarchical matvec over H2Operators (the same
operators the factorization consumes) and a block-diagonal
preconditioner built from dense diagonal sub-blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .h2 import H2Operators


@dataclass
class IterationTrace:
    residual_history: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    side: str = "none"


def gmres(apply_A: Callable[[np.ndarray], np.ndarray], b: np.ndarray,
          tol: float = 1e-10, max_iters: int = 500,
          precond: Callable[[np.ndarray], np.ndarray] | None = None,
          side: str = "right") -> tuple[np.ndarray, IterationTrace]:
    """Solve A x = b; returns the iterate and its residual trace.

    `precond` applies P^{-1}. Zero-vector Arnoldi breakdown returns the
    current iterate (converged if the residual estimate met tol).
    """
    if tol <= 0 or max_iters < 1:
        raise ValueError("tol must be > 0 and max_iters >= 1")
    if precond is None:
        side = "none"
    if side not in ("left", "right", "none"):
        raise ValueError("side must be 'left', 'right', or 'none'")
    trace = IterationTrace(side=side)

    n = len(b)
    r0 = precond(b) if side == "left" else b
    beta = np.linalg.norm(r0)
    if beta == 0.0:
        trace.converged = True
        return np.zeros(n), trace

    V = np.zeros((max_iters + 1, n))
    H = np.zeros((max_iters + 1, max_iters))
    cs = np.zeros(max_iters)
    sn = np.zeros(max_iters)
    g = np.zeros(max_iters + 1)
    g[0] = beta
    V[0] = r0 / beta

    k_done = 0
    breakdown = False
    for k in range(max_iters):
        if side == "right":
            w = apply_A(precond(V[k]))
        elif side == "left":
            w = precond(apply_A(V[k]))
        else:
            w = apply_A(V[k])
        for i in range(k + 1):          # modified Gram-Schmidt
            H[i, k] = V[i] @ w
            w = w - H[i, k] * V[i]
        h_sub = np.linalg.norm(w)
        H[k + 1, k] = h_sub

        for i in range(k):              # apply stored rotations
            h0 = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
            H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
            H[i, k] = h0
        nu = np.hypot(H[k, k], H[k + 1, k])
        if nu == 0.0:
            k_done = k
            breakdown = True
            break
        cs[k] = H[k, k] / nu
        sn[k] = H[k + 1, k] / nu
        H[k, k] = nu
        H[k + 1, k] = 0.0
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]

        rel = abs(g[k + 1]) / beta
        trace.residual_history.append(float(rel))
        k_done = k + 1
        if rel <= tol:
            trace.converged = True
            break
        if h_sub == 0.0:                # exact breakdown: Krylov space exhausted
            breakdown = True
            break
        V[k + 1] = w / h_sub

    if breakdown and trace.residual_history:
        trace.converged = trace.residual_history[-1] <= tol

    k = k_done
    x = np.zeros(n)
    if k > 0:
        y = sla.solve_triangular(H[:k, :k], g[:k])
        u = V[:k].T @ y
        x = precond(u) if side == "right" else u
    trace.iterations = k
    return x, trace


def h2_matvec(ops: H2Operators, x: np.ndarray) -> np.ndarray:
    """Fast matvec: upward pass, couplings, downward pass, near field."""
    tree = ops.tree
    bd = ops.block_dim
    if len(x) != tree.n_points * bd:
        raise ValueError("vector length mismatch")
    xt = np.asarray(x, dtype=float).reshape(tree.n_points, bd)[tree.perm].ravel()

    y: dict[int, np.ndarray] = {}
    for cid in tree.leaves():
        c = tree.clusters[cid]
        y[cid] = ops.leaf_v[cid].T @ xt[c.start * bd:c.stop * bd]
    for level in range(tree.depth - 1, 1, -1):
        for pid in tree.levels[level]:
            y[pid] = sum(ops.transfer_vt[c] @ y[c]
                         for c in tree.clusters[pid].children)

    z: dict[int, np.ndarray] = {}
    for level in range(2, tree.depth + 1):
        for cid in tree.levels[level]:
            acc = np.zeros(ops.rank[cid])
            for q in ops.topology.interactions[cid]:
                acc += ops.coupling[(cid, q)] @ y[q]
            if level > 2:
                acc += ops.transfer_u[cid] @ z[tree.clusters[cid].parent]
            z[cid] = acc

    out = np.zeros_like(xt)
    for cid in tree.leaves():
        c = tree.clusters[cid]
        seg = np.zeros((c.stop - c.start) * bd)
        for q in ops.topology.neighbors[cid]:
            cq = tree.clusters[q]
            seg += ops.near[(cid, q)] @ xt[cq.start * bd:cq.stop * bd]
        if tree.depth >= 2:
            seg += ops.leaf_u[cid] @ z[cid]
        out[c.start * bd:c.stop * bd] = seg

    res = np.empty_like(out).reshape(tree.n_points, bd)
    res[tree.perm] = out.reshape(tree.n_points, bd)
    return res.ravel()


class H2Matvec:
    """Callable wrapper caching nothing; keeps gmres call sites tidy."""

    def __init__(self, ops: H2Operators):
        self.ops = ops

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return h2_matvec(self.ops, x)


def block_diag_preconditioner(A: np.ndarray, block_size: int):
    """Factorize the diagonal blocks of A once; apply solves blockwise.

    The final block may be shorter when block_size does not divide the
    dimension.
    """
    n = A.shape[0]
    if block_size < 1 or block_size > n:
        raise ValueError("block_size must be in [1, n]")
    factors = []
    bounds = list(range(0, n, block_size)) + [n]
    for a, b in zip(bounds[:-1], bounds[1:]):
        blk = A[a:b, a:b]
        try:
            factors.append((a, b, sla.lu_factor(blk)))
        except ValueError as exc:
            raise ValueError(f"singular diagonal block [{a}:{b}]") from exc

    def apply(v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        for a, b, lu in factors:
            out[a:b] = sla.lu_solve(lu, v[a:b])
        return out

    return apply
