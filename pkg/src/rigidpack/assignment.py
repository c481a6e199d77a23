"""Exact and entropically relaxed optimal assignment on square cost matrices.

Cost matrices are (M, M) arrays with rows indexing ground-truth molecules
and columns indexing predicted molecules. A permutation sigma maps each
row i to its assigned column sigma[i].

The soft solver targets the entropic relaxation

    min_P  <P, C> + reg * sum_ij P_ij log P_ij
    s.t.   P 1 = P^T 1 = 1,  P >= 0

with unit row and column masses (total mass M), so plan entries are
directly comparable to a 0/1 pairing matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp


def _check_cost(C) -> np.ndarray:
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] == 0:
        raise ValueError(f"cost matrix must be square and nonempty, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix entries must be finite")
    return C


def lsa_solve(C):
    """Minimum-cost assignment; returns (permutation, total_cost).

    The total cost is the global minimum of sum_i C[i, sigma[i]] over all
    permutations. Among cost-equal minimizers the lexicographically
    smallest sigma is returned, found by fixing rows in order to the
    smallest column that still completes at the optimal cost.
    """
    C = _check_cost(C)
    M = C.shape[0]
    rows, cols = linear_sum_assignment(C)
    best = float(C[rows, cols].sum())

    sigma = np.empty(M, dtype=np.intp)
    avail = list(range(M))
    remaining = best
    for i in range(M):
        sub = C[i + 1:, :]
        chosen = None
        chosen_rest = 0.0
        for j in avail:
            rest_cols = [c for c in avail if c != j]
            if sub.shape[0]:
                r, c = linear_sum_assignment(sub[:, rest_cols])
                rest = float(sub[:, rest_cols][r, c].sum())
            else:
                rest = 0.0
            total = C[i, j] + rest
            if total <= remaining:
                chosen = j
                chosen_rest = rest
                break
        if chosen is None:
            # float round-off between alternative optimal sums; fall back
            # to the cheapest completion among available columns
            totals = []
            for j in avail:
                rest_cols = [c for c in avail if c != j]
                if sub.shape[0]:
                    r, c = linear_sum_assignment(sub[:, rest_cols])
                    rest = float(sub[:, rest_cols][r, c].sum())
                else:
                    rest = 0.0
                totals.append((C[i, j] + rest, j, rest))
            _, chosen, chosen_rest = min(totals)
        sigma[i] = chosen
        avail.remove(chosen)
        remaining = chosen_rest
    total_cost = float(C[np.arange(M), sigma].sum())
    return sigma, total_cost


@dataclass(frozen=True)
class TransportPlan:
    """Doubly stochastic soft assignment with unit marginals."""

    matrix: np.ndarray
    reg: float
    iterations: int
    converged: bool

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)


def sinkhorn(C, reg: float, max_iters: int = 1000, tol: float = 1e-6) -> TransportPlan:
    """Entropically regularized soft assignment in the log domain.

    Runs scaling sweeps on the dual potentials and, once the marginals
    are roughly balanced, Newton steps on the (smooth, concave) dual,
    which cuts through the slow tail of plain scaling. Every sweep or
    Newton step counts as one iteration; stops when the worst row or
    column marginal violation drops below ``tol`` or after ``max_iters``
    iterations, whichever comes first (``converged`` records which).
    """
    C = _check_cost(C)
    if reg <= 0.0:
        raise ValueError("reg must be positive")
    M = C.shape[0]
    f = np.zeros(M)
    g = np.zeros(M)

    def log_plan(f, g):
        return (f[:, None] + g[None, :] - C) / reg

    def marginal_err(f, g):
        lp = log_plan(f, g)
        with np.errstate(over="ignore"):
            row = np.exp(logsumexp(lp, axis=1))
            col = np.exp(logsumexp(lp, axis=0))
        return max(np.abs(row - 1.0).max(), np.abs(col - 1.0).max())

    it = 0
    err = marginal_err(f, g)
    warmup = min(20, max_iters)
    cooldown = 0  # scaling sweeps to run after a failed Newton attempt
    while it < max_iters and err >= tol:
        if it < warmup or cooldown > 0:
            f = -reg * logsumexp((g[None, :] - C) / reg, axis=1)
            g = -reg * logsumexp((f[:, None] - C) / reg, axis=0)
            cooldown = max(cooldown - 1, 0)
        else:
            f, g, used_newton = _newton_step(C, reg, f, g)
            if not used_newton:
                cooldown = 10
        it += 1
        err = marginal_err(f, g)
    P = np.exp(log_plan(f, g))
    return TransportPlan(matrix=P, reg=float(reg), iterations=it, converged=bool(err < tol))


def _newton_step(C, reg, f, g):
    """One damped Newton step on the dual potentials.

    Returns (f, g, used_newton); falls back to one scaling sweep when no
    damping of the Newton direction reduces the marginal residual.
    """
    M = C.shape[0]
    P = np.exp((f[:, None] + g[None, :] - C) / reg)
    r = P.sum(axis=1)
    c = P.sum(axis=0)
    rhs = np.concatenate([1.0 - r, 1.0 - c])
    H = np.block([[np.diag(r), P], [P.T, np.diag(c)]]) / reg
    H[np.diag_indices_from(H)] += 1e-12
    try:
        delta = np.linalg.solve(H, rhs)
    except np.linalg.LinAlgError:
        delta = np.linalg.lstsq(H, rhs, rcond=None)[0]
    base = np.linalg.norm(rhs)
    step = 1.0
    for _ in range(20):
        f2 = f + step * delta[:M]
        g2 = g + step * delta[M:]
        lp = (f2[:, None] + g2[None, :] - C) / reg
        with np.errstate(over="ignore"):
            row = np.exp(logsumexp(lp, axis=1))
            col = np.exp(logsumexp(lp, axis=0))
        res = np.linalg.norm(np.concatenate([1.0 - row, 1.0 - col]))
        if np.isfinite(res) and res < base:
            return f2, g2, True
        step *= 0.5
    f = -reg * logsumexp((g[None, :] - C) / reg, axis=1)
    g = -reg * logsumexp((f[:, None] - C) / reg, axis=0)
    return f, g, False


def plan_round(plan: TransportPlan) -> np.ndarray:
    """Hard permutation from a soft plan: maximum-likelihood rounding.

    Solves the exact assignment on -log(P + 1e-300); ties (e.g. a uniform
    plan) resolve to the lexicographically smallest permutation.
    """
    P = np.asarray(plan.matrix, dtype=np.float64)
    sigma, _ = lsa_solve(-np.log(P + 1e-300))
    return sigma


def default_reg(C) -> float:
    """Regularization rule: 0.05 x median cost entry.

    Falls back to 0.05 x (mean + 1e-12) when the median is zero so the
    result stays positive for degenerate matrices.
    """
    C = _check_cost(C)
    med = float(np.median(C))
    if med == 0.0:
        return 0.05 * (float(np.mean(C)) + 1e-12)
    return 0.05 * med
