"""Packing-matching and RMSD evaluation metrics, plain and starred.

The packing score compares the full matrix of pairwise distances between
two point sets of equal size,

    PM^2 = (1/N^2) sum_ij (|x_i^p - x_j^p| - |x_i^g - x_j^g|)^2,

with the zero diagonal included in the normalization. It is invariant to
rigid motions of either set. The starred variants first solve an
assignment between the molecules of the two assemblies on a decomposable
per-pair cost and evaluate the metric under that pairing.

All distances are in angstrom.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assignment import default_reg, lsa_solve, plan_round, sinkhorn
from .losses import pair_cost_matrix
from .molecule import Assembly, apply_transform
from .runtime import thread_count

METRIC_KINDS = ("pm_atom", "pm_center", "rmsd_atom")
COST_KINDS = ("rmsd", "center")


@dataclass(frozen=True)
class MetricReport:
    """Metric value plus the molecule pairing used to evaluate it."""

    value: float
    permutation: np.ndarray | None
    assignment_mode: str


def _check_paired(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.ndim != 2 or pred.shape[1] != 3 or pred.shape[0] == 0:
        raise ValueError(f"expected a nonempty (n, 3) array, got shape {pred.shape}")
    if pred.shape != gt.shape:
        raise ValueError(f"point sets differ in shape: {pred.shape} vs {gt.shape}")
    return pred, gt


def _pairwise_distances(x):
    d = x[:, None, :] - x[None, :, :]
    return np.sqrt((d * d).sum(axis=-1))


def pm_atom(pred_positions, gt_positions) -> float:
    """Packing-matching score over paired atom positions."""
    pred, gt = _check_paired(pred_positions, gt_positions)
    n = pred.shape[0]
    diff = _pairwise_distances(pred) - _pairwise_distances(gt)
    return float(np.sqrt((diff * diff).sum() / (n * n)))


def pm_center(pred_centers, gt_centers) -> float:
    """Packing-matching score over molecule centers of mass."""
    return pm_atom(pred_centers, gt_centers)


def rmsd_atom(pred_positions, gt_positions) -> float:
    """Root mean square deviation of paired positions in a common frame."""
    pred, gt = _check_paired(pred_positions, gt_positions)
    d = pred - gt
    return float(np.sqrt((d * d).sum() / pred.shape[0]))


def reconstruct_positions(assembly: Assembly) -> np.ndarray:
    """World-frame atom coordinates of all molecules, molecule-major order."""
    return np.concatenate([apply_transform(assembly.template, T) for T in assembly.transforms])


def molecule_centers(assembly: Assembly) -> np.ndarray:
    """Placed centers of mass; equals the translations for centered templates."""
    return assembly.translations()


def cost_matrix(pred: Assembly, gt: Assembly, cost_kind: str = "rmsd") -> np.ndarray:
    """Per-pair assignment costs, rows = ground-truth, cols = predicted.

    ``rmsd``: squared rigid RMSD between the placed copies (rotation and
    translation both contribute). ``center``: squared distance between
    the placed centers of mass. Large matrices are built in row blocks
    across worker threads (see ``RIGIDPACK_THREADS``); each entry comes
    from the same kernel, so the result is identical for any split.
    """
    if cost_kind not in COST_KINDS:
        raise ValueError(f"unknown cost kind {cost_kind!r}; expected one of {COST_KINDS}")
    if pred.M != gt.M:
        raise ValueError(f"assemblies have different sizes ({pred.M} vs {gt.M})")
    if not pred.template.same_molecule(gt.template):
        raise ValueError("assemblies must share the same molecule template")

    def rows(lo: int, hi: int) -> np.ndarray:
        if cost_kind == "rmsd":
            return _rmsd_rows(pred, gt, lo, hi)
        cg = molecule_centers(gt)[lo:hi]
        cp = molecule_centers(pred)
        d = cg[:, None, :] - cp[None, :, :]
        return (d * d).sum(axis=-1)

    n_threads = min(thread_count(), pred.M)
    if n_threads <= 1 or pred.M < 64:
        return rows(0, gt.M)
    from concurrent.futures import ThreadPoolExecutor

    bounds = np.linspace(0, gt.M, n_threads + 1, dtype=int)
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        blocks = list(pool.map(lambda ab: rows(ab[0], ab[1]),
                               zip(bounds[:-1], bounds[1:])))
    return np.vstack(blocks)


def _rmsd_rows(pred: Assembly, gt: Assembly, lo: int, hi: int) -> np.ndarray:
    from .losses import _pair_rmsd_sq

    tp, qp = pred.translations(), pred.quaternions()
    tg, qg = gt.translations()[lo:hi], gt.quaternions()[lo:hi]
    tmpl = pred.template
    return _pair_rmsd_sq(tp[None, :, :], qp[None, :, :], tg[:, None, :], qg[:, None, :],
                         tmpl.inertia, tmpl.W)


def evaluate_metric(kind: str, pred: Assembly, gt: Assembly) -> float:
    """Metric under the identity pairing of molecules."""
    if kind == "pm_atom":
        return pm_atom(reconstruct_positions(pred), reconstruct_positions(gt))
    if kind == "pm_center":
        return pm_center(molecule_centers(pred), molecule_centers(gt))
    if kind == "rmsd_atom":
        return rmsd_atom(reconstruct_positions(pred), reconstruct_positions(gt))
    raise ValueError(f"unknown metric kind {kind!r}; expected one of {METRIC_KINDS}")


def metric_star(kind: str, pred: Assembly, gt: Assembly, *, assignment: str = "exact",
                cost_kind: str = "rmsd", reg: float | None = None) -> MetricReport:
    """Permutation-corrected metric: assign molecules, re-index, evaluate.

    ``assignment`` is "none" (identity pairing), "exact" (linear sum
    assignment on the cost matrix), or "sinkhorn" (soft plan rounded to
    the maximum-likelihood permutation). The permutation maps each
    ground-truth molecule to the predicted molecule standing in for it.
    """
    if kind not in METRIC_KINDS:
        raise ValueError(f"unknown metric kind {kind!r}; expected one of {METRIC_KINDS}")
    if assignment == "none":
        return MetricReport(value=evaluate_metric(kind, pred, gt), permutation=None,
                            assignment_mode="none")
    C = cost_matrix(pred, gt, cost_kind)
    if assignment == "exact":
        sigma, _ = lsa_solve(C)
    elif assignment == "sinkhorn":
        sigma = plan_round(sinkhorn(C, default_reg(C) if reg is None else reg))
    else:
        raise ValueError(f"unknown assignment mode {assignment!r}")
    aligned = pred.reorder(sigma)
    return MetricReport(value=evaluate_metric(kind, aligned, gt), permutation=sigma,
                        assignment_mode=assignment)
