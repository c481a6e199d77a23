"""Trainable rigid-body objectives and their analytic gradients.

Three per-pair losses on predicted vs ground-truth transforms:

- ``ml``: decoupled squared translation distance plus ``alpha`` times the
  double-cover-corrected squared quaternion distance.
- ``rmsd``: squared rigid-body RMSD of the relative transform
  T_pred^-1 o T_gt, evaluated in the template's COM frame where it
  reduces to |t_rel|^2 + (4/W) v^T I v. Equals the atom-wise squared
  RMSD between the two placed copies.
- ``geom``: squared rigid RMSD between molecules after superposing a
  fixed reference molecule across prediction and ground truth; the mean
  over non-reference molecules is invariant to global rigid motions.

Starred variants make the objective permutation invariant through exact
assignment or a Sinkhorn plan over a per-pair cost matrix (rows index
ground truth, columns prediction). The reference pair of the geometric
loss is always matched to itself and excluded from the assignment.

Gradients are returned per predicted molecule as a translation gradient
and a rotation gradient in the tangent space at the current quaternion:
component k is the derivative along the path exp(h e_k) q at h = 0 (the
axis-angle increment multiplies on the world side). The assignment plan
is treated as a constant: gradients flow through the costs only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assignment import TransportPlan, default_reg, lsa_solve, sinkhorn
from .molecule import Assembly, MoleculeTemplate
from .se3 import (
    RigidTransform,
    compose,
    inverse,
    quat_conjugate,
    quat_dist_sq,
    quat_mul,
    quat_to_matrix,
)

LOSS_KINDS = ("ml", "rmsd", "geom")
ASSIGNMENT_MODES = ("none", "exact", "sinkhorn")

_CONJ = np.diag([1.0, -1.0, -1.0, -1.0])


@dataclass(frozen=True)
class LossValue:
    """Loss value (angstrom^2 for rmsd/geom) plus the plan that produced it."""

    value: float
    plan: object = None  # permutation array, TransportPlan, or None


@dataclass(frozen=True)
class TransformGradient:
    """Per-molecule gradient: d_t w.r.t. translation, d_omega in the rotation tangent space."""

    d_t: np.ndarray
    d_omega: np.ndarray


def loss_ml(T_pred: RigidTransform, T_gt: RigidTransform, alpha: float = 10.0) -> float:
    """|t_p - t_g|^2 + alpha * min(|q_p - q_g|^2, |q_p + q_g|^2)."""
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    dt = T_pred.t - T_gt.t
    return float(dt @ dt + alpha * quat_dist_sq(T_pred.q, T_gt.q))


def loss_rmsd(T_pred: RigidTransform, T_gt: RigidTransform, template: MoleculeTemplate) -> float:
    """Squared rigid RMSD between the two placements of the template."""
    trans, rot = loss_rmsd_parts(T_pred, T_gt, template)
    return trans + rot


def loss_rmsd_parts(T_pred: RigidTransform, T_gt: RigidTransform, template: MoleculeTemplate):
    """Translational and rotational parts of the squared rigid RMSD.

    The parts are each non-negative and sum to ``loss_rmsd``; the split
    matches the additive structure of the COM-frame quadratic form.
    """
    dt = T_gt.t - T_pred.t
    qrel = quat_mul(quat_conjugate(T_pred.q), T_gt.q)
    v = qrel[1:]
    rot = (4.0 / template.W) * float(v @ template.inertia @ v)
    return float(dt @ dt), rot


def relative_rmsd(Ti_p: RigidTransform, Tj_p: RigidTransform,
                  Ti_g: RigidTransform, Tj_g: RigidTransform,
                  template: MoleculeTemplate) -> float:
    """Squared RMSD of molecule i after superposing reference molecule j.

    Evaluates ``loss_rmsd`` on the relative transforms Tj^-1 o Ti of both
    assemblies; invariant to any rigid motion applied jointly to (Ti, Tj)
    on either side.
    """
    A = compose(inverse(Tj_p), Ti_p)
    B = compose(inverse(Tj_g), Ti_g)
    return loss_rmsd(A, B, template)


def loss_geom(pred: Assembly, gt: Assembly, ref_index: int | None = None) -> float:
    """Mean relative squared RMSD of non-reference molecules (Ti vs reference)."""
    _check_assemblies(pred, gt)
    M = pred.M
    if M < 2:
        raise ValueError("the geometric loss needs at least two molecules")
    ref = _resolve_ref(ref_index, M)
    total = 0.0
    for i in range(M):
        if i == ref:
            continue
        total += relative_rmsd(pred.transforms[i], pred.transforms[ref],
                               gt.transforms[i], gt.transforms[ref], pred.template)
    return total / (M - 1)


def _resolve_ref(ref_index, M: int) -> int:
    ref = M - 1 if ref_index is None else int(ref_index)
    if not 0 <= ref < M:
        raise ValueError(f"ref_index must be in [0, {M}), got {ref}")
    return ref


def _check_assemblies(pred: Assembly, gt: Assembly):
    if pred.M != gt.M:
        raise ValueError(f"assemblies have different sizes ({pred.M} vs {gt.M})")
    if not pred.template.same_molecule(gt.template):
        raise ValueError("assemblies must share the same molecule template")


def _check_kind(kind: str) -> str:
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
    return kind


# ---------------------------------------------------------------------------
# batched kernels on raw (M, 3) / (M, 4) arrays
# ---------------------------------------------------------------------------

def _bquat_mul(q1, q2):
    s1, v1 = q1[..., :1], q1[..., 1:]
    s2, v2 = q2[..., :1], q2[..., 1:]
    s = s1 * s2 - (v1 * v2).sum(axis=-1, keepdims=True)
    v = s1 * v2 + s2 * v1 + np.cross(v1, v2)
    return np.concatenate([s, v], axis=-1)


def _bconj(q):
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def _pair_rmsd_sq(tp, qp, tg, qg, inertia, W):
    dt = tg - tp
    qrel = _bquat_mul(_bconj(qp), qg)
    v = qrel[..., 1:]
    return (dt * dt).sum(axis=-1) + (4.0 / W) * np.einsum("...i,ij,...j->...", v, inertia, v)


def _pair_ml(tp, qp, tg, qg, alpha):
    dt = tp - tg
    dq = np.minimum(((qp - qg) ** 2).sum(axis=-1), ((qp + qg) ** 2).sum(axis=-1))
    return (dt * dt).sum(axis=-1) + alpha * dq


def _relative_arrays(t, q, ref: int):
    """Transforms of non-reference molecules expressed in the reference frame."""
    keep = np.arange(t.shape[0]) != ref
    Rr = quat_to_matrix(q[ref])
    t_rel = (t[keep] - t[ref]) @ Rr  # row-vector form of R^T (t_i - t_r)
    q_rel = _bquat_mul(_bconj(q[ref])[None, :], q[keep])
    return t_rel, q_rel


def _pair_cost_arrays(kind, tp, qp, tg, qg, template, alpha=10.0, ref=None):
    """Cost matrix from raw transform arrays; ``ref`` is resolved for geom."""
    if kind == "geom":
        tp, qp = _relative_arrays(tp, qp, ref)
        tg, qg = _relative_arrays(tg, qg, ref)
        kind = "rmsd"
    if kind == "rmsd":
        return _pair_rmsd_sq(tp[None, :, :], qp[None, :, :], tg[:, None, :], qg[:, None, :],
                             template.inertia, template.W)
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    return _pair_ml(tp[None, :, :], qp[None, :, :], tg[:, None, :], qg[:, None, :], alpha)


def pair_cost_matrix(kind: str, pred: Assembly, gt: Assembly, *,
                     alpha: float = 10.0, ref_index: int | None = None) -> np.ndarray:
    """Per-pair loss matrix with rows = ground-truth molecules, cols = predicted.

    For the geometric kind the matrix is (M-1) x (M-1) over non-reference
    molecules: entry (a, b) compares predicted molecule b and ground-truth
    molecule a after superposing the fixed reference pair.
    """
    _check_kind(kind)
    _check_assemblies(pred, gt)
    ref = None
    if kind == "geom":
        if pred.M < 2:
            raise ValueError("the geometric loss needs at least two molecules")
        ref = _resolve_ref(ref_index, pred.M)
    return _pair_cost_arrays(kind, pred.translations(), pred.quaternions(),
                             gt.translations(), gt.quaternions(), pred.template,
                             alpha=alpha, ref=ref)


def _loss_normalizer(kind: str, M: int) -> int:
    return M - 1 if kind == "geom" else M


def loss_star(kind: str, pred: Assembly, gt: Assembly, *, assignment: str = "exact",
              reg: float | None = None, alpha: float = 10.0,
              ref_index: int | None = None) -> LossValue:
    """Permutation-invariant loss via optimal assignment over the pair costs.

    ``assignment`` is "exact" (linear sum assignment; value is the mean
    assigned cost) or "sinkhorn" (soft plan; value is <P, C> divided by
    the same normalizer). ``reg`` defaults to 0.05 x median cost.
    """
    C = pair_cost_matrix(kind, pred, gt, alpha=alpha, ref_index=ref_index)
    norm = _loss_normalizer(kind, pred.M)
    if assignment == "exact":
        sigma, total = lsa_solve(C)
        return LossValue(value=total / norm, plan=sigma)
    if assignment == "sinkhorn":
        plan = sinkhorn(C, default_reg(C) if reg is None else reg)
        return LossValue(value=float((plan.matrix * C).sum()) / norm, plan=plan)
    raise ValueError(f"unknown assignment mode {assignment!r}; expected 'exact' or 'sinkhorn'")


def loss_under_plan(kind: str, pred: Assembly, gt: Assembly, plan=None, *,
                    alpha: float = 10.0, ref_index: int | None = None) -> float:
    """Loss under a fixed pairing: a permutation array, a soft plan, or None.

    ``None`` means the identity pairing. Used wherever the plan must be
    held constant (gradient checks, line searches).
    """
    C = pair_cost_matrix(kind, pred, gt, alpha=alpha, ref_index=ref_index)
    norm = _loss_normalizer(kind, pred.M)
    n = C.shape[0]
    if plan is None:
        return float(np.trace(C)) / norm
    if isinstance(plan, TransportPlan):
        plan = plan.matrix
    plan = np.asarray(plan)
    if plan.ndim == 1:
        return float(C[np.arange(n), plan.astype(int)].sum()) / norm
    return float((plan * C).sum()) / norm


# ---------------------------------------------------------------------------
# analytic gradients
# ---------------------------------------------------------------------------

def _right_mul_matrix(b):
    """Matrix R with a (x) b = R(b) a, batched over leading dims of b."""
    s, x, y, z = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    rows = [
        np.stack([s, -x, -y, -z], axis=-1),
        np.stack([x, s, z, -y], axis=-1),
        np.stack([y, -z, s, x], axis=-1),
        np.stack([z, y, -x, s], axis=-1),
    ]
    return np.stack(rows, axis=-2)


def _left_mul_matrix(a):
    """Matrix L with a (x) b = L(a) b, batched over leading dims of a."""
    s, x, y, z = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    rows = [
        np.stack([s, -x, -y, -z], axis=-1),
        np.stack([x, s, -z, y], axis=-1),
        np.stack([y, z, s, -x], axis=-1),
        np.stack([z, -y, x, s], axis=-1),
    ]
    return np.stack(rows, axis=-2)


def _rotate_apply_jac(q, u):
    """Jacobian of R(q) u w.r.t. the four quaternion components, shape (..., 3, 4).

    Uses the homogeneous quadratic form R(q) u = (s^2 - |v|^2) u
    + 2 (v.u) v + 2 s (v x u), valid without normalization.
    """
    s = q[..., :1]
    v = q[..., 1:]
    d_s = 2.0 * s * u + 2.0 * np.cross(v, u)
    vu = (v * u).sum(axis=-1, keepdims=True)
    cols = [d_s]
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        col = (-2.0 * v[..., k:k + 1] * u + 2.0 * u[..., k:k + 1] * v
               + 2.0 * vu * e + 2.0 * s * np.cross(e, u))
        cols.append(col)
    return np.stack(cols, axis=-1)


def _tangent_from_dq(q, dq):
    """Map ambient R^4 gradients to tangent components at unit quaternions.

    Component k is dq . ((1/2) e_k (x) q), the derivative along exp(h e_k) q.
    """
    Rm = _right_mul_matrix(q)  # columns are e (x) q
    return 0.5 * np.einsum("...ik,...i->...k", Rm[..., :, 1:], dq)


def _pair_weights_from_cost(C, assignment, reg):
    n = C.shape[0]
    if assignment == "none":
        return np.eye(n)
    if assignment == "exact":
        sigma, _ = lsa_solve(C)
        W = np.zeros((n, n))
        W[np.arange(n), sigma] = 1.0
        return W
    if assignment == "sinkhorn":
        plan = sinkhorn(C, default_reg(C) if reg is None else reg)
        return np.asarray(plan.matrix)
    raise ValueError(f"unknown assignment mode {assignment!r}; expected one of {ASSIGNMENT_MODES}")


def loss_gradient(kind: str, pred: Assembly, gt: Assembly, *, assignment: str = "none",
                  reg: float | None = None, alpha: float = 10.0,
                  ref_index: int | None = None):
    """Analytic gradient of the (possibly starred) loss per predicted molecule.

    The assignment is re-solved at the current configuration and then
    held constant while differentiating. Returns a list of M
    TransformGradient records.
    """
    _check_kind(kind)
    _check_assemblies(pred, gt)
    ref = _resolve_ref(ref_index, pred.M) if kind == "geom" else None
    tp, qp = pred.translations(), pred.quaternions()
    tg, qg = gt.translations(), gt.quaternions()
    C = _pair_cost_arrays(kind, tp, qp, tg, qg, pred.template, alpha=alpha, ref=ref)
    weights = _pair_weights_from_cost(C, assignment, reg)
    d_t, d_om = _grad_from_arrays(kind, tp, qp, tg, qg, pred.template, weights,
                                  alpha=alpha, ref=ref)
    return [TransformGradient(d_t=d_t[i], d_omega=d_om[i]) for i in range(pred.M)]


def _grad_from_arrays(kind, tp, qp, tg, qg, template, weights, alpha=10.0, ref=None):
    """Gradient arrays (M, 3) x2 under a fixed pair-weight matrix."""
    M = tp.shape[0]
    norm = _loss_normalizer(kind, M)
    d_t = np.zeros((M, 3))
    d_q = np.zeros((M, 4))

    if kind in ("ml", "rmsd"):
        wsum = weights.sum(axis=0)
        d_t = 2.0 * (wsum[:, None] * tp - weights.T @ tg)
        if kind == "ml":
            diff_m = qp[None, :, :] - qg[:, None, :]
            diff_p = qp[None, :, :] + qg[:, None, :]
            take_minus = (diff_m ** 2).sum(-1) <= (diff_p ** 2).sum(-1)
            dq_pair = 2.0 * alpha * np.where(take_minus[..., None], diff_m, diff_p)
            d_q = np.einsum("ij,ijk->jk", weights, dq_pair)
        else:
            qrel = _bquat_mul(_bconj(qp)[None, :, :], qg[:, None, :])  # (i, j, 4)
            h = np.zeros_like(qrel)
            h[..., 1:] = (8.0 / template.W) * np.einsum("kl,ijl->ijk", template.inertia,
                                                        qrel[..., 1:])
            Rg = _right_mul_matrix(qg)  # (i, 4, 4)
            # d cost / d q_pred = C4 R(q_gt)^T h
            dq_pair = np.einsum("ab,icb,ijc->ija", _CONJ, Rg, h)
            d_q = np.einsum("ij,ijk->jk", weights, dq_pair)
    else:
        keep = np.where(np.arange(M) != ref)[0]
        Rr = quat_to_matrix(qp[ref])
        qpr = qp[ref]
        tB, qB = _relative_arrays(tg, qg, ref)      # gt side, constant
        tA = (tp[keep] - tp[ref]) @ Rr
        e = tB[:, None, :] - tA[None, :, :]          # (i, j, 3)
        eR = e @ Rr.T                                # R_r e, row-vector form
        d_t[keep] = -2.0 * np.einsum("ij,ijk->jk", weights, eR)
        d_t[ref] = 2.0 * np.einsum("ij,ijk->k", weights, eR)
        # reference rotation enters the translational part through R_r^T (t_j - t_r)
        dvec = tp[keep] - tp[ref]
        J = _rotate_apply_jac(_bconj(qpr)[None, :], dvec)  # (j, 3, 4)
        contrib = -2.0 * np.einsum("ij,ijk,jka->a", weights, e, J)
        d_q[ref] += _CONJ @ contrib
        # rotational part: q_rel = conj(q_pj) (x) q_pr (x) q_Bi
        qrB = _bquat_mul(qpr[None, :], qB)           # (i, 4)
        qrel = _bquat_mul(_bconj(qp[keep])[None, :, :], qrB[:, None, :])  # (i, j, 4)
        h = np.zeros_like(qrel)
        h[..., 1:] = (8.0 / template.W) * np.einsum("kl,ijl->ijk", template.inertia,
                                                    qrel[..., 1:])
        RqrB = _right_mul_matrix(qrB)                # (i, 4, 4)
        dq_pair = np.einsum("ab,icb,ijc->ija", _CONJ, RqrB, h)
        d_q[keep] += np.einsum("ij,ijk->jk", weights, dq_pair)
        RB = _right_mul_matrix(qB)                   # (i, 4, 4)
        Lc = _left_mul_matrix(_bconj(qp[keep]))      # (j, 4, 4)
        ref_pair = np.einsum("iba,jcb,ijc->ija", RB, Lc, h)
        d_q[ref] += np.einsum("ij,ija->a", weights, ref_pair)

    d_om = _tangent_from_dq(qp, d_q)
    return d_t / norm, d_om / norm
