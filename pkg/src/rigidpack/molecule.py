"""Molecule templates, mass properties, and closed-form rigid RMSD kernels.

A template stores local-frame atom coordinates, centered on the weighted
center of mass so the cross term of the general RMSD expansion vanishes
and RMSD^2 of a relative transform reduces to

    |t|^2 + (4 / W) v^T I v

with v the vector part of the rotation quaternion, I the inertia tensor
of the stored coordinates and W the total weight. The general kernel
with the cross term 2 t^T (R - E) c is kept for non-centered frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .se3 import (
    RigidTransform,
    _rotate,
    matrix_to_quat,
    quat_to_matrix,
    require_unit,
)

# Standard atomic weights for the opt-in mass-weighted mode.
ATOMIC_MASSES = {
    "H": 1.008, "He": 4.0026, "Li": 6.94, "Be": 9.0122, "B": 10.81,
    "C": 12.011, "N": 14.007, "O": 15.999, "F": 18.998, "Ne": 20.180,
    "Na": 22.990, "Mg": 24.305, "Al": 26.982, "Si": 28.085, "P": 30.974,
    "S": 32.06, "Cl": 35.45, "Ar": 39.948, "K": 39.098, "Ca": 40.078,
    "Fe": 55.845, "Cu": 63.546, "Zn": 65.38, "Br": 79.904, "I": 126.90,
}


class FrameConsistencyError(ValueError):
    """The quadratic RMSD form went negative: transform and moments disagree."""


def _check_pos_weights(positions, weights):
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != 3 or positions.shape[0] == 0:
        raise ValueError(f"positions must be a nonempty (n, 3) array, got shape {positions.shape}")
    if weights is None:
        weights = np.ones(positions.shape[0])
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (positions.shape[0],):
        raise ValueError("weights length must match the number of atoms")
    if np.any(weights < 0.0):
        raise ValueError("weights must be non-negative")
    return positions, weights


def center_of_mass(positions, weights=None) -> np.ndarray:
    """Weighted mean (1/W) sum w_i x_i."""
    positions, weights = _check_pos_weights(positions, weights)
    W = weights.sum()
    if W <= 0.0:
        raise ValueError("total weight must be positive")
    return weights @ positions / W


def inertia_tensor(positions, weights=None) -> np.ndarray:
    """Second-moment matrix: diag sum w (y^2 + z^2), ..., off-diag -sum w x y, ...

    Symmetric positive semidefinite; computed in the frame of the given
    coordinates (no implicit centering).
    """
    positions, weights = _check_pos_weights(positions, weights)
    x, y, z = positions[:, 0], positions[:, 1], positions[:, 2]
    Ixx = (weights * (y * y + z * z)).sum()
    Iyy = (weights * (x * x + z * z)).sum()
    Izz = (weights * (x * x + y * y)).sum()
    Ixy = -(weights * x * y).sum()
    Ixz = -(weights * x * z).sum()
    Iyz = -(weights * y * z).sum()
    return np.array([[Ixx, Ixy, Ixz], [Ixy, Iyy, Iyz], [Ixz, Iyz, Izz]])


def rmsd_sq_rigid_com(T: RigidTransform, inertia, W: float) -> float:
    """Squared RMSD |t|^2 + (4/W) v^T I v for a COM-frame transform."""
    if W <= 0.0:
        raise ValueError("total weight must be positive")
    inertia = np.asarray(inertia, dtype=np.float64)
    v = T.q[1:]
    return float(T.t @ T.t + (4.0 / W) * (v @ inertia @ v))


def rmsd_rigid_com(T: RigidTransform, inertia, W: float) -> float:
    """RMSD (angstrom) between a rigid body and its transformed copy.

    Valid when the inertia tensor is computed in the COM-centered frame
    the transform acts in (cross term vanishes).
    """
    return float(np.sqrt(rmsd_sq_rigid_com(T, inertia, W)))


def rmsd_rigid_general(T: RigidTransform, inertia, W: float, c) -> float:
    """RMSD in a general frame: sqrt(|t|^2 + (4/W) v^T I v + 2 t^T (R - E) c).

    ``inertia`` and the center-of-mass offset ``c`` must be computed in
    the same frame the transform acts in. Small negative arguments
    (>= -1e-9) are clamped to zero; anything below that indicates the
    moments and the transform frame disagree.
    """
    if W <= 0.0:
        raise ValueError("total weight must be positive")
    inertia = np.asarray(inertia, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64).reshape(3)
    v = T.q[1:]
    R = quat_to_matrix(T.q)
    arg = float(T.t @ T.t + (4.0 / W) * (v @ inertia @ v) + 2.0 * T.t @ ((R - np.eye(3)) @ c))
    if arg < 0.0:
        if arg < -1e-9:
            raise FrameConsistencyError(
                f"negative squared RMSD ({arg:.3e}): inertia/COM not computed in the transform frame"
            )
        arg = 0.0
    return float(np.sqrt(arg))


@dataclass(frozen=True)
class MoleculeTemplate:
    """Local-frame rigid molecule: COM-centered coordinates plus moments.

    Construct via :meth:`from_positions`, which shifts the input to the
    weighted center of mass and precomputes the total weight and the
    inertia tensor used by the closed-form RMSD kernels.
    """

    positions: np.ndarray
    weights: np.ndarray
    element_labels: tuple
    W: float
    com: np.ndarray
    inertia: np.ndarray

    def __post_init__(self):
        for name in ("positions", "weights", "com", "inertia"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.linalg.norm(self.com) > 1e-9:
            raise ValueError("template coordinates must be centered on the center of mass")

    @classmethod
    def from_positions(cls, positions, weights=None, element_labels=None,
                       mass_weighted: bool = False) -> "MoleculeTemplate":
        positions, weights_arr = _check_pos_weights(positions, weights)
        n = positions.shape[0]
        if element_labels is None:
            element_labels = ("X",) * n
        element_labels = tuple(element_labels)
        if len(element_labels) != n:
            raise ValueError("element_labels length must match the number of atoms")
        if mass_weighted:
            if weights is not None:
                raise ValueError("pass either explicit weights or mass_weighted, not both")
            try:
                weights_arr = np.array([ATOMIC_MASSES[e] for e in element_labels])
            except KeyError as exc:
                raise ValueError(f"no atomic mass tabulated for element {exc}") from exc
        W = float(weights_arr.sum())
        if W <= 0.0:
            raise ValueError("total weight must be positive")
        centered = positions - center_of_mass(positions, weights_arr)
        return cls(
            positions=centered,
            weights=weights_arr,
            element_labels=element_labels,
            W=W,
            com=center_of_mass(centered, weights_arr),
            inertia=inertia_tensor(centered, weights_arr),
        )

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[0]

    def same_molecule(self, other: "MoleculeTemplate", tol: float = 1e-9) -> bool:
        return (
            self.n_atoms == other.n_atoms
            and self.element_labels == other.element_labels
            and bool(np.allclose(self.positions, other.positions, atol=tol))
            and bool(np.allclose(self.weights, other.weights, atol=tol))
        )


def apply_transform(template: MoleculeTemplate, T: RigidTransform) -> np.ndarray:
    """World-frame coordinates R x_i + t of all template atoms."""
    return T.apply(template.positions)


@dataclass(frozen=True)
class Assembly:
    """M placed copies of one rigid molecule template."""

    template: MoleculeTemplate
    transforms: tuple

    def __post_init__(self):
        transforms = tuple(self.transforms)
        if len(transforms) == 0:
            raise ValueError("an assembly needs at least one molecule")
        for T in transforms:
            if not isinstance(T, RigidTransform):
                raise ValueError("transforms must be RigidTransform instances")
        object.__setattr__(self, "transforms", transforms)

    @property
    def M(self) -> int:
        return len(self.transforms)

    def translations(self) -> np.ndarray:
        return np.array([T.t for T in self.transforms])

    def quaternions(self) -> np.ndarray:
        return np.array([T.q for T in self.transforms])

    def replace_transforms(self, transforms) -> "Assembly":
        return Assembly(self.template, tuple(transforms))

    def reorder(self, indices) -> "Assembly":
        return Assembly(self.template, tuple(self.transforms[int(i)] for i in indices))


def local_frame_init(positions, weights=None) -> RigidTransform:
    """Transform taking raw coordinates into the COM-centered principal frame.

    The rotation rows are the principal axes of the inertia tensor,
    ordered by descending eigenvalue. Each of the first two axes is
    flipped so its largest-magnitude component is positive; the third is
    their cross product (right-handed). Near-degenerate eigenvalues
    (gap < 1e-9 * trace) are ordered lexicographically by components so
    the output is deterministic.
    """
    positions, weights = _check_pos_weights(positions, weights)
    com = center_of_mass(positions, weights)
    I = inertia_tensor(positions - com, weights)
    evals, evecs = np.linalg.eigh(I)  # ascending
    order = np.argsort(-evals, kind="stable")
    evals = evals[order]
    axes = evecs[:, order].T  # rows are candidate principal axes
    gap_tol = 1e-9 * max(np.trace(I), 1.0)
    # deterministic ordering inside near-degenerate eigenvalue groups
    start = 0
    for end in range(1, 4):
        if end == 3 or evals[start] - evals[end] > gap_tol:
            if end - start > 1:
                group = axes[start:end]
                group = np.array([_fix_axis_sign(a) for a in group])
                lex = sorted(range(len(group)), key=lambda k: tuple(group[k]))
                axes[start:end] = group[lex]
            start = end
    a0 = _fix_axis_sign(axes[0])
    a1 = _fix_axis_sign(axes[1])
    a1 = a1 - (a1 @ a0) * a0  # re-orthogonalize against rounding
    a1 /= np.linalg.norm(a1)
    a2 = np.cross(a0, a1)
    R = np.stack([a0, a1, a2])
    q = matrix_to_quat(R)
    return RigidTransform(-(R @ com), q)


def _fix_axis_sign(axis):
    k = int(np.argmax(np.abs(axis)))
    return -axis if axis[k] < 0.0 else axis


def register_points(source, target, weights=None):
    """Best rigid transform mapping source points onto target (Kabsch).

    Minimizes the weighted RMSD of R source + t against target over
    rotations and translations; returns (RigidTransform, residual RMSD).
    Point correspondence is positional (row i to row i).
    """
    source, weights = _check_pos_weights(source, weights)
    target, _ = _check_pos_weights(target, weights)
    if source.shape != target.shape:
        raise ValueError("source and target must have the same shape")
    W = weights.sum()
    if W <= 0.0:
        raise ValueError("total weight must be positive")
    cs = weights @ source / W
    ct = weights @ target / W
    P = (source - cs) * weights[:, None]
    Q = target - ct
    H = P.T @ Q
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d])
    R = Vt.T @ D @ U.T
    t = ct - R @ cs
    moved = source @ R.T + t
    residual = float(np.sqrt((weights * ((moved - target) ** 2).sum(axis=1)).sum() / W))
    return RigidTransform(t, matrix_to_quat(R)), residual
