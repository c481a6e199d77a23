"""Rigid-body molecular assembly toolkit.

Physically grounded packing metrics (packing matching, rigid RMSD),
permutation-invariant losses via exact or entropically relaxed optimal
assignment, straight-line SE(3) interpolation, and a direct-regression
fitter for per-molecule rigid transforms.
"""

from .assignment import TransportPlan, default_reg, lsa_solve, plan_round, sinkhorn
from .fitter import FitConfig, FitResult, fit_assembly, flow_trajectory
from .io import (
    AssemblyFile,
    AssemblyParseError,
    TransformsFile,
    parse_assembly_xyz,
    parse_transforms,
    write_assembly_xyz,
    write_transforms,
)
from .losses import (
    LossValue,
    TransformGradient,
    loss_geom,
    loss_gradient,
    loss_ml,
    loss_rmsd,
    loss_rmsd_parts,
    loss_star,
    loss_under_plan,
    pair_cost_matrix,
    relative_rmsd,
)
from .metrics import (
    MetricReport,
    cost_matrix,
    evaluate_metric,
    metric_star,
    pm_atom,
    pm_center,
    reconstruct_positions,
    rmsd_atom,
)
from .molecule import (
    Assembly,
    FrameConsistencyError,
    MoleculeTemplate,
    apply_transform,
    center_of_mass,
    inertia_tensor,
    local_frame_init,
    register_points,
    rmsd_rigid_com,
    rmsd_rigid_general,
)
from .se3 import (
    RigidTransform,
    canonicalize,
    compose,
    interp_transform,
    inverse,
    lerp,
    quat_conjugate,
    quat_exp,
    quat_from_axis_angle,
    quat_identity,
    quat_inverse,
    quat_mul,
    quat_normalize,
    quat_to_matrix,
    random_unit_quat,
    rotate_vector,
    rotation_angle,
    slerp,
)

__version__ = "0.1.0"
