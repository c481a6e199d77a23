"""Built-in invariant checks behind the ``selftest`` CLI command.

Each check is a small seeded property test of one module contract. They
mirror the package's test suite in miniature so an installed copy can be
validated without pytest.
"""

from __future__ import annotations

import itertools
import tempfile
from pathlib import Path

import numpy as np

from . import io as rio
from .assignment import default_reg, lsa_solve, sinkhorn
from .fitter import flow_trajectory
from .losses import loss_geom, loss_gradient, loss_rmsd, loss_rmsd_parts, loss_star, loss_under_plan
from .metrics import metric_star, pm_atom, reconstruct_positions, rmsd_atom
from .molecule import (
    Assembly,
    MoleculeTemplate,
    inertia_tensor,
    local_frame_init,
    rmsd_rigid_com,
    rmsd_rigid_general,
)
from .se3 import (
    RigidTransform,
    compose,
    inverse,
    quat_exp,
    quat_mul,
    quat_to_matrix,
    random_unit_quat,
    rotate_vector,
    rotation_angle,
    slerp,
)


def _random_transform(rng, scale=5.0):
    return RigidTransform(rng.uniform(-scale, scale, 3), random_unit_quat(rng))


def _random_template(rng, n=None):
    n = n or rng.integers(4, 12)
    return MoleculeTemplate.from_positions(rng.normal(scale=1.5, size=(int(n), 3)))


def _random_assembly(rng, template, M=6, spread=8.0):
    transforms = [RigidTransform(rng.uniform(-spread, spread, 3), random_unit_quat(rng))
                  for _ in range(M)]
    return Assembly(template, tuple(transforms))


def check_rotation_norms(rng):
    for _ in range(100):
        q = random_unit_quat(rng)
        v = rng.normal(size=3) * 10
        if abs(np.linalg.norm(rotate_vector(q, v)) - np.linalg.norm(v)) > 1e-12 * (1 + np.linalg.norm(v)):
            return False
    return True


def check_matrix_homomorphism(rng):
    for _ in range(50):
        q1, q2 = random_unit_quat(rng), random_unit_quat(rng)
        lhs = quat_to_matrix(quat_mul(q1, q2) / np.linalg.norm(quat_mul(q1, q2)))
        rhs = quat_to_matrix(q1) @ quat_to_matrix(q2)
        if np.abs(lhs - rhs).max() > 1e-10:
            return False
    return True


def check_compose_associative(rng):
    pts = rng.normal(size=(100, 3)) * 5
    for _ in range(20):
        T1, T2, T3 = (_random_transform(rng) for _ in range(3))
        a = compose(compose(T3, T2), T1).apply(pts)
        b = compose(T3, compose(T2, T1)).apply(pts)
        if np.abs(a - b).max() > 1e-9:
            return False
    return True


def check_slerp_constant_speed(rng):
    for _ in range(25):
        q0, q1 = random_unit_quat(rng), random_unit_quat(rng)
        total = rotation_angle(quat_mul(np.array([q0[0], -q0[1], -q0[2], -q0[3]]), q1))
        for t in (0.25, 0.5, 0.75):
            qt = slerp(q0, q1, t)
            part = rotation_angle(quat_mul(np.array([q0[0], -q0[1], -q0[2], -q0[3]]), qt))
            if abs(part - t * total) > 1e-9:
                return False
    return True


def check_rigid_rmsd_oracle(rng):
    for _ in range(100):
        tmpl = _random_template(rng)
        T = _random_transform(rng)
        fast = rmsd_rigid_com(T, tmpl.inertia, tmpl.W)
        moved = T.apply(tmpl.positions)
        brute = np.sqrt(((moved - tmpl.positions) ** 2).sum() / tmpl.n_atoms)
        if abs(fast - brute) > 1e-10 * (1 + brute):
            return False
    return True


def check_rmsd_inverse_symmetry(rng):
    for _ in range(100):
        tmpl = _random_template(rng)
        T = _random_transform(rng)
        a = rmsd_rigid_com(T, tmpl.inertia, tmpl.W)
        b = rmsd_rigid_com(inverse(T), tmpl.inertia, tmpl.W)
        if abs(a - b) > 1e-10 * (1 + a):
            return False
    return True


def check_general_kernel_cross_term(rng):
    for _ in range(100):
        pts = rng.normal(scale=1.5, size=(8, 3)) + rng.uniform(-4, 4, 3)
        w = np.ones(8)
        T = _random_transform(rng, scale=3.0)
        c = w @ pts / w.sum()
        I = inertia_tensor(pts, w)
        fast = rmsd_rigid_general(T, I, float(w.sum()), c)
        moved = T.apply(pts)
        brute = np.sqrt(((moved - pts) ** 2).sum() / len(pts))
        if abs(fast - brute) > 1e-10 * (1 + brute):
            return False
    return True


def check_inertia_rotation(rng):
    for _ in range(50):
        pts = rng.normal(size=(10, 3)) * 2
        q = random_unit_quat(rng)
        R = quat_to_matrix(q)
        I = inertia_tensor(pts)
        I_rot = inertia_tensor(pts @ R.T)
        if np.abs(R @ I @ R.T - I_rot).max() > 1e-9 * (1 + np.abs(I).max()):
            return False
    return True


def check_pm_rmsd_bound(rng):
    for _ in range(200):
        n = int(rng.integers(2, 60))
        a = rng.normal(size=(n, 3)) * 5
        b = rng.normal(size=(n, 3)) * 5
        if pm_atom(a, b) ** 2 > 2 * rmsd_atom(a, b) ** 2 + 1e-9:
            return False
    return True


def check_pm_se3_invariance(rng):
    a = rng.normal(size=(40, 3)) * 5
    b = rng.normal(size=(40, 3)) * 5
    base = pm_atom(a, b)
    for _ in range(50):
        T = _random_transform(rng, scale=20.0)
        if abs(pm_atom(T.apply(a), b) - base) > 1e-9 * (1 + base):
            return False
    return True


def check_metric_star_permutation_invariance(rng):
    tmpl = _random_template(rng, n=6)
    gt = _random_assembly(rng, tmpl, M=6)
    pred = _random_assembly(rng, tmpl, M=6)
    base = metric_star("pm_atom", pred, gt, assignment="exact").value
    for _ in range(20):
        perm = rng.permutation(6)
        shuffled = pred.reorder(perm)
        if abs(metric_star("pm_atom", shuffled, gt, assignment="exact").value - base) > 1e-12:
            return False
    return True


def check_lsa_brute_force(rng):
    for M in (2, 3, 4, 5, 6, 7):
        for _ in range(10):
            C = rng.random((M, M))
            sigma, cost = lsa_solve(C)
            best = min(sum(C[i, p[i]] for i in range(M))
                       for p in itertools.permutations(range(M)))
            if abs(cost - best) > 0:
                return False
    return True


def check_lsa_shift_invariance(rng):
    C = rng.random((6, 6))
    sigma, cost = lsa_solve(C)
    C2 = C.copy()
    C2[2, :] += 3.7
    C2[:, 4] += 1.3
    sigma2, cost2 = lsa_solve(C2)
    return np.array_equal(sigma, sigma2) and abs(cost2 - (cost + 3.7 + 1.3)) < 1e-9


def check_sinkhorn_marginals(rng):
    for _ in range(10):
        C = rng.random((9, 9)) * 4
        plan = sinkhorn(C, default_reg(C))
        P = plan.matrix
        if not plan.converged:
            return False
        if max(np.abs(P.sum(0) - 1).max(), np.abs(P.sum(1) - 1).max()) > 1e-6:
            return False
        _, lsa_cost = lsa_solve(C)
        if (P * C).sum() < lsa_cost - 1e-9:
            return False
    return True


def check_geom_se3_invariance(rng):
    tmpl = _random_template(rng, n=5)
    gt = _random_assembly(rng, tmpl, M=5)
    pred = _random_assembly(rng, tmpl, M=5)
    base = loss_geom(pred, gt)
    for _ in range(25):
        T = _random_transform(rng, scale=15.0)
        moved = pred.replace_transforms([compose(T, Ti) for Ti in pred.transforms])
        if abs(loss_geom(moved, gt) - base) > 1e-9:
            return False
    return True


def check_loss_decomposition(rng):
    tmpl = _random_template(rng)
    for _ in range(100):
        Tp, Tg = _random_transform(rng), _random_transform(rng)
        trans, rot = loss_rmsd_parts(Tp, Tg, tmpl)
        if trans < 0 or rot < 0:
            return False
        if abs((trans + rot) - loss_rmsd(Tp, Tg, tmpl)) > 1e-12 * (1 + trans + rot):
            return False
    return True


def check_gradient_finite_difference(rng):
    tmpl = _random_template(rng, n=5)
    gt = _random_assembly(rng, tmpl, M=4)
    pred = _random_assembly(rng, tmpl, M=4)
    for kind in ("ml", "rmsd", "geom"):
        grads = loss_gradient(kind, pred, gt, assignment="none")
        h = 1e-6
        for k in (0, pred.M - 1):
            for axis in range(3):
                for rotational in (False, True):
                    def shifted(sign):
                        Ts = list(pred.transforms)
                        T = Ts[k]
                        if rotational:
                            delta = np.zeros(3)
                            delta[axis] = sign * h
                            Ts[k] = RigidTransform(T.t, quat_mul(quat_exp(delta), T.q))
                        else:
                            t = np.array(T.t)
                            t[axis] += sign * h
                            Ts[k] = RigidTransform(t, T.q)
                        return loss_under_plan(kind, pred.replace_transforms(Ts), gt)
                    fd = (shifted(+1) - shifted(-1)) / (2 * h)
                    an = (grads[k].d_omega if rotational else grads[k].d_t)[axis]
                    if abs(an - fd) > 1e-5 * max(1.0, abs(fd)):
                        return False
    return True


def check_loss_star_bounds(rng):
    tmpl = _random_template(rng, n=5)
    gt = _random_assembly(rng, tmpl, M=6)
    pred = _random_assembly(rng, tmpl, M=6)
    for kind in ("ml", "rmsd", "geom"):
        exact = loss_star(kind, pred, gt, assignment="exact").value
        ident = loss_under_plan(kind, pred, gt)
        soft = loss_star(kind, pred, gt, assignment="sinkhorn").value
        if exact > ident + 1e-12 or soft < exact - 1e-9:
            return False
    return True


def check_trajectory_endpoints(rng):
    tmpl = _random_template(rng, n=5)
    a = _random_assembly(rng, tmpl, M=3)
    b = _random_assembly(rng, tmpl, M=3)
    traj = flow_trajectory(a, b, steps=7)
    first = reconstruct_positions(traj[0]) - reconstruct_positions(a)
    last = reconstruct_positions(traj[-1]) - reconstruct_positions(b)
    return np.abs(first).max() < 1e-9 and np.abs(last).max() < 1e-9


def check_io_round_trip(rng):
    tmpl = MoleculeTemplate.from_positions(rng.normal(scale=1.5, size=(6, 3)),
                                           element_labels=("C", "C", "N", "O", "H", "H"))
    # canonical frame so the parse-side template derivation reproduces it
    frame = local_frame_init(tmpl.positions, tmpl.weights)
    tmpl = MoleculeTemplate.from_positions(frame.apply(tmpl.positions),
                                           element_labels=tmpl.element_labels)
    assembly = _random_assembly(rng, tmpl, M=4)
    with tempfile.TemporaryDirectory() as tmpdir:
        p = Path(tmpdir) / "assembly.xyz"
        rio.write_assembly_xyz(assembly, p)
        back = rio.parse_assembly_xyz(p).assembly
        if np.abs(reconstruct_positions(back) - reconstruct_positions(assembly)).max() > 1e-6:
            return False
        tf = Path(tmpdir) / "transforms.txt"
        rio.write_transforms(assembly.transforms, tf)
        again = Path(tmpdir) / "transforms2.txt"
        rio.write_transforms(rio.parse_transforms(tf).transforms, again)
        return tf.read_text() == again.read_text()


CHECKS = [
    ("se3.rotation_norm_preserved", check_rotation_norms),
    ("se3.matrix_homomorphism", check_matrix_homomorphism),
    ("se3.compose_associative", check_compose_associative),
    ("se3.slerp_constant_speed", check_slerp_constant_speed),
    ("molecule.rigid_rmsd_matches_atom_oracle", check_rigid_rmsd_oracle),
    ("molecule.rmsd_inverse_symmetry", check_rmsd_inverse_symmetry),
    ("molecule.general_kernel_cross_term", check_general_kernel_cross_term),
    ("molecule.inertia_rotation_equivariant", check_inertia_rotation),
    ("metrics.pm_bounded_by_rmsd", check_pm_rmsd_bound),
    ("metrics.pm_se3_invariant", check_pm_se3_invariance),
    ("metrics.star_permutation_invariant", check_metric_star_permutation_invariance),
    ("assignment.lsa_matches_enumeration", check_lsa_brute_force),
    ("assignment.lsa_shift_invariance", check_lsa_shift_invariance),
    ("assignment.sinkhorn_marginals_and_birkhoff", check_sinkhorn_marginals),
    ("losses.geom_se3_invariant", check_geom_se3_invariance),
    ("losses.rmsd_decomposition", check_loss_decomposition),
    ("losses.gradients_match_finite_differences", check_gradient_finite_difference),
    ("losses.star_bounds", check_loss_star_bounds),
    ("fitter.trajectory_endpoints", check_trajectory_endpoints),
    ("io.round_trips", check_io_round_trip),
]


def run_selftest(verbose=True, seed=20240901):
    """Run all invariant checks; returns (passed, failed) counts."""
    passed = failed = 0
    for name, fn in CHECKS:
        rng = np.random.default_rng(seed)
        try:
            ok = bool(fn(rng))
        except Exception as exc:  # a crash is a failure, keep going
            ok = False
            if verbose:
                print(f"[ERROR] {name}: {exc}")
        if ok:
            passed += 1
            if verbose:
                print(f"[PASS] {name}")
        else:
            failed += 1
            if verbose:
                print(f"[FAIL] {name}")
    if verbose:
        print(f"{passed} passed, {failed} failed")
    return passed, failed
