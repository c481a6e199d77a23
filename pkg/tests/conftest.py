"""Shared fixtures: random molecules, assemblies, and oracle helpers."""

import itertools

import numpy as np
import pytest

from rigidpack import (
    Assembly,
    MoleculeTemplate,
    RigidTransform,
    local_frame_init,
    quat_mul,
    random_unit_quat,
)
from rigidpack.se3 import quat_exp


def make_template(rng, n=8, scale=1.5, labels=None):
    pts = rng.normal(scale=scale, size=(n, 3))
    return MoleculeTemplate.from_positions(pts, element_labels=labels)


def canonical_template(rng, n=8, scale=1.5, labels=None):
    """Template whose stored coordinates sit in their own principal frame."""
    pts = rng.normal(scale=scale, size=(n, 3))
    frame = local_frame_init(pts)
    return MoleculeTemplate.from_positions(frame.apply(pts), element_labels=labels)


def random_transform(rng, spread=8.0):
    return RigidTransform(rng.uniform(-spread, spread, 3), random_unit_quat(rng))


def make_assembly(rng, template, M, spread=8.0):
    return Assembly(template, tuple(random_transform(rng, spread) for _ in range(M)))


def separated_assembly(rng, template, M, box=10.0, min_sep=4.0):
    """Assembly whose molecule centers keep a minimum pairwise distance."""
    centers = []
    while len(centers) < M:
        c = rng.uniform(-box, box, 3)
        if all(np.linalg.norm(c - o) > min_sep for o in centers):
            centers.append(c)
    return Assembly(template, tuple(
        RigidTransform(c, random_unit_quat(rng)) for c in centers))


def perturb_assembly(rng, assembly, trans_max=5.0, rot_max=np.pi / 3, permute=True):
    """Independently displace every molecule, then shuffle the ordering."""
    moved = []
    for T in assembly.transforms:
        d = rng.normal(size=3)
        d *= rng.uniform(0.0, trans_max) / np.linalg.norm(d)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(0.0, rot_max)
        moved.append(RigidTransform(T.t + d, quat_mul(quat_exp(axis * angle), T.q)))
    order = rng.permutation(assembly.M) if permute else np.arange(assembly.M)
    return Assembly(assembly.template, tuple(moved[i] for i in order))


def recovery_fixture(seed, M=17, n=8):
    """Target assembly with separated centers plus its perturbed copy."""
    rng = np.random.default_rng(seed)
    template = make_template(rng, n=n)
    target = separated_assembly(rng, template, M)
    initial = perturb_assembly(rng, target)
    return initial, target


def brute_force_lsa(C):
    """Enumerate all permutations; first strict improvement wins ties."""
    C = np.asarray(C)
    M = C.shape[0]
    best_perm, best_cost = None, np.inf
    for perm in itertools.permutations(range(M)):
        cost = sum(C[i, perm[i]] for i in range(M))
        if cost < best_cost:
            best_cost, best_perm = cost, perm
    return np.array(best_perm), best_cost


def atomwise_rmsd_sq(a_positions, b_positions):
    d = np.asarray(a_positions) - np.asarray(b_positions)
    return float((d * d).sum() / len(d))


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)
