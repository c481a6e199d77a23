"""On-disk formats for assemblies and transform sets.

Assembly files are extended XYZ:

    line 1:   total atom count
    line 2:   rigidpack M=<M> units=angstrom [key=value ...]
    then one line per atom: ``element x y z mol_id``

Atoms are grouped by ascending mol_id with identical element order and
within-molecule atom order in every block; coordinates carry 9 decimal
digits. On parse, the template is derived from molecule 0 (COM-centered,
principal-axes frame) and each block's transform is recovered by rigid
registration onto that template; a registration residual above 1e-3
angstrom RMSD means the blocks are not copies of one rigid molecule and
is reported as a parse error.

Transform files:

    line 1:   rigidpack-transforms M=<M>
    then one line per molecule: ``mol_id tx ty tz qs qx qy qz``

Quaternions are written canonicalized (scalar part non-negative) with
round-trip-exact decimal representations.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .molecule import Assembly, MoleculeTemplate, apply_transform, local_frame_init, register_points
from .se3 import RigidTransform, canonicalize, quat_norm, quat_normalize

REGISTRATION_TOL = 1e-3  # angstrom RMSD


class AssemblyParseError(ValueError):
    """Malformed assembly or transforms file; the message names the spot."""


@dataclass(frozen=True)
class AssemblyFile:
    path: str
    assembly: Assembly
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TransformsFile:
    path: str
    transforms: tuple


def _parse_header_fields(line: str, path, lineno: int):
    fields = {}
    for token in line.split()[1:]:
        if "=" not in token:
            raise AssemblyParseError(f"{path}:{lineno}: malformed key=value token {token!r}")
        key, value = token.split("=", 1)
        fields[key] = value
    return fields


def parse_assembly_xyz(path) -> AssemblyFile:
    """Read an assembly file; returns the parsed assembly plus metadata."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if len(lines) < 2:
        raise AssemblyParseError(f"{path}: file needs a count line and a header line")
    try:
        n_total = int(lines[0].strip())
    except ValueError:
        raise AssemblyParseError(f"{path}:1: atom count is not an integer: {lines[0]!r}") from None
    header = lines[1]
    if not header.startswith("rigidpack"):
        raise AssemblyParseError(f"{path}:2: header must start with 'rigidpack'")
    meta = _parse_header_fields(header, path, 2)
    if "M" not in meta:
        raise AssemblyParseError(f"{path}:2: header is missing the molecule count M=<int>")
    try:
        M = int(meta["M"])
    except ValueError:
        raise AssemblyParseError(f"{path}:2: M must be an integer, got {meta['M']!r}") from None
    if M < 1:
        raise AssemblyParseError(f"{path}:2: M must be at least 1")

    atom_lines = [(i + 3, l) for i, l in enumerate(lines[2:]) if l.strip()]
    if len(atom_lines) != n_total:
        raise AssemblyParseError(
            f"{path}:1: count line says {n_total} atoms but file has {len(atom_lines)}")
    if n_total % M != 0:
        raise AssemblyParseError(f"{path}: {n_total} atoms cannot split into {M} equal molecules")
    n = n_total // M

    elements, coords, mol_ids = [], [], []
    for lineno, raw in atom_lines:
        parts = raw.split()
        if len(parts) != 5:
            raise AssemblyParseError(
                f"{path}:{lineno}: expected 'element x y z mol_id', got {raw!r}")
        elements.append(parts[0])
        try:
            coords.append([float(parts[1]), float(parts[2]), float(parts[3])])
        except ValueError:
            raise AssemblyParseError(f"{path}:{lineno}: non-numeric coordinate in {raw!r}") from None
        try:
            mol_ids.append(int(parts[4]))
        except ValueError:
            raise AssemblyParseError(f"{path}:{lineno}: non-integer mol_id in {raw!r}") from None

    expected_ids = [k for k in range(M) for _ in range(n)]
    if mol_ids != expected_ids:
        raise AssemblyParseError(
            f"{path}: atoms must be grouped by ascending mol_id 0..{M - 1} "
            f"with {n} atoms per molecule")

    coords = np.asarray(coords)
    block_elements = elements[:n]
    for k in range(1, M):
        if elements[k * n:(k + 1) * n] != block_elements:
            raise AssemblyParseError(
                f"{path}: molecule {k} has a different element sequence from molecule 0")

    frame = local_frame_init(coords[:n])
    template = MoleculeTemplate.from_positions(frame.apply(coords[:n]),
                                               element_labels=block_elements)
    transforms = []
    for k in range(M):
        block = coords[k * n:(k + 1) * n]
        T, residual = register_points(template.positions, block)
        if residual >= REGISTRATION_TOL:
            raise AssemblyParseError(
                f"{path}: molecule {k} deviates from the rigid template by "
                f"{residual:.3g} angstrom RMSD (limit {REGISTRATION_TOL:g}); "
                f"blocks must be copies of one rigid molecule")
        transforms.append(T)
    assembly = Assembly(template, tuple(transforms))
    metadata = {k: v for k, v in meta.items() if k != "M"}
    return AssemblyFile(path=str(path), assembly=assembly, metadata=metadata)


def write_assembly_xyz(assembly: Assembly, path, metadata: dict | None = None):
    """Write an assembly; deterministic output, 9 decimal digits per coordinate."""
    path = Path(path)
    template = assembly.template
    n = template.n_atoms
    extra = ""
    if metadata:
        items = sorted((str(k), str(v)) for k, v in metadata.items() if k not in ("M", "units"))
        for k, v in items:
            if any(c.isspace() for c in k + v) or "=" in k:
                raise ValueError(f"metadata entries may not contain spaces or '=': {k}={v}")
        extra = "".join(f" {k}={v}" for k, v in items)
    out = [str(n * assembly.M), f"rigidpack M={assembly.M} units=angstrom{extra}"]
    for mol_id, T in enumerate(assembly.transforms):
        world = apply_transform(template, T)
        for e, xyz in zip(template.element_labels, world):
            out.append(f"{e} {xyz[0]:.9f} {xyz[1]:.9f} {xyz[2]:.9f} {mol_id}")
    path.write_text("\n".join(out) + "\n")


def parse_transforms(path) -> TransformsFile:
    """Read a transforms file; validates ids and quaternion norms.

    Quaternion norms are accepted as unit within 1e-6, renormalized with
    a warning when within 1e-3, and rejected beyond that.
    """
    path = Path(path)
    lines = [l for l in path.read_text().splitlines() if l.strip()]
    if not lines:
        raise AssemblyParseError(f"{path}: empty transforms file")
    header = lines[0]
    if not header.startswith("rigidpack-transforms"):
        raise AssemblyParseError(f"{path}:1: header must start with 'rigidpack-transforms'")
    meta = _parse_header_fields(header, path, 1)
    try:
        M = int(meta.get("M", ""))
    except ValueError:
        raise AssemblyParseError(f"{path}:1: header is missing M=<int>") from None
    if len(lines) - 1 != M:
        raise AssemblyParseError(f"{path}: header says M={M} but file has {len(lines) - 1} records")

    records = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        parts = raw.split()
        if len(parts) != 8:
            raise AssemblyParseError(
                f"{path}:{lineno}: expected 'mol_id tx ty tz qs qx qy qz', got {raw!r}")
        try:
            mol_id = int(parts[0])
            values = [float(p) for p in parts[1:]]
        except ValueError:
            raise AssemblyParseError(f"{path}:{lineno}: non-numeric field in {raw!r}") from None
        if mol_id in records:
            raise AssemblyParseError(f"{path}:{lineno}: duplicate mol_id {mol_id}")
        t = np.array(values[:3])
        q = np.array(values[3:])
        dev = abs(float(quat_norm(q)) - 1.0)
        if dev > 1e-3:
            raise AssemblyParseError(
                f"{path}:{lineno}: quaternion norm deviates from 1 by {dev:.3g} (limit 1e-3)")
        if dev > 1e-6:
            warnings.warn(f"{path}:{lineno}: renormalizing quaternion with norm deviation {dev:.3g}")
        if abs(float((q * q).sum()) - 1.0) > 1e-12:
            q = quat_normalize(q)
        records[mol_id] = RigidTransform(t, q)
    if sorted(records) != list(range(M)):
        raise AssemblyParseError(f"{path}: mol_ids must be exactly 0..{M - 1}, got {sorted(records)}")
    return TransformsFile(path=str(path), transforms=tuple(records[k] for k in range(M)))


def write_transforms(transforms, path):
    """Write transforms with canonicalized quaternions; byte-stable round trip."""
    path = Path(path)
    transforms = tuple(transforms)
    out = [f"rigidpack-transforms M={len(transforms)}"]
    for mol_id, T in enumerate(transforms):
        if not isinstance(T, RigidTransform):
            raise ValueError("write_transforms expects RigidTransform instances")
        q = canonicalize(quat_normalize(T.q))
        nums = " ".join(repr(float(v)) for v in (*T.t, *q))
        out.append(f"{mol_id} {nums}")
    path.write_text("\n".join(out) + "\n")
