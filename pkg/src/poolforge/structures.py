"""Atomic configurations and the extended-XYZ text format.

A :class:`Structure` is the unit of pool membership: integer species
indices plus Cartesian coordinates in Angstrom. A
:class:`LabeledStructure` adds the regression target, a total energy in
eV and per-atom forces in eV/A.

The text format is a plain extended XYZ:

    line 1: number of atoms N
    line 2: space-separated key=value pairs (``energy=<eV>`` is the one
            this package reads; unknown keys are preserved on read and
            ignored)
    lines 3..N+2: ``species x y z [fx fy fz]``

Species are written as integer indices, not element symbols.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import ValidationError

__all__ = [
    "Structure",
    "LabeledStructure",
    "as_structure",
    "load_xyz",
    "save_xyz",
]


@dataclass(frozen=True)
class Structure:
    """One atomic configuration: species indices and positions (Angstrom)."""

    species: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        species = np.asarray(self.species, dtype=np.int64)
        positions = np.asarray(self.positions, dtype=np.float64)
        if species.ndim != 1 or species.size < 1:
            raise ValidationError("structure must contain at least one atom")
        if np.any(species < 0):
            raise ValidationError("species indices must be non-negative")
        if positions.shape != (species.size, 3):
            raise ValidationError(
                f"positions must have shape ({species.size}, 3), got {positions.shape}"
            )
        if not np.all(np.isfinite(positions)):
            raise ValidationError("positions contain non-finite values")
        object.__setattr__(self, "species", species)
        object.__setattr__(self, "positions", positions)

    @property
    def n_atoms(self) -> int:
        return self.species.size

    def translated(self, shift) -> "Structure":
        return Structure(self.species, self.positions + np.asarray(shift, dtype=np.float64))

    def rotated(self, rotation) -> "Structure":
        rotation = np.asarray(rotation, dtype=np.float64)
        return Structure(self.species, self.positions @ rotation.T)


@dataclass(frozen=True)
class LabeledStructure:
    """A structure with reference total energy (eV) and per-atom forces (eV/A)."""

    structure: Structure
    energy: float
    forces: np.ndarray
    tags: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        forces = np.asarray(self.forces, dtype=np.float64)
        if forces.shape != (self.structure.n_atoms, 3):
            raise ValidationError(
                f"forces must have shape ({self.structure.n_atoms}, 3), got {forces.shape}"
            )
        if not np.all(np.isfinite(forces)) or not np.isfinite(self.energy):
            raise ValidationError("labels contain non-finite values")
        object.__setattr__(self, "energy", float(self.energy))
        object.__setattr__(self, "forces", forces)

    @property
    def n_atoms(self) -> int:
        return self.structure.n_atoms


def as_structure(obj) -> Structure:
    return obj.structure if isinstance(obj, LabeledStructure) else obj


def _parse_comment(line: str) -> dict:
    fields = {}
    for token in line.split():
        if "=" in token:
            key, _, value = token.partition("=")
            fields[key] = value
    return fields


def load_xyz(path):
    """Read frames from an extended-XYZ file.

    Returns a list whose entries are :class:`LabeledStructure` when the
    frame carries both an ``energy=`` field and force columns, and a bare
    :class:`Structure` otherwise.
    """
    frames = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    pos = 0
    frame_no = 0
    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        frame_no += 1
        try:
            n_atoms = int(lines[pos].strip())
        except ValueError as exc:
            raise ValidationError(
                f"{path}:{pos + 1}: expected an atom count, got {lines[pos]!r}"
            ) from exc
        if n_atoms < 1:
            raise ValidationError(f"{path}:{pos + 1}: atom count must be >= 1")
        if len(lines) < pos + 2 + n_atoms:
            raise ValidationError(
                f"{path}:{pos + 1}: truncated frame, expected {n_atoms} atom lines"
            )
        comment = _parse_comment(lines[pos + 1])
        species = np.empty(n_atoms, dtype=np.int64)
        positions = np.empty((n_atoms, 3), dtype=np.float64)
        forces = np.empty((n_atoms, 3), dtype=np.float64)
        have_forces = True
        for i in range(n_atoms):
            lineno = pos + 2 + i
            cols = lines[lineno].split()
            if len(cols) not in (4, 7):
                raise ValidationError(
                    f"{path}:{lineno + 1}: expected 4 or 7 columns, got {len(cols)}"
                )
            try:
                species[i] = int(cols[0])
                positions[i] = [float(c) for c in cols[1:4]]
                if len(cols) == 7:
                    forces[i] = [float(c) for c in cols[4:7]]
                else:
                    have_forces = False
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno + 1}: malformed atom line") from exc
        structure = Structure(species, positions)
        if have_forces and "energy" in comment:
            try:
                energy = float(comment["energy"])
            except ValueError as exc:
                raise ValidationError(
                    f"{path}:{pos + 2}: malformed energy field {comment['energy']!r}"
                ) from exc
            frames.append(LabeledStructure(structure, energy, forces))
        else:
            frames.append(structure)
        pos += 2 + n_atoms
    return frames


def save_xyz(path, frames):
    """Write frames (Structure or LabeledStructure) to an extended-XYZ file."""
    with open(path, "w", encoding="utf-8") as fh:
        for frame in frames:
            labeled = isinstance(frame, LabeledStructure)
            structure = as_structure(frame)
            fh.write(f"{structure.n_atoms}\n")
            fh.write(f"energy={frame.energy!r}\n" if labeled else "\n")
            for i in range(structure.n_atoms):
                cols = [str(int(structure.species[i]))]
                cols += [repr(float(v)) for v in structure.positions[i]]
                if labeled:
                    cols += [repr(float(v)) for v in frame.forces[i]]
                fh.write(" ".join(cols) + "\n")
