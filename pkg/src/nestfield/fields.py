"""Staggered field containers.

DoFs are stored flat in column-major order (k fastest within a column, columns
in ``i * ny + j`` order). Wind fields concatenate the x-, y- and z-face blocks
in that order, each block ordered the same way.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .mesh import ExtrudedMesh


class LayoutError(ValueError):
    """Fields on different spaces or meshes were combined."""


class Space(str, Enum):
    VU = "Vu"
    VTHETA = "Vtheta"
    VRHO = "Vrho"
    VRHO_SHIFTED = "VrhoShifted"


def levels(space: Space, mesh: ExtrudedMesh) -> int:
    if space is Space.VRHO:
        return mesh.Nk
    if space in (Space.VTHETA, Space.VRHO_SHIFTED):
        return mesh.Nk + 1
    raise LayoutError("wind fields have no single level count")


def dof_count(space: Space, mesh: ExtrudedMesh) -> int:
    if space is Space.VU:
        return mesh.ncols * (3 * mesh.Nk + 1)
    return mesh.ncols * levels(space, mesh)


@dataclass(frozen=True, eq=False)
class Field:
    space: Space
    mesh: ExtrudedMesh
    values: np.ndarray

    def __post_init__(self):
        space = Space(self.space)
        v = np.array(self.values, dtype=float).ravel()
        n = dof_count(space, self.mesh)
        if v.size != n:
            raise LayoutError(f"{space.value} on this mesh needs {n} values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, space: Space, mesh: ExtrudedMesh) -> "Field":
        return cls(space, mesh, np.zeros(dof_count(Space(space), mesh)))

    @classmethod
    def constant(cls, space: Space, mesh: ExtrudedMesh, value: float) -> "Field":
        return cls(space, mesh, np.full(dof_count(Space(space), mesh), float(value)))

    @classmethod
    def from_faces(cls, mesh: ExtrudedMesh, x, y, z) -> "Field":
        """Wind field from per-direction arrays (nx, ny, Nk), (nx, ny, Nk), (nx, ny, Nk+1)."""
        shape_h = (mesh.nx, mesh.ny, mesh.Nk)
        x = np.broadcast_to(np.asarray(x, dtype=float), shape_h)
        y = np.broadcast_to(np.asarray(y, dtype=float), shape_h)
        z = np.broadcast_to(np.asarray(z, dtype=float), (mesh.nx, mesh.ny, mesh.Nk + 1))
        return cls(Space.VU, mesh, np.concatenate([x.ravel(), y.ravel(), z.ravel()]))

    @property
    def levels(self) -> int:
        return levels(self.space, self.mesh)

    @property
    def columns(self) -> np.ndarray:
        """Read-only view of shape (ncols, levels)."""
        return self.values.reshape(self.mesh.ncols, self.levels)

    @property
    def grid(self) -> np.ndarray:
        """Read-only view of shape (nx, ny, levels)."""
        return self.values.reshape(self.mesh.nx, self.mesh.ny, self.levels)

    def faces(self) -> dict[str, np.ndarray]:
        """Per-direction views of a wind field."""
        if self.space is not Space.VU:
            raise LayoutError("faces() is only defined for wind fields")
        m = self.mesh
        n = m.ncols * m.Nk
        return {
            "x": self.values[:n].reshape(m.nx, m.ny, m.Nk),
            "y": self.values[n:2 * n].reshape(m.nx, m.ny, m.Nk),
            "z": self.values[2 * n:].reshape(m.nx, m.ny, m.Nk + 1),
        }

    def with_values(self, values) -> "Field":
        return Field(self.space, self.mesh, values)

    def __add__(self, other):
        return field_algebra(self, other, "add")

    def __sub__(self, other):
        return field_algebra(self, other, "sub")

    def __mul__(self, other):
        if isinstance(other, Field):
            return field_algebra(self, other, "pointwise_mul")
        return field_algebra(self, other, "scale")

    __rmul__ = __mul__

    def __truediv__(self, other):
        return field_algebra(self, other, "pointwise_div")

    def __neg__(self):
        return self.with_values(-self.values)


def check_compatible(a: Field, b: Field) -> None:
    if a.space is not b.space:
        raise LayoutError(f"space mismatch: {a.space.value} vs {b.space.value}")
    if a.mesh is not b.mesh:
        raise LayoutError("fields live on different meshes")


def field_algebra(a: Field, b, op: str) -> Field:
    if op == "scale":
        return a.with_values(float(b) * a.values)
    check_compatible(a, b)
    if op == "add":
        return a.with_values(a.values + b.values)
    if op == "sub":
        return a.with_values(a.values - b.values)
    if op == "pointwise_mul":
        return a.with_values(a.values * b.values)
    if op == "pointwise_div":
        if np.any(np.abs(b.values) <= 1e-300):
            raise ZeroDivisionError("pointwise division by a field with (near-)zero values")
        return a.with_values(a.values / b.values)
    raise ValueError(f"unknown field operation {op!r}")


def cell_volumes(space: Space, mesh: ExtrudedMesh) -> np.ndarray:
    """Flat volume array matching the DoFs of a density-layout field."""
    if space is Space.VRHO:
        return mesh.cell_volume.ravel()
    if space is Space.VRHO_SHIFTED:
        return mesh.shifted.cell_volume.ravel()
    raise LayoutError(f"{space.value} is not a density layout")


def total_mass(rho: Field) -> float:
    """Sum of density times cell volume over the field's own mesh."""
    return float(np.dot(rho.values, cell_volumes(rho.space, rho.mesh)))


def dump_field(f: Field, path) -> None:
    """Write the ASCII dump: a ``space nx ny Nk`` header then one value per line."""
    m = f.mesh
    with open(path, "w") as fh:
        fh.write(f"{f.space.value} {m.nx} {m.ny} {m.Nk}\n")
        fh.writelines(f"{v:.17e}\n" for v in f.values)


def read_field_dump(path, mesh: ExtrudedMesh) -> Field:
    with open(path) as fh:
        header = fh.readline().split()
        values = np.array([float(line) for line in fh if line.strip()])
    space, nx, ny, Nk = Space(header[0]), *map(int, header[1:4])
    if (nx, ny, Nk) != (mesh.nx, mesh.ny, mesh.Nk):
        raise LayoutError(f"dump is for a {nx}x{ny}x{Nk} mesh")
    return Field(space, mesh, values)
