"""Extruded quadrilateral meshes, terrain-following orography and nesting.

Layout conventions used throughout the package:

* Horizontal cells are indexed ``(i, j)`` with ``0 <= i < nx``, ``0 <= j < ny``;
  the column index is ``i * ny + j``. Both directions are periodic.
* Vertex ``(iv, jv)`` sits at ``(iv * dx, jv * dy)``; cell ``(i, j)`` has corners
  ``(i, j), (i+1, j), (i, j+1), (i+1, j+1)`` (indices wrap).
* Layers are indexed ``k`` from the surface, ``0 <= k < Nk``; interface ``k``
  is the bottom of layer ``k``.
* The x-face ``(i, j, k)`` is the east face of cell ``(i, j, k)``, the y-face
  ``(i, j, k)`` its north face and the z-face ``(i, j, k)`` (``0 <= k <= Nk``)
  lies on interface ``k`` of column ``(i, j)``. Faces are owned by the
  lower-indexed cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterator

import numpy as np

FACE_DIRECTIONS = ("x", "y", "z")


@dataclass(frozen=True)
class HorizontalMesh:
    nx: int
    ny: int
    Lx: float
    Ly: float
    periodic: bool = True
    level: int = 0

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"cell counts must be positive, got nx={self.nx}, ny={self.ny}")
        if not (self.Lx > 0 and self.Ly > 0):
            raise ValueError("domain extents must be positive")
        if not self.periodic:
            raise ValueError("only doubly-periodic horizontal meshes are supported")

    @property
    def dx(self) -> float:
        return self.Lx / self.nx

    @property
    def dy(self) -> float:
        return self.Ly / self.ny

    @property
    def ncols(self) -> int:
        return self.nx * self.ny

    def coarsen(self, r: int) -> "HorizontalMesh":
        if r < 2:
            raise ValueError(f"refinement factor must be >= 2, got {r}")
        if self.nx % r or self.ny % r:
            raise ValueError(f"refinement factor {r} does not divide ({self.nx}, {self.ny})")
        return HorizontalMesh(self.nx // r, self.ny // r, self.Lx, self.Ly,
                              self.periodic, self.level - 1)

    def cell_centres(self) -> tuple[np.ndarray, np.ndarray]:
        """Centroid coordinates, each of shape (nx, ny)."""
        x = (np.arange(self.nx) + 0.5) * self.dx
        y = (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(x, y, indexing="ij")

    def vertices(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.arange(self.nx) * self.dx
        y = np.arange(self.ny) * self.dy
        return np.meshgrid(x, y, indexing="ij")


@dataclass(frozen=True)
class VerticalGrid:
    """Interface heights of the flat (orography-free) reference column."""

    z_levels: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z_levels, dtype=float)
        if z.ndim != 1 or z.size < 2:
            raise ValueError("need at least two interface heights")
        if z[0] != 0.0:
            raise ValueError("the first interface must be at z=0")
        if np.any(np.diff(z) <= 0):
            raise ValueError("interface heights must be strictly increasing")
        z.setflags(write=False)
        object.__setattr__(self, "z_levels", z)

    @classmethod
    def uniform(cls, Nk: int, z_top: float) -> "VerticalGrid":
        if Nk < 1:
            raise ValueError(f"need at least one layer, got Nk={Nk}")
        return cls(np.linspace(0.0, z_top, Nk + 1))

    @property
    def Nk(self) -> int:
        return self.z_levels.size - 1

    @property
    def z_top(self) -> float:
        return float(self.z_levels[-1])


@dataclass(frozen=True)
class Orography:
    """Surface height at every vertex of the finest mesh, shape (nx, ny)."""

    surface_height: np.ndarray

    def __post_init__(self):
        h = np.array(self.surface_height, dtype=float)
        if h.ndim != 2:
            raise ValueError("surface height must be a 2-D vertex array")
        if not np.all(np.isfinite(h)):
            raise ValueError("surface height must be finite")
        h.setflags(write=False)
        object.__setattr__(self, "surface_height", h)

    @classmethod
    def flat(cls, horizontal: HorizontalMesh) -> "Orography":
        return cls(np.zeros((horizontal.nx, horizontal.ny)))

    @classmethod
    def from_function(cls, horizontal: HorizontalMesh,
                      h: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "Orography":
        x, y = horizontal.vertices()
        return cls(np.broadcast_to(h(x, y), x.shape))

    @classmethod
    def bump(cls, horizontal: HorizontalMesh, vertex: tuple[int, int], height: float) -> "Orography":
        """Raise a single vertex; every other vertex stays at sea level."""
        h = np.zeros((horizontal.nx, horizontal.ny))
        h[vertex] = height
        return cls(h)

    def terrain_following(self, vertical: VerticalGrid) -> np.ndarray:
        """Vertex heights ``z = zhat + h (1 - zhat / z_top)``, shape (nx, ny, Nk+1)."""
        h = self.surface_height
        if np.any(h < 0) or np.any(h >= vertical.z_top):
            raise ValueError("surface height must satisfy 0 <= h < z_top")
        zhat = vertical.z_levels
        return zhat[None, None, :] + h[:, :, None] * (1.0 - zhat[None, None, :] / vertical.z_top)


def _corners(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Values at the four corners of each cell from a periodic vertex array."""
    a10 = np.roll(a, -1, axis=0)
    a01 = np.roll(a, -1, axis=1)
    a11 = np.roll(a10, -1, axis=1)
    return a, a10, a01, a11


def _volumes(vertex_z: np.ndarray, dx: float, dy: float) -> np.ndarray:
    # vertical edges + bilinear top/bottom: V = dx*dy*(mean corner thickness), exactly
    t = np.diff(vertex_z, axis=2)
    t00, t10, t01, t11 = _corners(t)
    return dx * dy * 0.25 * (t00 + t10 + t01 + t11)


@dataclass(frozen=True)
class ShiftedGeometry:
    """Vertically-shifted twin: interfaces bisect the primary layers."""

    vertex_z: np.ndarray
    cell_volume: np.ndarray

    @property
    def Nk(self) -> int:
        return self.cell_volume.shape[2]


def shifted_geometry(mesh: "ExtrudedMesh") -> ShiftedGeometry:
    z = mesh.vertex_z
    zs = np.concatenate([z[:, :, :1], 0.5 * (z[:, :, 1:] + z[:, :, :-1]), z[:, :, -1:]], axis=2)
    vol = _volumes(zs, mesh.horizontal.dx, mesh.horizontal.dy)
    zs.setflags(write=False)
    vol.setflags(write=False)
    return ShiftedGeometry(zs, vol)


@dataclass(frozen=True, eq=False)
class ExtrudedMesh:
    horizontal: HorizontalMesh
    vertical: VerticalGrid
    vertex_z: np.ndarray

    def __post_init__(self):
        h = self.horizontal
        z = np.array(self.vertex_z, dtype=float)
        if z.shape != (h.nx, h.ny, self.vertical.Nk + 1):
            raise ValueError(f"vertex heights have shape {z.shape}, expected "
                             f"{(h.nx, h.ny, self.vertical.Nk + 1)}")
        if np.any(np.diff(z, axis=2) <= 0):
            raise ValueError("vertex heights must increase upwards in every column")
        z.setflags(write=False)
        object.__setattr__(self, "vertex_z", z)

    @property
    def nx(self) -> int:
        return self.horizontal.nx

    @property
    def ny(self) -> int:
        return self.horizontal.ny

    @property
    def Nk(self) -> int:
        return self.vertical.Nk

    @property
    def ncols(self) -> int:
        return self.horizontal.ncols

    @cached_property
    def cell_volume(self) -> np.ndarray:
        v = _volumes(self.vertex_z, self.horizontal.dx, self.horizontal.dy)
        v.setflags(write=False)
        return v

    @cached_property
    def face_area(self) -> dict[str, np.ndarray]:
        """Face areas keyed by direction; x/y arrays (nx, ny, Nk), z (nx, ny, Nk+1)."""
        dx, dy = self.horizontal.dx, self.horizontal.dy
        t = np.diff(self.vertex_z, axis=2)
        _, t10, t01, t11 = _corners(t)
        ax = dy * 0.5 * (t10 + t11)
        ay = dx * 0.5 * (t01 + t11)
        # magnitude of the vector area 0.5*(d1 x d2); the true area for planar faces
        z00, z10, z01, z11 = _corners(self.vertex_z)
        sx = 0.5 * dy * (z00 + z01 - z10 - z11)
        sy = 0.5 * dx * (z00 + z10 - z01 - z11)
        az = np.sqrt(sx ** 2 + sy ** 2 + (dx * dy) ** 2)
        for a in (ax, ay, az):
            a.setflags(write=False)
        return {"x": ax, "y": ay, "z": az}

    @cached_property
    def shifted(self) -> ShiftedGeometry:
        return shifted_geometry(self)

    def theta_heights(self) -> np.ndarray:
        """Mean height of each interface over the cell corners, shape (nx, ny, Nk+1)."""
        z00, z10, z01, z11 = _corners(self.vertex_z)
        return 0.25 * (z00 + z10 + z01 + z11)

    def dump(self, path) -> None:
        """ASCII debug dump: one ``i j k V`` record per cell."""
        with open(path, "w") as fh:
            for (i, j, k), v in np.ndenumerate(self.cell_volume):
                fh.write(f"{i} {j} {k} {v:.17e}\n")


def cell_volume(mesh: ExtrudedMesh, cell: tuple[int, int, int]) -> float:
    i, j, k = cell
    if not (0 <= i < mesh.nx and 0 <= j < mesh.ny and 0 <= k < mesh.Nk):
        raise IndexError(f"cell {cell} out of range")
    return float(mesh.cell_volume[i, j, k])


def face_area(mesh: ExtrudedMesh, face: tuple[str, int, int, int]) -> float:
    direction, i, j, k = face
    if direction not in FACE_DIRECTIONS:
        raise IndexError(f"unknown face direction {direction!r}")
    top = mesh.Nk + 1 if direction == "z" else mesh.Nk
    if not (0 <= i < mesh.nx and 0 <= j < mesh.ny and 0 <= k < top):
        raise IndexError(f"face {face} out of range")
    return float(mesh.face_area[direction][i, j, k])


@dataclass(frozen=True, eq=False)
class NestingMap:
    """Which fine cells and faces sit inside each coarse cell and face."""

    r: int
    fine: HorizontalMesh
    coarse: HorizontalMesh
    Nk: int

    def _check_coarse(self, I: int, J: int) -> None:
        if not (0 <= I < self.coarse.nx and 0 <= J < self.coarse.ny):
            raise IndexError(f"coarse column {(I, J)} out of range")

    def cells_of(self, I: int, J: int, k: int) -> list[tuple[int, int, int]]:
        self._check_coarse(I, J)
        r = self.r
        return [(r * I + a, r * J + b, k) for a in range(r) for b in range(r)]

    def faces_of(self, direction: str, I: int, J: int, k: int) -> list[tuple[str, int, int, int]]:
        """Fine faces coincident with the coarse face ``(direction, I, J, k)``."""
        self._check_coarse(I, J)
        r = self.r
        if direction == "x":
            return [("x", r * (I + 1) - 1, r * J + b, k) for b in range(r)]
        if direction == "y":
            return [("y", r * I + a, r * (J + 1) - 1, k) for a in range(r)]
        if direction == "z":
            return [("z", r * I + a, r * J + b, k) for a in range(r) for b in range(r)]
        raise ValueError(f"unknown face direction {direction!r}")

    def is_exterior(self, direction: str) -> np.ndarray:
        """Boolean mask over fine faces of one direction, shape (nx, ny)."""
        nx, ny, r = self.fine.nx, self.fine.ny, self.r
        if direction == "x":
            m = ((np.arange(nx) + 1) % r == 0)[:, None]
        elif direction == "y":
            m = ((np.arange(ny) + 1) % r == 0)[None, :]
        elif direction == "z":
            m = np.ones((1, 1), dtype=bool)
        else:
            raise ValueError(f"unknown face direction {direction!r}")
        return np.broadcast_to(m, (nx, ny))

    def interior_faces(self) -> Iterator[tuple[str, int, int, int]]:
        for direction in ("x", "y"):
            mask = self.is_exterior(direction)
            for i, j in zip(*np.nonzero(~mask)):
                for k in range(self.Nk):
                    yield (direction, int(i), int(j), k)

    @cached_property
    def parent_column(self) -> np.ndarray:
        """Coarse column index of every fine column (fine column order)."""
        i, j = np.meshgrid(np.arange(self.fine.nx), np.arange(self.fine.ny), indexing="ij")
        return ((i // self.r) * self.coarse.ny + j // self.r).ravel()


@dataclass(frozen=True, eq=False)
class NestedMeshPair:
    fine: ExtrudedMesh
    coarse: ExtrudedMesh
    r: int
    nesting: NestingMap = field(repr=False)

    @property
    def n_children(self) -> int:
        return self.r * self.r


def build_nested_pair(horizontal: HorizontalMesh, vertical: VerticalGrid, r: int,
                      orography: Orography | None = None) -> NestedMeshPair:
    """Fine/coarse extruded meshes; coarse vertices copy the coincident fine ones."""
    coarse_h = horizontal.coarsen(r)
    if orography is None:
        orography = Orography.flat(horizontal)
    if orography.surface_height.shape != (horizontal.nx, horizontal.ny):
        raise ValueError("orography must give one height per fine-mesh vertex")
    zf = orography.terrain_following(vertical)
    fine = ExtrudedMesh(horizontal, vertical, zf)
    coarse = ExtrudedMesh(coarse_h, vertical, zf[::r, ::r, :])
    nesting = NestingMap(r, horizontal, coarse_h, vertical.Nk)
    return NestedMeshPair(fine, coarse, r, nesting)
