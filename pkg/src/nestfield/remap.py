"""Restriction, identification, reconstruction and prolongation between nested meshes.

Scalar prolongations share one structure::

    B[x] = R[x] - I[A[R[x]]] + I[x]

so that ``A[B[x]] == x`` whenever ``A[I[x]] == x``. The reconstruction ``R`` sets
the accuracy; the other two terms restore reversibility.

Moisture mixing ratios live on theta points. They are mapped by converting to a
moisture density on the vertically-shifted mesh (shift operators ``Q`` for
density and ``M`` for mixing ratio), mapping that density, and converting back.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .fields import Field, LayoutError, Space, check_compatible
from .mesh import ExtrudedMesh, NestedMeshPair


def _block_sum(a: np.ndarray, r: int) -> np.ndarray:
    nx, ny, L = a.shape
    return a.reshape(nx // r, r, ny // r, r, L).sum(axis=(1, 3))


def _block_max(a: np.ndarray, r: int) -> np.ndarray:
    nx, ny, L = a.shape
    return a.reshape(nx // r, r, ny // r, r, L).max(axis=(1, 3))


def _expand(a: np.ndarray, r: int) -> np.ndarray:
    return np.repeat(np.repeat(a, r, axis=0), r, axis=1)


def reconstruction_matrix(pair: NestedMeshPair) -> sp.csr_matrix:
    """Linear reconstruction weights, fine columns x coarse columns.

    Each fine column evaluates the least-squares plane through the 3x3 block of
    coarse columns centred on its parent, at the fine centroid. Rows sum to one.
    """
    r = pair.r
    NX, NY = pair.coarse.nx, pair.coarse.ny
    nx, ny = pair.fine.nx, pair.fine.ny
    offsets = [(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1)]
    design = np.array([[1.0, a, b] for a, b in offsets])
    fit = np.linalg.pinv(design)  # (3, 9)

    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    i, j = i.ravel(), j.ravel()
    # fine centroid offset from the parent centroid, in coarse-cell units
    xi = ((i % r) + 0.5) / r - 0.5
    eta = ((j % r) + 0.5) / r - 0.5
    weights = np.stack([np.ones_like(xi), xi, eta], axis=1) @ fit  # (nfine, 9)

    rows = np.repeat(i * ny + j, len(offsets))
    I, J = i // r, j // r
    cols = np.stack([((I + a) % NX) * NY + (J + b) % NY for a, b in offsets], axis=1).ravel()
    # duplicate (row, col) pairs on tiny coarse meshes are summed by the conversion
    return sp.coo_matrix((weights.ravel(), (rows, cols)), shape=(nx * ny, NX * NY)).tocsr()


@dataclass(eq=False)
class OperatorWeights:
    """Precomputed coefficients for every inter-mesh operator of a mesh pair.

    ``density_restrict[space]`` holds ``V_fine / V_coarse(parent)`` and
    ``density_identify[space]`` holds ``V_coarse / (N_j V_fine)``, both with the
    fine grid shape. ``area_ratio[d]`` holds ``A_coarse / (N_g A_fine)`` on
    the exterior fine faces of direction ``d``.
    """

    reconstruction: sp.csr_matrix
    density_restrict: dict[Space, np.ndarray]
    density_identify: dict[Space, np.ndarray]
    fine_area: dict[str, np.ndarray]
    coarse_area: dict[str, np.ndarray]
    area_ratio: dict[str, np.ndarray] = field(default_factory=dict)


def build_weights(pair: NestedMeshPair) -> OperatorWeights:
    r, n = pair.r, pair.n_children
    restrict, identify = {}, {}
    for space, vf, vc in (
        (Space.VRHO, pair.fine.cell_volume, pair.coarse.cell_volume),
        (Space.VRHO_SHIFTED, pair.fine.shifted.cell_volume, pair.coarse.shifted.cell_volume),
    ):
        vc_f = _expand(vc, r)
        restrict[space] = vf / vc_f
        identify[space] = vc_f / (n * vf)
    af, ac = pair.fine.face_area, pair.coarse.face_area
    ratio = {
        "x": np.repeat(ac["x"], r, axis=1) / (r * af["x"][r - 1::r]),
        "y": np.repeat(ac["y"], r, axis=0) / (r * af["y"][:, r - 1::r]),
        "z": _expand(ac["z"], r) / (n * af["z"]),
    }
    return OperatorWeights(reconstruction_matrix(pair), restrict, identify, af, ac, ratio)


# ---------------------------------------------------------------------------
# vertical shift operators (act on one mesh)

def _require_moisture_levels(mesh: ExtrudedMesh) -> None:
    if mesh.Nk < 2:
        raise ValueError("mixing-ratio shift operators need at least two layers")


def shift_density(rho: Field) -> Field:
    """Q: cell-centred density to the vertically-shifted mesh, column mass preserved."""
    if rho.space is not Space.VRHO:
        raise LayoutError(f"shift_density expects Vrho, got {rho.space.value}")
    mesh = rho.mesh
    mass = rho.grid * mesh.cell_volume
    vs = mesh.shifted.cell_volume
    half = np.zeros(vs.shape)
    half[:, :, :-1] += mass
    half[:, :, 1:] += mass
    return Field(Space.VRHO_SHIFTED, mesh, half / (2.0 * vs))


def shift_mixing_ratio(m: Field) -> Field:
    """M: theta-point mixing ratio to shifted cells; end cells take two-point averages."""
    if m.space is not Space.VTHETA:
        raise LayoutError(f"shift_mixing_ratio expects Vtheta, got {m.space.value}")
    _require_moisture_levels(m.mesh)
    g = m.grid.copy()
    g[:, :, 0] = 0.5 * (m.grid[:, :, 0] + m.grid[:, :, 1])
    g[:, :, -1] = 0.5 * (m.grid[:, :, -2] + m.grid[:, :, -1])
    return Field(Space.VRHO_SHIFTED, m.mesh, g)


def unshift_mixing_ratio(mt: Field, clip: bool = True) -> Field:
    """M^-1: inverse of :func:`shift_mixing_ratio`.

    End values come from linear extrapolation through the two nearest shifted
    values. With ``clip`` the extrapolated end values are floored at zero, which
    is right for mixing ratios and wrong for increments.
    """
    if mt.space is not Space.VRHO_SHIFTED:
        raise LayoutError(f"unshift_mixing_ratio expects VrhoShifted, got {mt.space.value}")
    _require_moisture_levels(mt.mesh)
    g = mt.grid.copy()
    g[:, :, 0] = 2.0 * mt.grid[:, :, 0] - mt.grid[:, :, 1]
    g[:, :, -1] = 2.0 * mt.grid[:, :, -1] - mt.grid[:, :, -2]
    m = Field(Space.VTHETA, mt.mesh, g)
    return clip_end_levels(m)[0] if clip else m


def clip_end_levels(m: Field) -> tuple[Field, int]:
    """Floor the bottom and top theta levels at zero; also return how many values moved."""
    g = m.grid.copy()
    ends = g[:, :, [0, -1]]
    count = int(np.count_nonzero(ends < 0))
    if count:
        g[:, :, [0, -1]] = np.maximum(ends, 0.0)
    return m.with_values(g), count


def tie_boundary_levels(lam: Field) -> Field:
    """Share one positivity factor between the two bottom and the two top theta levels.

    M mixes those pairs into a single shifted cell, so a factor that differs
    within a pair would leak moist mass and break reversibility there. Taking
    the larger factor keeps every blended value non-negative.
    """
    g = lam.grid.copy()
    bottom = np.maximum(g[:, :, 0], g[:, :, 1])
    top = np.maximum(g[:, :, -2], g[:, :, -1])
    g[:, :, 0] = g[:, :, 1] = bottom
    g[:, :, -2] = g[:, :, -1] = top
    return lam.with_values(g)


def moist_column_mass(m: Field, rho_d: Field) -> np.ndarray:
    """Moist mass per column on the shifted mesh, ``sum_k M[m] Q[rho_d] V~``; shape (nx, ny)."""
    if m.space is not Space.VTHETA or rho_d.space is not Space.VRHO or m.mesh is not rho_d.mesh:
        raise LayoutError("moist mass needs a Vtheta mixing ratio and a Vrho density on one mesh")
    moist = shift_mixing_ratio(m) * shift_density(rho_d)
    return (moist.grid * m.mesh.shifted.cell_volume).sum(axis=2)


@dataclass(frozen=True, eq=False)
class DryDensityPair:
    """Dry density on both meshes of a pair, with ``A_rho[fine] == coarse``."""

    fine: Field
    coarse: Field

    def __post_init__(self):
        for rho in (self.fine, self.coarse):
            if rho.space is not Space.VRHO:
                raise LayoutError("dry density must be a Vrho field")
            if np.any(rho.values <= 0):
                raise ValueError("dry density must be strictly positive")

    @cached_property
    def fine_shifted(self) -> Field:
        return shift_density(self.fine)

    @cached_property
    def coarse_shifted(self) -> Field:
        return shift_density(self.coarse)


class Remapper:
    """All inter-mesh operators for one nested mesh pair.

    Operators are pure; the weights are built once and may be shared.
    """

    def __init__(self, pair: NestedMeshPair, weights: OperatorWeights | None = None):
        self.pair = pair
        self.fine = pair.fine
        self.coarse = pair.coarse
        self.r = pair.r
        self.weights = weights if weights is not None else build_weights(pair)

    # -- layout checks ------------------------------------------------------

    def _expect(self, f: Field, mesh: ExtrudedMesh, *spaces: Space) -> None:
        if f.mesh is not mesh:
            which = "fine" if mesh is self.fine else "coarse"
            raise LayoutError(f"expected a field on the {which} mesh of this pair")
        if f.space not in spaces:
            names = ", ".join(s.value for s in spaces)
            raise LayoutError(f"expected one of {names}, got {f.space.value}")

    # -- Pi / theta ---------------------------------------------------------

    def restrict_scalar(self, f: Field) -> Field:
        """Arithmetic mean of the fine values in each coarse cell, level by level."""
        self._expect(f, self.fine, Space.VRHO, Space.VTHETA)
        return Field(f.space, self.coarse, _block_sum(f.grid, self.r) / self.pair.n_children)

    def identify_scalar(self, f: Field) -> Field:
        self._expect(f, self.coarse, Space.VRHO, Space.VTHETA)
        return Field(f.space, self.fine, _expand(f.grid, self.r))

    def reconstruct_scalar(self, f: Field) -> Field:
        self._expect(f, self.coarse, Space.VRHO, Space.VTHETA)
        return Field(f.space, self.fine, self.weights.reconstruction @ f.columns)

    def prolong_scalar(self, f: Field) -> Field:
        rec = self.reconstruct_scalar(f)
        return rec - self.identify_scalar(self.restrict_scalar(rec)) + self.identify_scalar(f)

    # -- density ------------------------------------------------------------

    def restrict_density(self, rho: Field) -> Field:
        """Volume-weighted mean, so coarse-cell mass equals the summed fine mass."""
        self._expect(rho, self.fine, Space.VRHO, Space.VRHO_SHIFTED)
        w = self.weights.density_restrict[rho.space]
        return Field(rho.space, self.coarse, _block_sum(w * rho.grid, self.r))

    def identify_density(self, rho: Field) -> Field:
        self._expect(rho, self.coarse, Space.VRHO, Space.VRHO_SHIFTED)
        w = self.weights.density_identify[rho.space]
        return Field(rho.space, self.fine, w * _expand(rho.grid, self.r))

    def prolong_density(self, rho: Field) -> Field:
        self._expect(rho, self.coarse, Space.VRHO)
        rec = self.reconstruct_scalar(rho)
        return rec - self.identify_density(self.restrict_density(rec)) + self.identify_density(rho)

    # -- wind ---------------------------------------------------------------

    def restrict_wind(self, u: Field) -> Field:
        """Area-weighted mean over the fine faces coincident with each coarse face."""
        self._expect(u, self.fine, Space.VU)
        r, fu = self.r, u.faces()
        af, ac = self.weights.fine_area, self.weights.coarse_area
        fx = (fu["x"] * af["x"])[r - 1::r]
        fy = (fu["y"] * af["y"])[:, r - 1::r]
        NX, NY, Nk = ac["x"].shape
        x = fx.reshape(NX, NY, r, Nk).sum(axis=2) / ac["x"]
        y = fy.reshape(NX, r, NY, Nk).sum(axis=1) / ac["y"]
        z = _block_sum(fu["z"] * af["z"], r) / ac["z"]
        return Field.from_faces(self.coarse, x, y, z)

    def prolong_wind(self, u: Field) -> Field:
        """Flux-preserving on exterior fine faces, linear in the normal direction inside."""
        self._expect(u, self.coarse, Space.VU)
        r, cu, ratio = self.r, u.faces(), self.weights.area_ratio
        nx, ny = self.fine.nx, self.fine.ny
        NX, NY = self.coarse.nx, self.coarse.ny
        I, J = np.arange(nx) // r, np.arange(ny) // r
        s_x = (((np.arange(nx) + 1) % r) / r)[:, None, None]
        s_y = (((np.arange(ny) + 1) % r) / r)[None, :, None]

        east = cu["x"][I][:, J]
        west = cu["x"][(I - 1) % NX][:, J]
        x = (1.0 - s_x) * west + s_x * east
        x[r - 1::r] = np.repeat(cu["x"], r, axis=1) * ratio["x"]

        north = cu["y"][I][:, J]
        south = cu["y"][I][:, (J - 1) % NY]
        y = (1.0 - s_y) * south + s_y * north
        y[:, r - 1::r] = np.repeat(cu["y"], r, axis=0) * ratio["y"]

        z = _expand(cu["z"], r) * ratio["z"]
        return Field.from_faces(self.fine, x, y, z)

    # -- moisture -----------------------------------------------------------

    def density_pair_from_coarse(self, rho: Field) -> DryDensityPair:
        """Fine dry density obtained by prolongation (physics on the finer mesh)."""
        return DryDensityPair(self.prolong_density(rho), rho)

    def density_pair_from_fine(self, rho: Field) -> DryDensityPair:
        """Coarse dry density obtained by restriction (physics on the coarser mesh)."""
        return DryDensityPair(rho, self.restrict_density(rho))

    def _check_pair(self, dens: DryDensityPair) -> None:
        self._expect(dens.fine, self.fine, Space.VRHO)
        self._expect(dens.coarse, self.coarse, Space.VRHO)

    def restrict_mixing_ratio(self, m: Field, dens: DryDensityPair, clip: bool = True) -> Field:
        """A_m: restrict the shifted moisture density, divide by the restricted dry density."""
        self._expect(m, self.fine, Space.VTHETA)
        self._check_pair(dens)
        moist = shift_mixing_ratio(m) * dens.fine_shifted
        return unshift_mixing_ratio(self.restrict_density(moist) / dens.coarse_shifted, clip)

    def identify_mixing_ratio(self, m: Field, dens: DryDensityPair, clip: bool = True) -> Field:
        """I_m: identify the shifted moisture density, divide by the fine dry density."""
        self._expect(m, self.coarse, Space.VTHETA)
        self._check_pair(dens)
        moist = shift_mixing_ratio(m) * dens.coarse_shifted
        return unshift_mixing_ratio(self.identify_density(moist) / dens.fine_shifted, clip)

    def prolong_mixing_ratio_unlimited(self, m: Field, dens: DryDensityPair) -> Field:
        """B_m-dagger, linear and reversible but not sign-preserving."""
        rec = self.reconstruct_scalar(m)
        back = self.restrict_mixing_ratio(rec, dens, clip=False)
        return (rec - self.identify_mixing_ratio(back, dens, clip=False)
                + self.identify_mixing_ratio(m, dens, clip=False))

    def compute_lambda(self, m_minus: Field, m_plus: Field) -> Field:
        """Smallest per-coarse-cell blending factor that makes every child non-negative."""
        self._expect(m_minus, self.fine, Space.VTHETA)
        check_compatible(m_minus, m_plus)
        mm, mp = m_minus.grid, m_plus.grid
        if np.any(mp < 0):
            raise ValueError("the guaranteed-positive field has negative values")
        neg = mm < 0
        denom = mp - mm
        if np.any(neg & (denom <= 0)):
            raise ValueError("degenerate positivity factor: m_plus == m_minus < 0")
        ratio = np.zeros_like(mm)
        ratio[neg] = -mm[neg] / denom[neg]
        return Field(Space.VTHETA, self.coarse, _block_max(ratio, self.r))

    def blend(self, m_minus: Field, m_plus: Field, lam: Field) -> Field:
        """(1 - lambda) m_minus + lambda m_plus, with the parent's lambda for every child."""
        check_compatible(m_minus, m_plus)
        self._expect(m_minus, self.fine, Space.VTHETA)
        self._expect(lam, self.coarse, Space.VTHETA)
        lf = _expand(lam.grid, self.r)
        return m_minus.with_values((1.0 - lf) * m_minus.grid + lf * m_plus.grid)

    def shared_lambda(self, minus: Mapping[str, Field], plus: Mapping[str, Field]) -> Field:
        """One positivity factor for all species: the per-cell maximum, tied at the boundaries."""
        lam = np.zeros(self.coarse.ncols * (self.coarse.Nk + 1))
        for name in minus:
            lam = np.maximum(lam, self.compute_lambda(minus[name], plus[name]).values)
        return tie_boundary_levels(Field(Space.VTHETA, self.coarse, lam))

    def prolong_mixing_ratios(self, species: Mapping[str, Field],
                              dens: DryDensityPair) -> tuple[dict[str, Field], Field]:
        """B_m for several species sharing one positivity factor.

        Returns the prolonged fields and the factor actually applied.
        """
        minus = {n: self.prolong_mixing_ratio_unlimited(m, dens) for n, m in species.items()}
        plus = {n: self.identify_mixing_ratio(m, dens) for n, m in species.items()}
        lam = self.shared_lambda(minus, plus)
        return {n: self.blend(minus[n], plus[n], lam) for n in species}, lam

    def prolong_mixing_ratio(self, m: Field, dens: DryDensityPair) -> Field:
        out, _ = self.prolong_mixing_ratios({"m": m}, dens)
        return out["m"]
