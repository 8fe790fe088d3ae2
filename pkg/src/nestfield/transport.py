"""Flux-form transport of dry density (fine mesh) and tracers (coarse mesh).

Dry density and tracer densities both advance in two-time-level form::

    rho_d^{n+1} = rho_d^n - dt div(F_d)
    rhoY^{n+1}  = rhoY^n  - dt div(flux_op[aY, A_u[F_d]])

where ``F_d`` is the time-mean fine mass flux actually used over the step. Since
``A_rho[div F] == div(A_u[F])`` and ``flux_op[C, F] == C F``, a constant tracer
mixing ratio stays constant to round-off while tracer mass is conserved.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from .fields import Field, LayoutError, Space, check_compatible, total_mass
from .remap import Remapper, shift_density

SCHEMES = ("upwind1", "linear-upwind2")

WindFunction = Callable[[float], Field]


class CFLError(ValueError):
    """Courant number exceeds what the configured substepping allows."""


@dataclass(frozen=True)
class FluxOperatorConfig:
    scheme: str = "upwind1"
    substeps: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown flux scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.substeps < 1:
            raise ValueError("substeps must be a positive integer")


# ---------------------------------------------------------------------------
# array kernels, shared by the primary and shifted meshes

def net_outflow(phi: Mapping[str, np.ndarray]) -> np.ndarray:
    """Sum of outward flux integrals per cell. x/y are periodic east/north faces."""
    return (phi["x"] - np.roll(phi["x"], 1, axis=0)
            + phi["y"] - np.roll(phi["y"], 1, axis=1)
            + phi["z"][:, :, 1:] - phi["z"][:, :, :-1])


def _horizontal_face_values(a, flow, axis, scheme):
    up_pos, up_neg = a, np.roll(a, -1, axis=axis)
    if scheme == "upwind1":
        return np.where(flow >= 0, up_pos, up_neg)
    behind = np.roll(a, 1, axis=axis)
    ahead2 = np.roll(a, -2, axis=axis)
    pos = up_pos + 0.25 * (up_neg - behind)
    neg = up_neg + 0.25 * (up_pos - ahead2)
    return np.where(flow >= 0, pos, neg)


def _vertical_face_values(a, flow, scheme):
    L = a.shape[2]
    out = np.empty(a.shape[:2] + (L + 1,))
    out[:, :, 0] = a[:, :, 0]
    out[:, :, L] = a[:, :, L - 1]
    if L == 1:
        return out
    below, above = a[:, :, :-1], a[:, :, 1:]
    inner = flow[:, :, 1:L]
    pos, neg = below.copy(), above.copy()
    if scheme == "linear-upwind2" and L >= 3:
        # upstream-biased slope where a second upstream cell exists
        pos[:, :, 1:] += 0.25 * (a[:, :, 2:] - a[:, :, :-2])
        neg[:, :, :-1] += 0.25 * (a[:, :, :-2] - a[:, :, 2:])
    out[:, :, 1:L] = np.where(inner >= 0, pos, neg)
    return out


def face_values(a: np.ndarray, flow: Mapping[str, np.ndarray], scheme: str) -> dict[str, np.ndarray]:
    """Upstream-biased face values of a cell field; a constant field gives the constant."""
    return {
        "x": _horizontal_face_values(a, flow["x"], 0, scheme),
        "y": _horizontal_face_values(a, flow["y"], 1, scheme),
        "z": _vertical_face_values(a, flow["z"], scheme),
    }


def flux_integrals(F: Field) -> dict[str, np.ndarray]:
    area = F.mesh.face_area
    return {d: v * area[d] for d, v in F.faces().items()}


def divergence(F: Field) -> Field:
    """Cell divergence: sum of outward face fluxes times areas, over the cell volume."""
    if F.space is not Space.VU:
        raise LayoutError(f"divergence expects a Vu field, got {F.space.value}")
    return Field(Space.VRHO, F.mesh, net_outflow(flux_integrals(F)) / F.mesh.cell_volume)


def flux_operator(a: Field, F: Field, cfg: FluxOperatorConfig = FluxOperatorConfig()) -> Field:
    """Tracer mass flux ``a_face * F``; exactly ``C * F`` when ``a == C``."""
    if a.space is not Space.VRHO or F.space is not Space.VU:
        raise LayoutError("flux_operator expects a Vrho mixing ratio and a Vu flux")
    if a.mesh is not F.mesh:
        raise LayoutError("mixing ratio and flux live on different meshes")
    flow = F.faces()
    af = face_values(a.grid, flow, cfg.scheme)
    return Field.from_faces(F.mesh, af["x"] * flow["x"], af["y"] * flow["y"], af["z"] * flow["z"])


def max_courant(u: Field, dt: float) -> float:
    mesh, faces = u.mesh, u.faces()
    h = mesh.horizontal
    dz = np.diff(mesh.vertex_z, axis=2).min()
    return float(max(np.abs(faces["x"]).max() * dt / h.dx,
                     np.abs(faces["y"]).max() * dt / h.dy,
                     np.abs(faces["z"]).max() * dt / dz))


# ---------------------------------------------------------------------------
# state and stepping

@dataclass(frozen=True)
class TransportState:
    """Fine dry density and coarse tracers.

    ``tracers`` and ``tracer_density`` hold the conservative tracers (mixing
    ratio and density, related through ``A_rho[rho_d]``). ``advective`` holds
    mixing ratios stepped in advective form for comparison. ``flux`` and
    ``wind_mean`` are the time-mean fine mass flux and wind of the last dry step.
    """

    rho_d: Field
    tracers: dict[str, Field]
    tracer_density: dict[str, Field]
    dt: float
    t: float = 0.0
    advective: dict[str, Field] = field(default_factory=dict)
    flux: Field | None = None
    wind_mean: Field | None = None

    @classmethod
    def initial(cls, remap: Remapper, rho_d: Field, tracers: Mapping[str, Field], dt: float,
                advective: Mapping[str, Field] | None = None, t: float = 0.0) -> "TransportState":
        if dt <= 0:
            raise ValueError("time step must be positive")
        if np.any(rho_d.values <= 0):
            raise ValueError("dry density must be positive")
        rho_bar = remap.restrict_density(rho_d)
        dens = {name: a * rho_bar for name, a in tracers.items()}
        return cls(rho_d, dict(tracers), dens, dt, t, dict(advective or {}))


def step_dry_density(state: TransportState, wind: WindFunction,
                     cfg: FluxOperatorConfig = FluxOperatorConfig()) -> TransportState:
    """Advance fine dry density with a two-stage scheme over ``cfg.substeps`` substeps.

    The update is applied as ``rho - dt * div(F_mean)`` using the time-mean flux,
    which is stored on the returned state for restriction to the coarse mesh.
    """
    n, dt, t = cfg.substeps, state.dt, state.t
    h = dt / n
    rho = state.rho_d
    flux_sum = Field.zeros(Space.VU, rho.mesh)
    wind_sum = Field.zeros(Space.VU, rho.mesh)
    u1 = wind(t)
    for s in range(n):
        u0, u1 = u1, wind(t + (s + 1) * h)
        for u in (u0, u1):
            w = u.faces()["z"]
            if np.any(w[:, :, 0] != 0) or np.any(w[:, :, -1] != 0):
                raise ValueError("wind must have zero normal flux through the bottom and top")
            c = max_courant(u, dt)
            if c > n:
                raise CFLError(f"Courant number {c:.3f} exceeds {n} substep(s)")
        F0 = flux_operator(rho, u0, cfg)
        F1 = flux_operator(rho - h * divergence(F0), u1, cfg)
        Fs = 0.5 * (F0 + F1)
        rho = rho - h * divergence(Fs)
        flux_sum = flux_sum + Fs
        wind_sum = wind_sum + 0.5 * (u0 + u1)
    flux = (1.0 / n) * flux_sum
    rho_new = state.rho_d - dt * divergence(flux)
    if np.any(rho_new.values <= 0):
        raise ValueError("dry density became non-positive")
    return replace(state, rho_d=rho_new, flux=flux, wind_mean=(1.0 / n) * wind_sum)


def _require_flux(state: TransportState) -> None:
    if state.flux is None or state.wind_mean is None:
        raise ValueError("step_dry_density must run before the tracer step")


def _new_coarse_density(state: TransportState, remap: Remapper) -> Field:
    rho_bar = remap.restrict_density(state.rho_d)
    if np.any(rho_bar.values <= 0):
        raise ValueError("restricted dry density is not positive")
    return rho_bar


def step_coarse_tracer(state: TransportState, remap: Remapper,
                       cfg: FluxOperatorConfig = FluxOperatorConfig()) -> TransportState:
    """Conservative, consistent coarse tracer update driven by ``A_u`` of the dry flux.

    Expects ``state.rho_d`` and ``state.flux`` to already hold the result of
    :func:`step_dry_density` for this step.
    """
    _require_flux(state)
    dt = state.dt
    F_bar = remap.restrict_wind(state.flux)
    rho_bar = _new_coarse_density(state, remap)
    tracers, dens = {}, {}
    for name, a in state.tracers.items():
        rY = state.tracer_density[name]
        phi1 = flux_operator(a, F_bar, cfg)
        a1 = (rY - dt * divergence(phi1)) / rho_bar
        phi = 0.5 * (phi1 + flux_operator(a1, F_bar, cfg))
        dens[name] = rY - dt * divergence(phi)
        tracers[name] = dens[name] / rho_bar
    return replace(state, tracers=tracers, tracer_density=dens)


def _advective_tendency(a: Field, u: Field, cfg: FluxOperatorConfig) -> np.ndarray:
    phi = flux_integrals(u)
    af = face_values(a.grid, u.faces(), cfg.scheme)
    carried = {d: af[d] * phi[d] for d in phi}
    return -(net_outflow(carried) - a.grid * net_outflow(phi)) / a.mesh.cell_volume


def step_coarse_tracer_advective(state: TransportState, remap: Remapper,
                                 cfg: FluxOperatorConfig = FluxOperatorConfig()) -> TransportState:
    """Advective-form update of ``state.advective`` with the restricted wind; not conservative."""
    _require_flux(state)
    dt = state.dt
    u_bar = remap.restrict_wind(state.wind_mean)
    out = {}
    for name, a in state.advective.items():
        k1 = _advective_tendency(a, u_bar, cfg)
        a1 = a.with_values(a.grid + dt * k1)
        k2 = _advective_tendency(a1, u_bar, cfg)
        out[name] = a.with_values(a.grid + 0.5 * dt * (k1 + k2))
    return replace(state, advective=out)


def advance(state: TransportState, remap: Remapper, wind: WindFunction,
            cfg: FluxOperatorConfig = FluxOperatorConfig()) -> TransportState:
    """One full step: dry density, conservative tracers, advective tracers."""
    new = step_dry_density(state, wind, cfg)
    new = step_coarse_tracer(new, remap, cfg)
    if new.advective:
        new = step_coarse_tracer_advective(new, remap, cfg)
    return replace(new, t=state.t + state.dt)


def tracer_mass(state: TransportState) -> dict[str, float]:
    """Coarse masses of the conservative tracers."""
    return {name: total_mass(d) for name, d in state.tracer_density.items()}


def advective_tracer_mass(state: TransportState, remap: Remapper) -> dict[str, float]:
    """Masses implied by the advective-form ratios, weighted by ``A_rho[rho_d]``."""
    rho_bar = remap.restrict_density(state.rho_d)
    return {name: total_mass(a * rho_bar) for name, a in state.advective.items()}


# ---------------------------------------------------------------------------
# tracers at theta points, transported on the vertically-shifted coarse mesh

def shifted_flux_integrals(F: Field) -> dict[str, np.ndarray]:
    """Flux integrals through the shifted mesh's faces, chosen so ``Q[div F]`` is their divergence."""
    phi = flux_integrals(F)
    out = {}
    for d in ("x", "y"):
        s = np.zeros(phi[d].shape[:2] + (phi[d].shape[2] + 1,))
        s[:, :, :-1] += 0.5 * phi[d]
        s[:, :, 1:] += 0.5 * phi[d]
        out[d] = s
    w = phi["z"]
    out["z"] = np.concatenate([w[:, :, :1], 0.5 * (w[:, :, :-1] + w[:, :, 1:]), w[:, :, -1:]], axis=2)
    return out


def restrict_flux_integrals(phi: Mapping[str, np.ndarray], r: int) -> dict[str, np.ndarray]:
    """Sum flux integrals over the fine faces coincident with each coarse face."""
    nx, ny, L = phi["x"].shape
    NX, NY = nx // r, ny // r
    x = phi["x"][r - 1::r].reshape(NX, NY, r, L).sum(axis=2)
    y = phi["y"][:, r - 1::r].reshape(NX, r, NY, L).sum(axis=1)
    Lz = phi["z"].shape[2]
    z = phi["z"].reshape(NX, r, NY, r, Lz).sum(axis=(1, 3))
    return {"x": x, "y": y, "z": z}


def step_shifted_tracer(a: Field, rho_Y: Field, flux: Field, rho_d_new: Field, remap: Remapper,
                        dt: float, cfg: FluxOperatorConfig = FluxOperatorConfig()) -> tuple[Field, Field]:
    """Advance a coarse shifted-mesh tracer (ratio ``a``, density ``rho_Y``) by one step.

    ``flux`` is the time-mean fine dry mass flux that produced ``rho_d_new``.
    Returns the new ratio and density, both on the coarse shifted layout.
    """
    check_compatible(a, rho_Y)
    if a.space is not Space.VRHO_SHIFTED or a.mesh is not remap.coarse:
        raise LayoutError("shifted tracers live on the coarse VrhoShifted layout")
    phi = restrict_flux_integrals(shifted_flux_integrals(flux), remap.r)
    dens_new = remap.restrict_density(shift_density(rho_d_new))
    vol = remap.coarse.shifted.cell_volume

    def update(ratio: np.ndarray) -> np.ndarray:
        af = face_values(ratio, phi, cfg.scheme)
        return net_outflow({d: af[d] * phi[d] for d in phi})

    out1 = update(a.grid)
    a1 = (rho_Y.grid - dt * out1 / vol) / dens_new.grid
    rY = rho_Y.grid - dt * 0.5 * (out1 + update(a1)) / vol
    return a.with_values(rY / dens_new.grid), rho_Y.with_values(rY)
