"""Physics-dynamics coupling through mapped increments.

Prognostic fields travel from the dynamics mesh to the physics mesh, and only
increments travel back. Two placements are supported:

* fine physics: dynamics on the coarse mesh, fields prolonged (``B``), increments
  restricted (``A``);
* coarse physics: dynamics on the fine mesh, fields restricted, increments
  prolonged with the unlimited ``B_m`` and blended against an identified field
  so moisture stays non-negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .fields import Field, LayoutError, Space
from .remap import DryDensityPair, Remapper, clip_end_levels, moist_column_mass

NEGATIVE_TOLERANCE = 1e-13


@dataclass(frozen=True)
class PhysicsParams:
    L_v: float = 2.5e6
    c_p: float = 1004.5
    m_sat0: float = 0.012
    scale_height: float = 3000.0
    theta_ref: float = 300.0
    theta_coeff: float = 0.07
    relax: float = 1.0

    def __post_init__(self):
        for name in ("L_v", "c_p", "m_sat0", "scale_height", "theta_ref"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be finite and positive")
        if not np.isfinite(self.theta_coeff) or self.theta_coeff < 0:
            raise ValueError("theta_coeff must be finite and non-negative")
        if not 0 < self.relax <= 1:
            raise ValueError("relax must lie in (0, 1]")


def saturation(theta: np.ndarray, z: np.ndarray, params: PhysicsParams) -> np.ndarray:
    """Saturation mixing ratio, decaying with height and linear in theta, floored above zero."""
    linear = 1.0 + params.theta_coeff * (theta - params.theta_ref)
    return params.m_sat0 * np.exp(-z / params.scale_height) * np.maximum(linear, 1e-3)


@dataclass(frozen=True)
class PhysicsIncrement:
    theta: Field
    moisture: dict[str, Field]


PhysicsScheme = Callable[[Field, Mapping[str, Field], PhysicsParams], PhysicsIncrement]


def toy_condensation(theta: Field, m_v: Field, m_cl: Field, params: PhysicsParams) -> PhysicsIncrement:
    """Relax vapour towards saturation, exchanging mass with cloud and heating on condensation."""
    if min(m_v.values.min(), m_cl.values.min()) < -NEGATIVE_TOLERANCE:
        raise ValueError("toy_condensation needs non-negative moisture")
    mv = m_v.grid
    mcl = np.maximum(m_cl.grid, 0.0)
    msat = saturation(theta.grid, theta.mesh.theta_heights(), params)
    excess = mv - msat
    delta = np.where(excess > 0, params.relax * excess, 0.0)
    evap = np.where((excess < 0) & (mcl > 0), np.minimum(-params.relax * excess, mcl), 0.0)
    delta = delta - evap
    return PhysicsIncrement(
        theta=theta.with_values(params.L_v / params.c_p * delta),
        moisture={"m_v": m_v.with_values(-delta), "m_cl": m_cl.with_values(delta)},
    )


def condensation_scheme(theta: Field, moisture: Mapping[str, Field], params: PhysicsParams) -> PhysicsIncrement:
    return toy_condensation(theta, moisture["m_v"], moisture["m_cl"], params)


def identity_physics(theta: Field, moisture: Mapping[str, Field], params: PhysicsParams) -> PhysicsIncrement:
    """The do-nothing scheme: a zero increment for every prognostic."""
    return PhysicsIncrement(
        theta=Field.zeros(Space.VTHETA, theta.mesh),
        moisture={name: Field.zeros(Space.VTHETA, theta.mesh) for name in moisture},
    )


SCHEMES: dict[str, PhysicsScheme] = {
    "condensation": condensation_scheme,
    "identity": identity_physics,
}


@dataclass(frozen=True)
class MoistState:
    """Theta, moisture mixing ratios (all Vtheta) and dry density (Vrho) on one mesh."""

    theta: Field
    moisture: dict[str, Field]
    rho_d: Field

    def __post_init__(self):
        mesh = self.rho_d.mesh
        if self.rho_d.space is not Space.VRHO:
            raise LayoutError("dry density must be a Vrho field")
        for f in (self.theta, *self.moisture.values()):
            if f.space is not Space.VTHETA or f.mesh is not mesh:
                raise LayoutError("theta and moisture must be Vtheta fields on the dry density's mesh")

    @property
    def mesh(self):
        return self.rho_d.mesh


@dataclass
class MappingLog:
    """Records every inter-mesh transfer as (direction, payload kind, variable)."""

    events: list[tuple[str, str, str]] = field(default_factory=list)
    lambda_triggers: int = 0
    floored: int = 0
    clipped: int = 0

    def record(self, direction: str, kind: str, name: str) -> None:
        self.events.append((direction, kind, name))

    def respects_increment_rule(self) -> bool:
        expected = {"to_physics": "field", "to_dynamics": "increment"}
        return all(expected[d] == k for d, k, _ in self.events)


def _record(log: MappingLog | None, direction: str, kind: str, name: str) -> None:
    if log is not None:
        log.record(direction, kind, name)


def _clip(m: Field, log: MappingLog | None) -> Field:
    """Zero floor at the end levels (part of the inverse shift), counted in the log."""
    out, count = clip_end_levels(m)
    if log is not None:
        log.clipped += count
    return out


def column_moist_mass(state: MoistState) -> np.ndarray:
    """Moist mass in each column, summed over species on the shifted mesh; shape (nx, ny)."""
    if not state.moisture:
        return np.zeros((state.mesh.nx, state.mesh.ny))
    total = sum(state.moisture.values(), Field.zeros(Space.VTHETA, state.mesh))
    return moist_column_mass(total, state.rho_d)


def apply_physics_fine(state: MoistState, remap: Remapper, scheme: PhysicsScheme,
                       params: PhysicsParams, log: MappingLog | None = None) -> MoistState:
    """Physics on the fine mesh for a coarse-mesh dynamics state.

    Negative values produced by the boundary-level extrapolation of the
    restricted increment are floored at zero and counted in ``log.floored``.
    Both that floor and the zero floor inside the inverse shift (``log.clipped``)
    add moisture, so moist mass is exact only when both counters stay at zero.
    """
    if state.mesh is not remap.coarse:
        raise LayoutError("fine-mesh physics expects a state on the coarse mesh")
    dens = remap.density_pair_from_coarse(state.rho_d)

    theta_f = remap.prolong_scalar(state.theta)
    _record(log, "to_physics", "field", "theta")
    minus, plus = {}, {}
    for name, m in state.moisture.items():
        minus[name] = remap.prolong_mixing_ratio_unlimited(m, dens)
        plus[name] = _clip(remap.identify_mixing_ratio(m, dens, clip=False), log)
        _record(log, "to_physics", "field", name)
    lam = remap.shared_lambda(minus, plus)
    if log is not None:
        log.lambda_triggers += int(np.count_nonzero(lam.values))
    moist_f = {name: remap.blend(minus[name], plus[name], lam) for name in minus}

    inc = scheme(theta_f, moist_f, params)

    theta = state.theta + remap.restrict_scalar(inc.theta)
    _record(log, "to_dynamics", "increment", "theta")
    moisture = {}
    for name, m in state.moisture.items():
        new = m + remap.restrict_mixing_ratio(inc.moisture[name], dens, clip=False)
        _record(log, "to_dynamics", "increment", name)
        negative = new.values < 0
        if negative.any():
            if log is not None:
                log.floored += int(np.count_nonzero(negative))
            new = new.with_values(np.where(negative, 0.0, new.values))
        moisture[name] = new
    return MoistState(theta, moisture, state.rho_d)


def apply_physics_coarse(state: MoistState, remap: Remapper, scheme: PhysicsScheme,
                         params: PhysicsParams, log: MappingLog | None = None) -> MoistState:
    """Physics on the coarse mesh for a fine-mesh dynamics state.

    Moisture becomes ``Lambda[m + B_m-dagger[dm], I_m[A_m[m] + dm]]`` with one
    blending factor shared across species.
    """
    if state.mesh is not remap.fine:
        raise LayoutError("coarse-mesh physics expects a state on the fine mesh")
    dens = DryDensityPair(state.rho_d, remap.restrict_density(state.rho_d))

    theta_c = remap.restrict_scalar(state.theta)
    _record(log, "to_physics", "field", "theta")
    moist_c = {}
    for name, m in state.moisture.items():
        moist_c[name] = _clip(remap.restrict_mixing_ratio(m, dens, clip=False), log)
        _record(log, "to_physics", "field", name)

    inc = scheme(theta_c, moist_c, params)

    theta = state.theta + remap.prolong_scalar(inc.theta)
    _record(log, "to_dynamics", "increment", "theta")
    minus, plus = {}, {}
    for name, m in state.moisture.items():
        minus[name] = m + remap.prolong_mixing_ratio_unlimited(inc.moisture[name], dens)
        plus[name] = _clip(remap.identify_mixing_ratio(moist_c[name] + inc.moisture[name], dens, clip=False), log)
        _record(log, "to_dynamics", "increment", name)
    lam = remap.shared_lambda(minus, plus)
    if log is not None:
        log.lambda_triggers += int(np.count_nonzero(lam.values))
    moisture = {name: remap.blend(minus[name], plus[name], lam) for name in minus}
    for name, m in moisture.items():
        if m.values.min() < -NEGATIVE_TOLERANCE:
            raise AssertionError(f"{name} went negative after blending: {m.values.min():.3e}")
    return MoistState(theta, moisture, state.rho_d)
