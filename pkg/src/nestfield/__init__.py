"""Mapping staggered atmospheric fields between horizontally nested meshes."""

from .fields import Field, LayoutError, Space, dump_field, field_algebra, read_field_dump, total_mass
from .mesh import (
    ExtrudedMesh,
    HorizontalMesh,
    NestedMeshPair,
    Orography,
    VerticalGrid,
    build_nested_pair,
    cell_volume,
    face_area,
    shifted_geometry,
)
from .physics import (
    MappingLog,
    MoistState,
    PhysicsParams,
    apply_physics_coarse,
    apply_physics_fine,
    identity_physics,
    toy_condensation,
)
from .remap import (
    DryDensityPair,
    Remapper,
    shift_density,
    shift_mixing_ratio,
    tie_boundary_levels,
    unshift_mixing_ratio,
)
from .transport import (
    CFLError,
    FluxOperatorConfig,
    TransportState,
    divergence,
    flux_operator,
    step_coarse_tracer,
    step_coarse_tracer_advective,
    step_dry_density,
)

__all__ = [
    "CFLError", "DryDensityPair", "ExtrudedMesh", "Field", "FluxOperatorConfig", "HorizontalMesh",
    "LayoutError", "MappingLog", "MoistState", "NestedMeshPair", "Orography", "PhysicsParams",
    "Remapper", "Space", "TransportState", "VerticalGrid", "apply_physics_coarse", "apply_physics_fine",
    "build_nested_pair", "cell_volume", "divergence", "dump_field", "face_area", "field_algebra",
    "flux_operator", "identity_physics", "read_field_dump", "shift_density", "shift_mixing_ratio",
    "shifted_geometry", "step_coarse_tracer", "step_coarse_tracer_advective", "step_dry_density",
    "tie_boundary_levels", "toy_condensation", "total_mass", "unshift_mixing_ratio",
]

__version__ = "0.1.0"
