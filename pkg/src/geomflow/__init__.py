"""geomflow: arbitrary-order evolving-surface finite elements for mean
curvature flow and surface diffusion with discrete structure preservation."""

from .diagnostics import LedgerRow, eoc, ledger_entry, mesh_distance, sphere_error
from .errors import (
    ConfigError,
    DegenerateGeometryError,
    GeomflowError,
    InvalidInputError,
    InvalidMeshError,
    NewtonFailure,
    SingularMatrixError,
)
from .estimator import GeometricFlowEstimator
from .fields import SHAPES, SpaceField, map_initial_geometry
from .geometry import area, volume
from .refmesh import (
    ReferenceMesh,
    load_mesh,
    make_circle_mesh,
    make_cuboid_mesh,
    make_icosphere_mesh,
    validate_mesh,
)
from .residual import FlowSpec, SlabAssembler, SlabState
from .solver import NewtonConfig, RunRecord, march, read_checkpoint, solve_slab, write_checkpoint
from .timeslab import QuadraturePolicy, default_policy, intermediate_normal_check

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateGeometryError",
    "FlowSpec",
    "GeomflowError",
    "GeometricFlowEstimator",
    "InvalidInputError",
    "InvalidMeshError",
    "LedgerRow",
    "NewtonConfig",
    "NewtonFailure",
    "QuadraturePolicy",
    "ReferenceMesh",
    "RunRecord",
    "SHAPES",
    "SingularMatrixError",
    "SlabAssembler",
    "SlabState",
    "SpaceField",
    "area",
    "default_policy",
    "eoc",
    "intermediate_normal_check",
    "ledger_entry",
    "load_mesh",
    "make_circle_mesh",
    "make_cuboid_mesh",
    "make_icosphere_mesh",
    "map_initial_geometry",
    "march",
    "mesh_distance",
    "read_checkpoint",
    "solve_slab",
    "sphere_error",
    "validate_mesh",
    "volume",
    "write_checkpoint",
]
