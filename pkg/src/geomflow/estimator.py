"""Thin scikit-learn style wrapper around the slab-marching solver."""

import numpy as np
from sklearn.base import BaseEstimator

from .errors import InvalidInputError
from .fields import SpaceField, map_initial_geometry
from .refmesh import ReferenceMesh
from .residual import FlowSpec
from .solver import NewtonConfig, march


class GeometricFlowEstimator(BaseEstimator):
    """Evolve a closed curve or surface under MCF or surface diffusion.

    Parameters mirror FlowSpec; ``fit`` accepts a ReferenceMesh (combined
    with the ``geometry`` parameter) or a ready SpaceField initial
    immersion, marches to ``final_time``, and exposes the terminal
    immersion and the structure ledger as fitted attributes.
    """

    def __init__(
        self,
        flow: str = "mcf",
        degree: int = 1,
        stages: int = 1,
        timestep: float = 1e-4,
        final_time: float = 1e-2,
        geometry: str = "sphere",
        abs_tol: float = 1e-11,
        rel_tol: float = 1e-10,
        max_iterations: int = 25,
    ):
        self.flow = flow
        self.degree = degree
        self.stages = stages
        self.timestep = timestep
        self.final_time = final_time
        self.geometry = geometry
        self.abs_tol = abs_tol
        self.rel_tol = rel_tol
        self.max_iterations = max_iterations

    def _spec(self) -> FlowSpec:
        return FlowSpec(
            flow=self.flow,
            degree=self.degree,
            stages=self.stages,
            timestep=self.timestep,
            final_time=self.final_time,
            geometry=self.geometry,
        )

    def fit(self, X, y=None):
        if isinstance(X, ReferenceMesh):
            X = map_initial_geometry(X, self.geometry, self.degree)
        elif not isinstance(X, SpaceField):
            raise InvalidInputError("fit expects a ReferenceMesh or SpaceField")
        newton = NewtonConfig(
            abs_tol=self.abs_tol, rel_tol=self.rel_tol, max_iterations=self.max_iterations
        )
        record = march(self._spec(), X, newton=newton)
        self.record_ = record
        self.termination_ = record.termination
        self.final_time_ = record.final_time
        self.ledger_ = record.entries
        self.final_field_ = (
            record.final_state.end_field() if record.final_state is not None else X
        )
        return self

    def predict(self, X=None) -> np.ndarray:
        """Terminal nodal coordinates of the evolved immersion."""
        if not hasattr(self, "final_field_"):
            raise InvalidInputError("estimator is not fitted")
        return self.final_field_.dofs
