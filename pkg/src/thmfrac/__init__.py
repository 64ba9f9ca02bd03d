"""Energy-stable simulation of coupled flow, heat transport and frictional
contact mechanics in 2D fractured poroelastic media.

The package couples a hybrid finite volume discretisation of non-isothermal
single-phase flow (cell, face and fracture-edge unknowns) with a quadratic
finite element discretisation of the skeleton displacement carrying facewise
constant contact multipliers on the fracture network.  Two variants of the
heat equation are provided: a conservative total-energy form and a
non-conservative approximate entropy form, linked by explicit correction
terms that the test suite verifies row by row.
"""

__version__ = "0.1.0"

from .errors import (
    DegenerateCellError,
    DomainError,
    EstimateViolation,
    GeometryError,
    MaxIterationsError,
    NonConvergence,
    ParseError,
    SingularMatrixError,
    SingularTemperatureError,
    StepFailure,
    ValidationError,
)
from .mesh import MixedDimMesh, generate_dfm_mesh, generate_unit_square_mesh, load_mesh, save_mesh
from .fluid import FluidModel, incompressible_linear, perfect_gas, weakly_compressible_liquid
from .constitutive import RockParameters, PoroState

__all__ = [
    "MixedDimMesh",
    "generate_unit_square_mesh",
    "generate_dfm_mesh",
    "load_mesh",
    "save_mesh",
    "FluidModel",
    "incompressible_linear",
    "weakly_compressible_liquid",
    "perfect_gas",
    "RockParameters",
    "PoroState",
    "GeometryError",
    "ParseError",
    "ValidationError",
    "DomainError",
    "DegenerateCellError",
    "SingularMatrixError",
    "SingularTemperatureError",
    "NonConvergence",
    "StepFailure",
    "EstimateViolation",
    "MaxIterationsError",
]
