"""Formation maneuver control built on matrix-valued graph weights.

The package covers the full pipeline: geometric kernels, interaction graphs,
weight synthesis and the stacked constraint matrix, maneuver schedules,
closed-loop simulation with leader/follower laws, and a scenario-driven CLI.
"""

__version__ = "0.1.0"

from formlab.errors import (
    FormationError,
    FormlabError,
    LocalizabilityError,
    ScenarioError,
    SimulationError,
)
from formlab.geometry import RotationAxis, axis_projector, rodrigues, skew

__all__ = [
    "__version__",
    "FormationError",
    "FormlabError",
    "LocalizabilityError",
    "ScenarioError",
    "SimulationError",
    "RotationAxis",
    "axis_projector",
    "rodrigues",
    "skew",
]
