"""Exception types shared across the package."""

from __future__ import annotations


class FormlabError(Exception):
    """Base class for all package-specific errors."""


class FormationError(FormlabError):
    """Structural problem with a graph, role split, geometry, or axis choice."""


class LocalizabilityError(FormlabError):
    """The follower-follower block is singular or too ill-conditioned to trust."""


class SimulationError(FormlabError):
    """Simulation aborted: non-finite state, refused event, or broken precondition."""


class ScenarioError(FormlabError):
    """A scenario document failed schema or semantic validation.

    Carries a list of (field_path, message) pairs so callers can report every
    problem at once instead of failing on the first.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        lines = [f"  {path}: {msg}" for path, msg in self.problems]
        super().__init__("scenario validation failed:\n" + "\n".join(lines))
