"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid scenario, constellation, or run configuration."""


class ScenarioError(RuntimeError):
    """Scripted ground truth violates a scenario constraint (e.g. off-lane)."""


class UnderdeterminedFixError(ValueError):
    """Too few pseudo-ranges for a 2-D + clock point fix."""


class DegenerateFilterError(RuntimeError):
    """Particle weights collapsed; carries diagnostics for the failed step."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
