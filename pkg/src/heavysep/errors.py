"""Exception types shared across the package."""


class DomainError(ValueError):
    """A parameter or evaluation point lies outside the admissible domain."""


class SupportError(ValueError):
    """A test function violates the support requirement of a weak formulation."""


class ConfigError(ValueError):
    """An experiment configuration failed validation."""


class NumericalError(RuntimeError):
    """A numerical routine failed (singular solve, non-finite values, ...)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
