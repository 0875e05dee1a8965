"""Exception types shared across the toolkit.

The CLI maps these onto stable exit codes: configuration problems -> 2,
quality-gate refusals -> 3, training divergence -> 4.
"""


class ConfigurationError(ValueError):
    """Invalid or incompatible configuration (shape/editing/PDE mismatch)."""


class DomainError(ValueError):
    """Argument outside its mathematical domain (e.g. boundary parameter)."""


class ShapeError(ValueError):
    """Array dimension mismatch."""


class EmptyCloudError(ConfigurationError):
    """Sampling produced no usable points (spacing larger than the domain)."""


class GateError(RuntimeError):
    """A trained mapping failed the fold-free / boundary-accuracy gate."""


class DivergenceError(RuntimeError):
    """Training diverged (non-finite loss or gradients)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
