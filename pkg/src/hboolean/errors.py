"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid model or run configuration."""


class KernelDomainError(ValueError):
    """A mark was passed to a kernel outside the kernel's support."""


class InvariantViolation(AssertionError):
    """A structural identity that must hold by construction failed."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
