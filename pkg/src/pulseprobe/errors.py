"""Exception types shared across the package."""


class PulseProbeError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(PulseProbeError, ValueError):
    """Invalid configuration (bad keys, values, or inconsistent settings)."""


class StateValidationError(PulseProbeError, ValueError):
    """A state failed a Hermiticity / trace / positivity check."""


class IntegrationError(PulseProbeError, RuntimeError):
    """A stepping operation failed (trace drift, negative trace, dt too large)."""


class AllFiltersDeadError(PulseProbeError, RuntimeError):
    """The observed record is impossible under every hypothesis in the bank."""
