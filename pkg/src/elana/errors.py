"""Exception hierarchy shared by every profiler module."""


class ElanaError(Exception):
    """Base class for all profiler errors."""


class SchemaError(ElanaError):
    """A structured config document is missing a required field."""


class ValidationError(ElanaError):
    """A value violates a documented precondition or invariant."""


class CapabilityError(ElanaError):
    """The backend cannot do what was asked of it."""


class BackendError(ElanaError):
    """The inference backend failed while doing work."""


class MeasurementError(ElanaError):
    """A measurement window produced no usable data."""


class ConfigError(ElanaError):
    """Profiling pieces were wired together inconsistently."""


class UsageError(ElanaError):
    """Bad command line input."""
