"""Exception types shared across the package."""


class FairmcError(Exception):
    """Base class for all errors raised by this package."""


class ModelFormatError(FairmcError):
    """A model file failed to parse or violates a structural invariant."""


class ConfigError(FairmcError):
    """A run configuration is missing, malformed, or inconsistent."""


class DegenerateRangeError(FairmcError):
    """A discretizer was asked to split a range of zero width."""


class SolverError(FairmcError):
    """The reachability linear system could not be solved to tolerance."""


class EvaluationError(FairmcError):
    """An empirical estimate could not be formed (e.g. an empty group)."""
