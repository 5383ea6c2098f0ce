"""Exception types shared across the package.

The CLI maps these onto its exit-code taxonomy, so library code raises them
instead of returning status flags.
"""


class FucikError(Exception):
    """Base class for all errors raised by fucik_link."""


class PreconditionError(FucikError, ValueError):
    """An operation was called outside its domain of validity."""


class ClusterSplitError(PreconditionError):
    """A requested mode count cuts through a multiple eigenvalue."""


class ConvergenceError(FucikError, RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance."""


class ConfigError(FucikError):
    """A configuration file or flag value could not be parsed."""
