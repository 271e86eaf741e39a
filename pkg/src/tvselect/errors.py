"""Exception types shared across the package."""


class TVSelectError(Exception):
    """Base class for all package errors."""


class ConfigurationError(TVSelectError):
    """Invalid configuration value (degree, knot count, grid, folds, ...)."""


class DegenerateDesignError(TVSelectError):
    """The observed design cannot support the requested construction."""


class DegenerateColumnError(TVSelectError):
    """A covariate column is constant or identically zero."""


class ParseError(TVSelectError):
    """Malformed input file; message names the offending row/column."""


class DimensionError(TVSelectError):
    """Inconsistent array dimensions between inputs."""


class DomainError(TVSelectError):
    """An evaluation point is outside the supported domain."""


class SingularBlockError(TVSelectError):
    """A block system could not be factorized even after jitter."""


class OracleNonconvergenceError(TVSelectError):
    """The reference proximal-gradient solver hit its iteration cap."""


class TuningError(TVSelectError):
    """No grid point produced a usable fit."""


class ArtifactMismatchError(TVSelectError):
    """A stored fit artifact is incompatible with the supplied data."""


class StudyError(TVSelectError):
    """Too many replications of a simulation study failed."""
