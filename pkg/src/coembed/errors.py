"""Exception hierarchy shared across the toolkit and the service layer."""


class CoembedError(Exception):
    """Base class for all toolkit errors."""


class ParseError(CoembedError):
    """A file could not be parsed; carries the offending path and line."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}:"
            if line is not None:
                loc += f"{line}:"
            loc += " "
        super().__init__(f"{loc}{message}")
        self.path = path
        self.line = line


class DegenerateShapeError(CoembedError):
    """Geometry that cannot be processed (e.g. all vertices coincident)."""


class UnsupportedInputError(CoembedError):
    """Operation invoked on an input kind it does not support."""


class CacheError(CoembedError):
    """Cache file is missing, corrupt, or inconsistent with its request."""


class BandwidthError(CoembedError):
    """Point-cloud kernel bandwidth collapsed to zero (duplicate points)."""


class SolverError(CoembedError):
    """Eigensolver failed to converge; carries the achieved residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DisconnectedShapeError(CoembedError):
    """Spectrum indicates a disconnected shape where connectivity is required."""


class DivergenceError(CoembedError):
    """Optimization produced a non-finite loss; carries the iteration."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ConfigError(CoembedError):
    """Invalid pipeline configuration (unknown key, bad value, bad combination)."""
