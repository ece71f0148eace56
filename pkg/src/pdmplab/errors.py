"""Exception types shared across the package."""


class PdmplabError(Exception):
    """Base class for all package-specific errors."""


class StepCountOverflow(PdmplabError):
    """Requested flow time exceeds the configured step-count cap."""


class BoundaryExit(PdmplabError):
    """A trajectory left a trapping box: the trapping configuration is invalid."""


class DegenerateTangent(PdmplabError):
    """A tangent cocycle became singular to machine precision."""


class NoSectionCrossing(PdmplabError):
    """An orbit candidate never returned to its section within the horizon."""


class BranchInversionFailure(PdmplabError):
    """A branch inverse of a circle map did not converge."""


class ProbeUnderflow(PdmplabError):
    """A spectral-radius probe collapsed below 1e-300 before renormalization."""


class NotSubstochastic(PdmplabError):
    """The remainder kernel has a row sum >= 1, so the Neumann series diverges."""


class EmptyAccumulator(PdmplabError):
    """Density estimation requested on an accumulator with zero total weight."""


class RegionEmpty(PdmplabError):
    """A smoothness-probe region contains no grid cells."""


class ConfigError(PdmplabError):
    """Malformed scenario configuration.

    Carries the offending location so the CLI can point at it.
    """

    def __init__(self, message, filename=None, line=None, column=None):
        self.filename = filename
        self.line = line
        self.column = column
        where = ""
        if filename is not None:
            where = f"{filename}:"
        if line is not None:
            where += f"{line}:"
            if column is not None:
                where += f"{column}:"
        super().__init__(f"{where} {message}" if where else message)
