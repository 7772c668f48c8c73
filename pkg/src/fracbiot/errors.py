"""Exception hierarchy shared by all solver modules."""


class FracbiotError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FracbiotError):
    """Invalid scenario / solver configuration (bad counts, extents, keys)."""


class MeshParseError(FracbiotError):
    """Mesh file could not be parsed (unknown section, dangling reference)."""


class ValidationError(FracbiotError):
    """A constructed object violates its invariants."""


class GeometryError(FracbiotError):
    """Fine/coarse geometry mismatch (node outside domain, patch failure)."""


class DataError(FracbiotError):
    """Invalid coefficient data (non-positive permeability, nu >= 0.5, ...)."""


class ContractError(FracbiotError):
    """Caller broke an operation precondition (dimension mismatch, missing history)."""


class NumericalError(FracbiotError):
    """Linear algebra failure (singular factorization, eigen solve breakdown)."""
