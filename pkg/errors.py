"""Error taxonomy shared by the library and the CLI.

Every error carries a machine-readable ``code`` (the class name) and the
process ``exit_code`` the CLI reports for it.
"""
from __future__ import annotations


class LooseRopeError(ValueError):
    exit_code = 1

    @property
    def code(self) -> str:
        return type(self).__name__


# numerics
class DimensionMismatch(LooseRopeError): ...
class NonFiniteInput(LooseRopeError): ...
class EmptyInput(LooseRopeError): ...
class InvalidKernel(LooseRopeError): ...
class NotADistribution(LooseRopeError): ...

# rope
class InvalidDimension(LooseRopeError): ...
class RangeOutOfBounds(LooseRopeError): ...

# saliency
class DegenerateMask(LooseRopeError): ...
class MaskOverlap(LooseRopeError): ...
class InvalidLevelCount(LooseRopeError): ...

# modulation / attention
class TimestepOutOfRange(LooseRopeError): ...
class InactiveConfig(LooseRopeError): ...
class SaliencyNotQuantized(LooseRopeError): ...
class ZeroOutwardMass(LooseRopeError): ...
class EmptyQuerySet(LooseRopeError): ...

# pipeline / cli
class ConfigInvalid(LooseRopeError): ...
class IndexOutOfRange(LooseRopeError): ...


class IoError(LooseRopeError):
    exit_code = 2


class FormatError(IoError):
    """A file exists but does not parse as the expected format."""


class OracleTransportError(IoError):
    """The oracle could not be reached or answered with garbage."""
