"""Exception hierarchy.

Every error raised on purpose by the library derives from :class:`RSADError`,
which is a ``ValueError`` so callers that only care about bad input can catch
the builtin.
"""

from __future__ import annotations


class RSADError(ValueError):
    """Base class for all library errors."""


class InvalidDimensionsError(RSADError):
    pass


class DimensionMismatchError(RSADError):
    pass


class NonFiniteInputError(RSADError):
    pass


class DegeneratePairError(RSADError):
    pass


class EpsilonOutOfRangeError(RSADError):
    pass


class EmptyClassError(RSADError):
    pass


class AdversarialInCalibrationError(RSADError):
    pass


class ZeroNormCosineError(RSADError):
    pass


class LayerMismatchError(RSADError):
    pass


class EmptyInputError(RSADError):
    pass


class AlphaOutOfRangeError(RSADError):
    pass


class SingleClassError(RSADError):
    """Raised for one-class prototype sets and single-class ROC input."""


class ZeroRadiusError(RSADError):
    pass


class InsufficientReferencesError(RSADError):
    pass


class SingularCovarianceError(RSADError):
    pass


class TooFewScoresError(RSADError):
    pass


class InvalidConfigError(RSADError):
    pass


class StorageError(RSADError):
    """Base class for file format problems."""


class BadMagicError(StorageError):
    pass


class VersionMismatchError(StorageError):
    pass


class TruncatedPayloadError(StorageError):
    pass


class NonFiniteValueError(StorageError):
    pass


class IntegrityError(StorageError):
    """Stored checksum does not match the regenerated projection ensemble."""
