"""Exception hierarchy shared across the package.

Two top-level families matter for callers: ``ContractError`` for violated
preconditions or malformed inputs (CLI exit code 2), and ``NumericError``
for non-finite values appearing where finite math was promised (exit 3).
"""


class CrossAdaptError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(CrossAdaptError):
    """A documented precondition was violated by the caller or input data."""


class StructuralError(ContractError):
    """Shapes, keys, or dimensions do not line up."""


class UnknownDomainError(ContractError):
    """A domain id outside the configured domain set was requested."""


class NumericError(CrossAdaptError):
    """A NaN or infinity appeared in a computation that must stay finite."""


class FileFormatError(ContractError):
    """Base class for malformed binary or text artifact files."""


class BadMagicError(FileFormatError):
    """File does not start with the expected magic bytes."""


class BadVersionError(FileFormatError):
    """File carries an unsupported format version."""


class TruncatedFileError(FileFormatError):
    """File ends before the declared payload is complete."""


class FingerprintMismatchError(FileFormatError):
    """Stored configuration fingerprint disagrees with the expected one."""
