"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration/usage problems exit 2,
ingestion and filesystem problems exit 3, numeric or protocol failures
exit 4.
"""


class SplitVoteError(Exception):
    """Base class for all package errors."""


class ConfigError(SplitVoteError):
    """Invalid configuration: bad key, bad value, incompatible shapes."""


class UsageError(SplitVoteError):
    """An API was called in a way its contract forbids."""


class IngestError(SplitVoteError):
    """A file could not be read or failed validation during ingestion."""


class NumericsError(SplitVoteError):
    """Non-finite values or a numerically impossible state."""


class ProtocolError(SplitVoteError):
    """A federation message violated the wire contract; round aborted."""
