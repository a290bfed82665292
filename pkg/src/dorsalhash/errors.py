"""Exception taxonomy.

Each class marks one failure family so callers (and the CLI exit-code
mapping) can tell bad inputs from degenerate crypto material from undefined
metrics without string-matching messages.
"""


class DorsalHashError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(DorsalHashError, ValueError):
    """Array shape or size violates an operation's contract."""


class FilterSpecError(DorsalHashError, ValueError):
    """A filter-bank specification is out of range or inconsistent."""


class BadKeyError(DorsalHashError, ValueError):
    """A user key is malformed (unsupported bit length, m > feature dim...)."""


class DegenerateKeyError(BadKeyError):
    """Key material produced rank-deficient projection vectors; reissue it."""


class UndefinedScoreError(DorsalHashError, ArithmeticError):
    """A match score is undefined (e.g. both templates all-zero)."""


class DataError(DorsalHashError, ValueError):
    """Dataset or label structure violates a precondition."""


class ProtocolError(DataError):
    """Gallery/probe split is inconsistent (unknown probe subject...)."""


class IngestionError(DataError):
    """An on-disk image could not be decoded."""


class TrainingError(DorsalHashError, RuntimeError):
    """Optimization produced non-finite values or cannot proceed."""


class UnknownIdentityError(DorsalHashError, LookupError):
    """Verification was claimed against an identity with no enrollment."""


class RevokedCredentialError(DorsalHashError):
    """The addressed enrollment record has been revoked."""


class NormalizationError(DorsalHashError, ValueError):
    """A vector cannot be min-max normalized (constant components)."""


class ModelFormatError(DorsalHashError):
    """A serialized model file is corrupt or has an unsupported version."""


class MetricUndefinedError(DorsalHashError, ArithmeticError):
    """A requested metric is undefined on the given score distributions."""


class ConfigError(DorsalHashError, ValueError):
    """A configuration file or value cannot be parsed."""
