"""Exception families shared across the package.

Each family carries a stable category name so the CLI can map failures
to distinct exit codes.
"""


class StokError(Exception):
    """Base class for all errors raised by this package."""

    category = "error"


class InputError(StokError):
    """Caller-supplied values violate an operation's preconditions."""

    category = "input"


class FormatError(StokError):
    """A file does not conform to the expected on-disk layout."""

    category = "format"


class TruncationError(StokError):
    """A byte or bit stream ended before decoding completed."""

    category = "truncation"


class CorruptionError(StokError):
    """Stored data decoded, but to content that violates an invariant."""

    category = "corruption"


class ConfigError(StokError):
    """An operation was configured with an unsupported combination."""

    category = "config"


# Exit codes per error family, used by the CLI entry point.
EXIT_CODES = {
    "input": 2,
    "format": 3,
    "truncation": 4,
    "corruption": 5,
    "config": 6,
    "io": 7,
    "error": 1,
}
