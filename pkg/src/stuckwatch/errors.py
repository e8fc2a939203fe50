"""Exception hierarchy shared by the library and the command line front end.

The CLI maps these onto process exit codes: usage problems exit 1, data
problems (missing or malformed files, infeasible injection policies) exit 2,
training failures exit 3.
"""


class StuckwatchError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(StuckwatchError):
    """Bad invocation: unknown flags, invalid config values, unknown keys."""


class DataError(StuckwatchError):
    """Unusable input data: missing files, schema mismatch, bad metadata."""


class PolicyError(DataError):
    """Fault injection policy cannot be satisfied on the given trajectory."""


class TrainingError(StuckwatchError):
    """Model training cannot proceed or diverged."""
