"""Exception types shared across the package.

Each class carries the process exit code used by the command line front end,
so library errors map onto distinct, machine-checkable failure channels.
"""


class PilotPathError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ValidationError(PilotPathError):
    """Malformed input: bad shapes, non-unitary layers, schema violations."""

    exit_code = 2


class ResourceCapError(PilotPathError):
    """A configured resource cap (path pairs, memory) would be exceeded."""

    exit_code = 3


class DegenerateDensityError(PilotPathError):
    """A density with no usable probability mass where mass is required."""

    exit_code = 4
