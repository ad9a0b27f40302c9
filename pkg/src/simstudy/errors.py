"""Exception hierarchy shared by every simstudy module."""


class SimError(Exception):
    """Base class for errors raised by the engine itself."""


class SchemaError(SimError, ValueError):
    """Invalid level declaration (duplicate names, duplicate values, ...)."""


class ConfigError(SimError, ValueError):
    """Configuration that cannot be executed as given."""


class UsageError(SimError, RuntimeError):
    """An engine facility was used in the wrong place or order."""


class UpdateError(SimError, ValueError):
    """An update that the engine refuses to apply."""


class ProtocolError(SimError, RuntimeError):
    """Cluster phase protocol violation (missing files, bad task id, ...)."""

    def __init__(self, message, missing_tasks=()):
        super().__init__(message)
        self.missing_tasks = tuple(missing_tasks)


class ArchiveError(SimError, OSError):
    """Unreadable, corrupt, or incompatible archive."""


class SummaryError(SimError, ValueError):
    """Bad summary request (unknown column, non-numeric data, ...)."""
