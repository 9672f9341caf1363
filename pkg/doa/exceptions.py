"""Domain errors. Each carries the exit code the management commands map it to."""


class DoaError(Exception):
    exit_code = 1


class DoaIOError(DoaError):
    """Unreadable or unwritable file, corrupt WAV, malformed CSV."""
    exit_code = 1


class SignalError(DoaError):
    """Signal cannot be framed or processed."""
    exit_code = 1


class ConfigError(DoaError):
    """Invalid pipeline configuration or scene description."""
    exit_code = 2


class GeometryError(ConfigError):
    """Invalid array geometry or direction."""
    exit_code = 2


class ChannelMismatchError(DoaError):
    """Recording channel count does not match the array geometry."""
    exit_code = 3


class SubspaceError(DoaError):
    exit_code = 1
