"""Exception hierarchy mapped to the CLI exit codes (2/3/4)."""


class SceneDistillError(Exception):
    exit_code = 1


class ConfigError(SceneDistillError):
    """Bad configuration, flags, or incompatible inputs."""

    exit_code = 2


class DataError(SceneDistillError):
    """Missing/corrupt files or data violating a documented invariant."""

    exit_code = 3


class FormatError(DataError):
    """Malformed on-disk container (bad magic, truncated payload, ...)."""


class NumericError(SceneDistillError):
    """Numeric failure at runtime (NaN loss, failed self-check)."""

    exit_code = 4
