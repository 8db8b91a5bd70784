"""Exception types shared across the pipeline, mapped to CLI exit codes."""


class CavegenError(Exception):
    """Base class for all cavegen errors."""

    exit_code = 1


class ConfigError(CavegenError):
    """Invalid configuration value, unknown key, or malformed config/manifest document."""

    exit_code = 2


class DegenerateDistributionError(ConfigError):
    """An angular distribution has no probability mass left to sample from."""

    exit_code = 2


class StaleArtifactError(CavegenError):
    """An on-disk artifact no longer matches the manifest that references it."""

    exit_code = 3


class ResourceLimitError(CavegenError):
    """A configured resource budget (e.g. the voxel grid cell budget) was exceeded."""

    exit_code = 4


class ContractViolation(CavegenError):
    """An internal invariant or operation precondition was violated."""

    exit_code = 5
