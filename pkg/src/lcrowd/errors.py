"""Exception types raised across the package."""


class LCrowdError(Exception):
    """Base class for all package errors."""


class NoFreeSpace(LCrowdError):
    pass


class Unreachable(LCrowdError):
    pass


class SamplingExhausted(LCrowdError):
    pass


class EmptyTable(LCrowdError):
    pass


class DuplicateAgentId(LCrowdError):
    pass


class SpawnFailure(LCrowdError):
    pass


class InsufficientData(LCrowdError):
    pass


class ConfigError(LCrowdError):
    """Raised for malformed configuration or input files."""
