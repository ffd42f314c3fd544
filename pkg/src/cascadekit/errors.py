"""Exception and warning types shared across the package."""


class CascadeKitError(Exception):
    """Base class for all errors raised by cascadekit."""


class FormatError(CascadeKitError):
    """A file does not conform to the expected on-disk format."""


class ConfigError(CascadeKitError):
    """A configuration document or parameter set is invalid."""


class JoinError(CascadeKitError):
    """Tables that must describe the same split do not line up."""


class CostSignWarning(UserWarning):
    """Raised when the routing cost parameter exceeds 1.

    Above 1 the confidence loss prefers high confidence even for samples
    that only the later stage classifies correctly, so nothing is ever
    pushed toward the cheap exit's hand-off region.
    """
