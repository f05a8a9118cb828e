"""Exception hierarchy.  The CLI prints ``error: <ClassName>: <message>``."""


class SmarError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatch(SmarError, ValueError):
    pass


class GeometryError(SmarError, ValueError):
    """Invalid acquisition geometry; ``code`` names the violated constraint."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class ContainerError(SmarError):
    pass


class BadMagic(ContainerError):
    pass


class VersionMismatch(ContainerError):
    pass


class Truncated(ContainerError):
    pass


class DuplicateName(ContainerError, ValueError):
    pass


class InvalidName(ContainerError, ValueError):
    pass


class PlacementFailed(SmarError):
    pass


class EmptyMask(SmarError, ValueError):
    pass


class FullRowTraced(SmarError, ValueError):
    pass


class AllMasked(SmarError, ValueError):
    pass


class AllExcluded(SmarError, ValueError):
    pass


class InsufficientMasks(SmarError, ValueError):
    pass


class NonScalarLoss(SmarError, ValueError):
    pass


class ConfigMismatch(SmarError):
    pass


class ConfigError(SmarError, ValueError):
    pass
