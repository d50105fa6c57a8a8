"""Exception types shared across the package."""


class AnchorNLLError(Exception):
    """Base class; ``kind`` is the short tag written into failure records."""

    kind = "error"


class ShapeError(AnchorNLLError, ValueError):
    kind = "shape"


class ValidationError(AnchorNLLError, ValueError):
    kind = "validation"


class DomainError(AnchorNLLError, ValueError):
    kind = "domain"


class DegenerateFitError(AnchorNLLError, ValueError):
    kind = "degenerate_fit"


class UsageError(AnchorNLLError, RuntimeError):
    kind = "usage"


class ConfigError(AnchorNLLError, ValueError):
    kind = "config"
