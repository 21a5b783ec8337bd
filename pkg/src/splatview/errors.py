"""Exception types shared across the toolkit."""


class SplatViewError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(SplatViewError, ValueError):
    """An argument violates a documented precondition."""


class BehindCameraError(InvalidInputError):
    """A world point has non-positive depth in the target camera."""


class DataError(SplatViewError):
    """A file or manifest is missing, truncated, or ill-formed."""


class OptimizationError(SplatViewError):
    """Non-finite values encountered during an optimization step."""
