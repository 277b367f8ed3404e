"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shapes are inconsistent with what an operation requires."""


class FormatError(ValueError):
    """A serialized file is malformed, truncated, or has a bad magic/version."""


class CompatibilityError(FormatError):
    """A file is well formed but belongs to a different generator or bank."""


class StateError(RuntimeError):
    """An operation was called on a state object that is not ready for it."""
