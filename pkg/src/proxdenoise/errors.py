"""Exception types raised by the denoising engine."""


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class BadArgument(EngineError):
    """An argument value is outside the documented domain."""


class ShapeMismatch(EngineError):
    """Array shapes are inconsistent with each other or with the operator."""


class DegenerateFilter(EngineError):
    """A raw filter is constant, so it has no zero-mean direction to normalize."""


class DegenerateWeights(EngineError):
    """Group weights sum to zero and cannot be normalized."""


class DegenerateLoss(EngineError):
    """The loss is undefined, e.g. PSNR of an exact reconstruction."""


class NonFiniteLoss(EngineError):
    """Training produced a NaN or infinite loss and was aborted."""


class TapeMismatch(EngineError):
    """A backward pass was given a tape recorded by an incompatible forward pass."""


class CodecError(EngineError):
    """An image file is malformed or uses an unsupported variant."""


class VersionMismatch(EngineError):
    """A checkpoint was written by an incompatible format version."""


class VariantMismatch(EngineError):
    """A checkpoint holds a different operator variant than the caller expects."""
