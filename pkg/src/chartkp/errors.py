"""Exception and warning classes raised across the package."""


class ChartKPError(Exception):
    """Base class for all package errors."""


class MalformedAnnotation(ChartKPError):
    pass


class DanglingReference(MalformedAnnotation):
    pass


class OutOfBounds(MalformedAnnotation):
    pass


class MissingGeometry(ChartKPError):
    pass


class LayoutOverflow(ChartKPError):
    pass


class ShapeError(ChartKPError):
    pass


class ShapeMismatch(ShapeError):
    pass


class NonFiniteLoss(ChartKPError):
    pass


class InsufficientSamples(ChartKPError):
    pass


class InsufficientTicks(ChartKPError):
    pass


class NonNumericTick(ChartKPError):
    pass


class EmptyBox(ChartKPError):
    pass


class InsufficientKeypointsWarning(UserWarning):
    """Fewer than two labelled cells were available for a contrastive loss."""
