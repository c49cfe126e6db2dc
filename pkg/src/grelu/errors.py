"""Exception hierarchy shared by all grelu modules."""


class GReluError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(GReluError, ValueError):
    pass


class ContractError(GReluError, ValueError):
    """A documented precondition of an operation does not hold."""


class InputError(GReluError, ValueError):
    pass


class FormatError(GReluError, ValueError):
    """Malformed binary file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConversionError(GReluError):
    def __init__(self, layer, residual, message=None):
        super().__init__(
            message
            or f"least-squares residual {residual:.3e} at layer {layer} exceeds tolerance"
        )
        self.layer = layer
        self.residual = residual


class DivergenceError(GReluError):
    """Training loss exploded. The partial log and last network are attached."""

    def __init__(self, message, log=None, net=None):
        super().__init__(message)
        self.log = log
        self.net = net


class CostError(GReluError):
    pass
