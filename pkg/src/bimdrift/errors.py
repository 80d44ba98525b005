"""Exception types raised across the package."""


class BimDriftError(Exception):
    """Base class for all package errors."""


class GeometryError(BimDriftError, ValueError):
    pass


class CollinearInput(GeometryError):
    pass


class NonCoplanarInput(GeometryError):
    pass


class ParseError(BimDriftError, ValueError):
    """A file could not be parsed into the expected structure."""


class ValidationError(BimDriftError, ValueError):
    """Parsed content violates a model invariant (duplicate id, degenerate wall...)."""


class SingularCovariance(BimDriftError, ArithmeticError):
    pass


class EmptyMatchSet(BimDriftError):
    pass


class NonFiniteCost(BimDriftError, ArithmeticError):
    """Gauss-Newton diverged to a non-finite cost."""


class UnknownWallId(BimDriftError, KeyError):
    pass


class OutOfOrderKeyframe(BimDriftError):
    pass


class WaypointOutsideScene(BimDriftError, ValueError):
    pass
