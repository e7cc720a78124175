"""Exception types raised across the package."""


class RayAlignError(Exception):
    pass


class ZeroVector(RayAlignError, ValueError):
    pass


class DegenerateConfiguration(RayAlignError, ValueError):
    pass


class OutOfDomain(RayAlignError, ValueError):
    pass


class InvalidOrder(RayAlignError, ValueError):
    pass


class CoefficientMismatch(RayAlignError, ValueError):
    pass


class RankDeficient(RayAlignError, ValueError):
    pass


class DimensionMismatch(RayAlignError, ValueError):
    pass


class EmptyPointmap(RayAlignError, ValueError):
    pass


class LengthMismatch(RayAlignError, ValueError):
    pass


class NotReciprocal(RayAlignError, ValueError):
    pass


class IsolatedView(RayAlignError, ValueError):
    pass


class NoValidPixels(RayAlignError, ValueError):
    pass


class EmptyGraph(RayAlignError, ValueError):
    pass


class Disconnected(RayAlignError, ValueError):
    pass


class NonFiniteObjective(RayAlignError, FloatingPointError):
    pass


class EmptyList(RayAlignError, ValueError):
    pass


class RayEscapes(RayAlignError, ValueError):
    pass
