"""Exception hierarchy shared by all geolab modules."""


class GeolabError(Exception):
    """Base class for all errors raised by geolab."""


class ConfigError(GeolabError):
    """Scenario file or CLI arguments could not be interpreted."""


class NumericalFailure(GeolabError):
    """A numerical routine failed to meet its contract."""


# surface level-set errors
class SingularGradient(NumericalFailure):
    pass


class OffSurface(NumericalFailure):
    pass


class NotTangent(NumericalFailure):
    pass


class NoSurfacePointsFound(NumericalFailure):
    pass


class ProjectionDiverged(NumericalFailure):
    pass


class NotConvex(NumericalFailure):
    pass


# integration errors
class StepSizeUnderflow(NumericalFailure):
    pass


class NoReturnWithinTmax(NumericalFailure):
    pass


# chart / perturbation errors
class SelfIntersectingTube(NumericalFailure):
    pass


class ChartInversionFailed(NumericalFailure):
    pass


class KappaVanishesOnSupport(NumericalFailure):
    pass


# orbit searches
class NewtonDiverged(NumericalFailure):
    pass


class CollapseToPoint(NumericalFailure):
    pass


class MapEvaluationFailed(NumericalFailure):
    pass


class ArclengthBudgetExceeded(NumericalFailure):
    pass


# linear / jet algebra
class DimensionMismatch(GeolabError):
    pass


class WrongTupleLength(GeolabError):
    pass


class DegreeMismatch(GeolabError):
    pass


class NotSymplectic(NumericalFailure):
    pass


class SingularU(NumericalFailure):
    pass


class PreconditionBasisFails(GeolabError):
    pass


class UnknownSuite(ConfigError):
    pass
