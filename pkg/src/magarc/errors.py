"""Exception hierarchy shared by all magarc modules."""


class MagArcError(Exception):
    """Base class for every error raised by magarc."""


class InputError(MagArcError):
    """Malformed or out-of-contract input data."""


class ConstraintError(MagArcError):
    """Input is well formed but violates a geometric or numerical constraint."""


# geo_frame
class EmptyLog(InputError):
    pass


class FrameDistortion(ConstraintError):
    pass


# glomap
class DomainError(InputError):
    pass


class RankDeficient(ConstraintError):
    pass


class TrackTooShort(ConstraintError):
    pass


class OutOfMapRange(ConstraintError):
    pass


class MapFormatError(InputError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


# kinematics
class QuaternionNormError(InputError):
    pass


# accel_cal
class DegenerateTiming(InputError):
    pass


class UnobservableCalibration(ConstraintError):
    """Least-squares calibration system is rank deficient.

    ``directions`` lists the parameter names spanning the null space.
    """

    def __init__(self, message, directions=()):
        self.directions = tuple(directions)
        if self.directions:
            message = f"{message}; unobservable: {', '.join(self.directions)}"
        super().__init__(message)


class SkipAccelUpdate(ConstraintError):
    pass


# ekf
class TimeRegression(InputError):
    pass


class RejectUpdate(MagArcError):
    def __init__(self, message, mahalanobis=None):
        self.mahalanobis = mahalanobis
        super().__init__(message)


class FilterDivergence(MagArcError):
    """Covariance lost symmetry or positivity."""


# sim
class GeometryError(ConstraintError):
    pass


class InvalidImuTruth(InputError):
    pass
