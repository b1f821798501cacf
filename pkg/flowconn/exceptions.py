class FlowconnError(Exception):
    pass


class PointOffManifoldError(FlowconnError, ValueError):
    """A point is farther from the manifold than the membership tolerance."""


class CaptureRadiusError(FlowconnError, ValueError):
    """A point is outside the neighbourhood where the retraction is defined."""


class UnknownSpecError(FlowconnError, ValueError):
    """A manifold or curve specification string could not be resolved."""


class CurveError(FlowconnError, ValueError):
    pass


class OneFormEvaluationError(FlowconnError, ArithmeticError):
    pass


class DerivativeEvaluationError(FlowconnError, ArithmeticError):
    pass


class NotTangentError(FlowconnError, ValueError):
    pass


class EstimatorError(FlowconnError, ValueError):
    pass


class ConfigError(FlowconnError, ValueError):
    pass
