"""Exception types raised across the package.

Every error carries a ``stage`` string so the CLI can report which part of
the pipeline failed.
"""


class TopoInferError(Exception):
    stage = "general"

    def __init__(self, message, stage=None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage


class DefectiveMatrix(TopoInferError):
    stage = "spectral"


class NotConverged(TopoInferError):
    """Raised when an iterative stage or steady-period search fails.

    ``report`` optionally holds the best partial result (e.g. a solver report).
    """

    stage = "convergence"

    def __init__(self, message, stage=None, report=None):
        super().__init__(message, stage)
        self.report = report


class RankDeficient(TopoInferError):
    stage = "least_squares"


class RankWarning(UserWarning):
    pass


class InfeasibleInput(TopoInferError):
    stage = "input_generation"


class DegenerateDenominator(TopoInferError):
    stage = "identification"


class TimeInvariantClassification(TopoInferError):
    """No injection onset was found; the trajectory should go to TO-TIA."""

    stage = "identification"


class FitDiverged(TopoInferError):
    stage = "input_fit"


class MaxIterations(TopoInferError):
    stage = "iteration"

    def __init__(self, message, stage=None, result=None):
        super().__init__(message, stage)
        self.result = result


class LoopDiverged(MaxIterations):
    """The rebuilt input-free series left the range of the data; carries the partial result."""


class ConfigError(TopoInferError):
    stage = "config"
