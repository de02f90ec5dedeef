"""Exception types.  ``exit_code`` is used by the CLI."""


class DagConvError(Exception):
    exit_code = 1


class ParameterError(DagConvError, ValueError):
    exit_code = 2


class ShapeError(DagConvError, ValueError):
    exit_code = 2


class AcyclicityError(DagConvError, ValueError):
    exit_code = 2

    def __init__(self, message, edge=None):
        super().__init__(message)
        self.edge = edge


class SingularityError(DagConvError, ArithmeticError):
    exit_code = 3


class MetricError(DagConvError, ValueError):
    exit_code = 3


class DivergenceError(DagConvError, ArithmeticError):
    """Raised when the training loss stops being finite."""

    exit_code = 3

    def __init__(self, epoch, loss):
        super().__init__(f"loss became non-finite ({loss}) at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss
