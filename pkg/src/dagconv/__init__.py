"""Convolutional networks for signals on directed acyclic graphs."""

from .dag import Dag, WeightLaw, load_dag, permute, sample_er_dag, save_dag, validate_dag
from .errors import (
    AcyclicityError,
    DagConvError,
    DivergenceError,
    MetricError,
    ParameterError,
    ShapeError,
    SingularityError,
)
from .signal import (
    CausalShiftSet,
    ClosurePair,
    DagFilter,
    apply_filter,
    apply_shift,
    fourier,
    frequency_response,
    inverse_fourier,
    predecessor_masks,
    transitive_closure,
)

__version__ = "0.1.0"
