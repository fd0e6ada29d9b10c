"""Batch universal prediction for binary memoryless and first-order Markov sources."""

__version__ = "0.1.0"

from batchregret.errors import (
    BatchRegretError,
    BudgetExceededError,
    DegenerateChainError,
    DomainError,
    MalformedDataError,
    UnsupportedPredictorError,
)
from batchregret.predictors import BETA_0, PredictorSpec
from batchregret.sources import (
    ExperimentShape,
    MarkovParam,
    MemorylessParam,
    SufficientCounts,
    ThetaRange,
    TrainingSet,
    extract_counts,
    sample_markov,
    sample_memoryless,
)

__all__ = [
    "BETA_0",
    "BatchRegretError",
    "BudgetExceededError",
    "DegenerateChainError",
    "DomainError",
    "ExperimentShape",
    "MalformedDataError",
    "MarkovParam",
    "MemorylessParam",
    "PredictorSpec",
    "SufficientCounts",
    "ThetaRange",
    "TrainingSet",
    "UnsupportedPredictorError",
    "extract_counts",
    "sample_markov",
    "sample_memoryless",
]
