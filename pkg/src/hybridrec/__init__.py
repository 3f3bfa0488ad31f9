"""Item-based and factor-model recommenders with segment-aware evaluation."""

from .base import DEFAULT, MAIN, DefaultPredictor, RandomPredictor
from .evaluation import (EvaluationReport, cold_start_experiment, evaluate_discovery,
                         evaluate_scoring, ndpm, rmse)
from .gravity import Gravity, GravityParams
from .knn import ItemKNN, TopNRequest, UserProfile, recommend_top_n
from .ratings import DataError, DescriptorCatalog, RatingsMatrix, load_catalog, load_logs
from .similarity import SimilarityMatrix, knn_search

__version__ = "0.1.0"

__all__ = [
    "DEFAULT", "MAIN", "DataError", "DefaultPredictor", "DescriptorCatalog", "EvaluationReport",
    "Gravity", "GravityParams", "ItemKNN", "RandomPredictor", "RatingsMatrix", "SimilarityMatrix",
    "TopNRequest", "UserProfile", "cold_start_experiment", "evaluate_discovery",
    "evaluate_scoring", "knn_search", "load_catalog", "load_logs", "ndpm", "recommend_top_n",
    "rmse",
]
