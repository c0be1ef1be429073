"""Acoustic scene clustering by joint deep-embedding learning and agglomerative clustering."""

from scenecluster.errors import (
    ClusteringError,
    ConvergenceError,
    DegenerateEmbeddingError,
    DisconnectedClusteringError,
    DivergenceError,
    FeatureError,
    ParamFileError,
)

__version__ = "0.1.0"

__all__ = [
    "ClusteringError",
    "ConvergenceError",
    "DegenerateEmbeddingError",
    "DisconnectedClusteringError",
    "DivergenceError",
    "FeatureError",
    "ParamFileError",
    "__version__",
]
