"""Exception types shared across the package."""


class ClusteringError(ValueError):
    """Base class for invalid inputs or states anywhere in the pipeline."""


class FeatureError(ClusteringError):
    pass


class DegenerateEmbeddingError(ClusteringError):
    """All selected neighbour pairs coincide, so the kernel scale is zero."""


class DisconnectedClusteringError(ClusteringError):
    """Inter-cluster affinity is zero; the affinity ratio has no finite value."""


class ConvergenceError(ClusteringError):
    pass


class DivergenceError(ClusteringError):
    """Training produced a non-finite loss.

    ``trace`` carries whatever run trace existed when training blew up.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ParamFileError(ClusteringError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
