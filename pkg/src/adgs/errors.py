"""Exception types raised across the package."""


class InvalidParameterError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class SceneLoadError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class MetricUndefinedError(ValueError):
    """A metric has no defined value for the given input (e.g. constant depth)."""
