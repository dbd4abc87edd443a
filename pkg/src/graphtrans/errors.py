"""Exception types shared across the package."""


class GraphTransError(Exception):
    pass


class ShapeError(GraphTransError, ValueError):
    pass


class ParameterError(GraphTransError, ValueError):
    pass


class DegenerateRowError(GraphTransError, ValueError):
    """A softmax row has no unmasked position."""


class DeterminismError(GraphTransError, RuntimeError):
    pass


class LoadError(GraphTransError, OSError):
    pass


class IntegrityError(GraphTransError, ValueError):
    pass


class SchemaError(GraphTransError, ValueError):
    """Invalid configuration. ``key`` holds the dotted path of the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
