"""Exception types shared across the package."""


class LayeredDirichletError(Exception):
    """Base class for errors raised by this package."""


class SchemaError(LayeredDirichletError):
    """A count vector, CSV file, or tree does not match its component schema."""


class FitError(LayeredDirichletError):
    """An optimizer failed to converge.

    Carries the iteration count and the final gradient norm so callers can
    report what happened instead of a bare failure.
    """

    def __init__(self, message, n_iter=None, grad_norm=None):
        super().__init__(message)
        self.n_iter = n_iter
        self.grad_norm = grad_norm


class TestAborted(LayeredDirichletError):
    """A layered test could not be completed.

    ``node`` names the offending layer and ``partial`` holds any layer
    results obtained before the abort.
    """

    def __init__(self, message, node=None, partial=None):
        super().__init__(message)
        self.node = node
        self.partial = partial if partial is not None else []


class ConfigError(LayeredDirichletError):
    """A configuration object or file failed validation."""
