"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A distribution or estimator was given invalid parameters."""


class DegenerateWeightsError(ValueError):
    """Every weight in a set that must be normalised is zero."""


class ConfigError(ValueError):
    """An experiment configuration cannot be run (unknown id, bad budget, ...)."""
