"""Exception types shared across the package."""


class BagknotError(Exception):
    pass


class ConfigError(BagknotError, ValueError):
    """Invalid configuration value or inconsistent checkpoints."""


class InputError(BagknotError, ValueError):
    """An argument violates an operation's precondition."""


class GenerationError(BagknotError):
    """The simulator produced (or would produce) a degenerate surface."""


class DemoInfeasibleError(BagknotError):
    """The scripted expert cannot reach a stage waypoint in time."""


class IntegrityError(BagknotError):
    """On-disk arrays disagree with their manifest."""


class NumericError(BagknotError, FloatingPointError):
    """Non-finite values appeared in a forward pass or loss."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class SamplingError(NumericError):
    pass
