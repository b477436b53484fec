"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad user input: a config field, a file, or a path. The CLI maps it to exit code 1."""


class TrainingDiverged(RuntimeError):
    """A loss became non-finite during training."""

    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration
