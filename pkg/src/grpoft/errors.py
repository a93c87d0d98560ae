class InputError(ValueError):
    """Invalid argument, shape, or file content."""


class TrainingError(RuntimeError):
    """Numerical failure during optimization."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step
