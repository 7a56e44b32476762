"""Exception types shared across the package."""

import numpy as np


class SingularMatrixError(np.linalg.LinAlgError):
    """A linear system stayed singular after the ridge fallback."""

    def __init__(self, message, cond=float("inf")):
        super().__init__(f"{message} (condition estimate {cond:.3e})")
        self.detail = message
        self.cond = cond


class SingularSystemError(SingularMatrixError):
    """A projection solve failed for one part of an adaptive prior."""

    def __init__(self, message, part=None, cond=float("inf")):
        super().__init__(message if part is None else f"part {part}: {message}", cond)
        self.detail = message
        self.part = part


class UnsupportedDimensionError(ValueError):
    pass


class DivergenceError(ArithmeticError):
    """Raised when an integrator or optimizer produces non-finite values."""

    def __init__(self, message, step=None, history=None):
        if step is not None:
            message = f"{message} at step {step}"
        super().__init__(message)
        self.step = step
        # optimizer runs attach the loss history recorded before the failure
        self.history = history


class ConfigError(ValueError):
    """An experiment configuration failed schema or consistency checks."""
