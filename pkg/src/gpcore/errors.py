"""Exception types raised by gpcore."""


class GPError(Exception):
    """Base class for all gpcore errors."""


class ValidationError(GPError, ValueError):
    """A model, prior or dataset violates one of its invariants.

    Parameters
    ----------
    code : str
        Stable machine-readable identifier of the violated invariant.
    message : str
        Human readable diagnostic.
    """

    def __init__(self, code, message):
        super().__init__(f"[{code}] {message}")
        self.code = code


class InputError(ValidationError):
    """Array shapes or values handed to an operation are unusable."""

    def __init__(self, message, code="input"):
        super().__init__(code, message)


class NumericalError(GPError, RuntimeError):
    """A factorization or iterative scheme failed."""


class ConvergenceError(NumericalError):
    """An iterative latent solver hit its iteration cap.

    The last state is attached as ``state`` so callers can inspect it.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state
