"""Exception types shared across the package."""


class ChattyError(Exception):
    pass


class ShapeError(ChattyError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(ChattyError, ValueError):
    """An input lies outside the domain of a function (log of 0, probability > 1)."""


class ParameterError(ChattyError, ValueError):
    """A hyperparameter or size argument is out of range."""


class StateError(ChattyError, RuntimeError):
    """An object was used in the wrong state, e.g. backward twice on one tape."""


class NonFiniteLossError(ChattyError, FloatingPointError):
    """A loss term became NaN or infinite during training."""

    def __init__(self, term: str, iteration: int | None = None):
        self.term = term
        self.iteration = iteration
        where = f" at iteration {iteration}" if iteration is not None else ""
        super().__init__(f"non-finite value in loss term {term!r}{where}")
