"""Exception hierarchy shared by all modules."""


class StructSparseError(Exception):
    """Base class for errors raised by structsparse."""


class InvalidArgumentError(StructSparseError, ValueError):
    """An input violates a documented precondition."""


class InvalidStateError(StructSparseError, RuntimeError):
    """A sampler was started from a state with non-finite density."""


class NotFoundError(StructSparseError, LookupError):
    """A requested quantity (e.g. an FDR threshold) does not exist."""


class NumericalError(StructSparseError, ArithmeticError):
    """A matrix factorization failed even after jitter retries.

    Attributes
    ----------
    jitters : tuple of float
        The diagonal jitter levels that were attempted.
    """

    def __init__(self, message, jitters=()):
        super().__init__(message)
        self.jitters = tuple(jitters)


class ChainError(NumericalError):
    """Numerical failure inside an MCMC chain.

    Carries the sweep index and a snapshot of the state at failure.
    """

    def __init__(self, message, iteration, state, jitters=()):
        super().__init__(f"{message} (sweep {iteration})", jitters)
        self.iteration = iteration
        self.state = state
