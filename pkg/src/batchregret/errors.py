"""Exception hierarchy. The CLI maps these onto exit codes."""


class BatchRegretError(Exception):
    pass


class DomainError(BatchRegretError, ValueError):
    """Argument outside the domain of a function."""


class BudgetExceededError(BatchRegretError):
    """Exact evaluation would exceed its summand or enumeration budget."""


class UnsupportedPredictorError(BatchRegretError, ValueError):
    pass


class DegenerateChainError(BatchRegretError, ValueError):
    """Markov chain with p + q = 0 has no unique stationary distribution."""


class MalformedDataError(BatchRegretError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
