"""Exception types shared across the package."""


class BregBayesError(Exception):
    pass


class InvalidArgumentError(BregBayesError, ValueError):
    pass


class DomainError(BregBayesError, ValueError):
    """A point lies outside the domain of the potential."""


class NonSmoothPointError(BregBayesError, ValueError):
    """The gradient was requested at a kink of the potential."""


class UnsupportedOperationError(BregBayesError, NotImplementedError):
    """The model does not provide the oracle an operation needs."""


class ConvergenceError(BregBayesError, RuntimeError):
    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class ConfigError(BregBayesError, ValueError):
    pass
