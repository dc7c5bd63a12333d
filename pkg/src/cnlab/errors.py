"""Exception types shared across the package."""


class CnlabError(Exception):
    pass


class ConfigurationError(CnlabError, ValueError):
    """Invalid model/chart/CLI configuration (CLI exit code 2)."""


class ConstructionError(CnlabError, ValueError):
    """A metric failed positive-definiteness at some sample."""


class DomainError(CnlabError, ValueError):
    """Evaluation requested outside the valid interior of an open chart."""


class PreconditionError(CnlabError, ValueError):
    pass


class UnsupportedBackendError(CnlabError, NotImplementedError):
    pass


class ConvergenceError(CnlabError, RuntimeError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals
