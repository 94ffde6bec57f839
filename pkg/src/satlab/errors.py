"""Exception types shared across satlab."""


class SatlabError(Exception):
    """Base class for all satlab errors."""


class DimMismatch(SatlabError, ValueError):
    pass


class LabelConflict(SatlabError, ValueError):
    pass


class InvalidK(SatlabError, ValueError):
    pass


class LengthMismatch(SatlabError, ValueError):
    pass


class UnknownLoss(SatlabError, ValueError):
    pass


class SupportTooLarge(SatlabError, ValueError):
    pass


class EmptyRestriction(SatlabError, ValueError):
    pass


class AllZeroCovs(SatlabError, ValueError):
    pass


class DegenerateVariance(SatlabError, ValueError):
    pass


class ConfigError(SatlabError, ValueError):
    pass


class NonFinite(SatlabError, ArithmeticError):
    """Raised when a loss or parameter becomes NaN/inf during optimisation."""

    def __init__(self, step, what="loss"):
        self.step = step
        super().__init__(f"non-finite {what} at step {step}")
