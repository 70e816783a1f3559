"""Exception hierarchy.  ``exit_code`` is what the CLI returns for each family."""


class EfimovError(Exception):
    exit_code = 1


class ConfigError(EfimovError, ValueError):
    exit_code = 2

    def __init__(self, problems):
        self.problems = [problems] if isinstance(problems, str) else list(problems)
        super().__init__("; ".join(self.problems))


class NumericalGuardError(EfimovError, ArithmeticError):
    """A numerical sufficiency or well-posedness check tripped."""

    exit_code = 3


class NonIntegrableError(NumericalGuardError):
    pass


class GridTooCoarseError(NumericalGuardError):
    pass


class IndeterminateThresholdError(NumericalGuardError):
    pass


class BracketError(NumericalGuardError):
    pass


class NonPositiveDeterminantError(NumericalGuardError):
    pass


class NearSingularShiftError(NumericalGuardError):
    pass


class FitUnstableError(NumericalGuardError):
    pass


class InsufficientRangeError(NumericalGuardError):
    pass


class TruncationError(NumericalGuardError):
    """Angular or theta truncation, quadrature degree or Nystrom resolution too small."""


class PreconditionError(EfimovError, ValueError):
    exit_code = 3


class DimensionGuardError(EfimovError):
    exit_code = 4
