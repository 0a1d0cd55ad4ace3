"""Exception hierarchy; the CLI maps these onto exit codes."""


class DecaylabError(Exception):
    """Base class for all package errors."""


class ValidationError(DecaylabError, ValueError):
    """Bad input: parameters, file contents, or violated preconditions."""


class SystemFormatError(ValidationError):
    """A system file could not be parsed."""


class NumericalError(DecaylabError, ArithmeticError):
    """A computation failed or produced an unusable result."""


class BoundVacuousError(NumericalError):
    """A theoretical bound could not be evaluated to a finite number."""
