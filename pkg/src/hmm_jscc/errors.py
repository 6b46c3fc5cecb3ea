"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument is outside its admissible range."""


class ModelError(ValueError):
    """The source model cannot support the requested operation."""


class CodeDesignError(ValueError):
    """No valid code or codebook exists for the requested parameters."""


class NumericalError(ArithmeticError):
    """A probability vector degenerated (e.g. every entry underflowed)."""
