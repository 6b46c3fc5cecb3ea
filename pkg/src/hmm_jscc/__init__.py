"""Joint source-channel coding of short packets from hidden-Markov sources.

Punctured block encoding, MAP and delayed MAP decoding with learned source
statistics, and the Monte Carlo harness that measures packet error rates.
"""

from .errors import CodeDesignError, ModelError, NumericalError, ParameterError

__version__ = "0.1.0"

__all__ = ["CodeDesignError", "ModelError", "NumericalError", "ParameterError"]
