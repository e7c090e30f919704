"""Warning Propagation on sparse random graphs.

Update rules over finite alphabets, the Poissonized fixed-point operator,
a synchronous WP engine on G(n, d/n), Galton-Watson story sampling, the
change branching process, the half-edge ensemble and cascade tracking.
"""

from .errors import (
    ConditioningError,
    FeasibilityError,
    InputError,
    NumericalError,
    ParameterError,
    ResourceError,
    SimplicityError,
    StateError,
    ValidationError,
    WPError,
)
from .rules import Alphabet, UpdateRule, eval_rule, load_rule, make_rule

__version__ = "0.1.0"

__all__ = [
    "Alphabet",
    "UpdateRule",
    "eval_rule",
    "make_rule",
    "load_rule",
    "WPError",
    "InputError",
    "ValidationError",
    "ParameterError",
    "FeasibilityError",
    "ResourceError",
    "StateError",
    "ConditioningError",
    "SimplicityError",
    "NumericalError",
    "__version__",
]
