"""Exception types raised by the library.

Precondition violations subclass :class:`ValueError`; numerical failures that
can only be detected after a computation subclass :class:`ArithmeticError`.
"""


class DimensionMismatch(ValueError):
    """Operands have incompatible shapes or state counts."""


class NotIrreducible(ValueError):
    """The transition graph is not strongly connected."""


class NonUnique(ArithmeticError):
    """The stationary-distribution system is rank deficient beyond tolerance."""


class NotSimultaneouslyErgodic(ArithmeticError):
    """No power of the kernels contracts uniformly within the fitting horizon."""


class SingularBeyondCentering(ArithmeticError):
    """The centered linear system is rank deficient (reducible kernel)."""


class NoContraction(ValueError):
    """Series summation requires a contraction factor strictly below one."""


class NegativeBeyondTolerance(ArithmeticError):
    """A variance came out negative beyond floating-point tolerance."""


class NonFiniteIncrement(ValueError):
    """A stochastic-approximation increment contains NaN or infinity."""


class ShapeMismatch(ValueError):
    """Adaptation increment shapes are inconsistent with the parameter."""


class ZeroNoiseVector(ValueError):
    """The proposal noise vector is identically zero."""


class OutOfRangeD(ValueError):
    """A kernel-change magnitude lies outside [0, 1]."""


class SchemeEscape(RuntimeError):
    """An adaptation scheme produced a parameter outside its feasible set."""


class MissingSolution(KeyError):
    """No Poisson solution is available for a visited parameter value."""


class DegenerateVariance(ArithmeticError):
    """The oracle variance is zero but the empirical variance is not."""


class DobrushinViolation(ValueError):
    """A kernel has one-step contraction coefficient equal to one."""


class GridTooLarge(ValueError):
    """The requested discretization exceeds the configured state cap."""


class NonPositiveDensity(ValueError):
    """The target density is not strictly positive on the box."""


class ConfigError(ValueError):
    """An experiment configuration file is malformed."""
