"""Exception hierarchy shared by the numerical modules."""


class BubblyError(Exception):
    """Base class for all library errors."""


class ConfigError(BubblyError, ValueError):
    """Invalid argument or configuration value."""


class NumericalError(BubblyError, ArithmeticError):
    """A numerical procedure failed to meet its contract."""


class SpecialFunctionDomainError(ConfigError):
    """Argument outside the domain of a special function."""


class SpecialFunctionRangeError(NumericalError):
    """Special function value overflows double precision."""


class ResonanceError(NumericalError):
    """Wavenumber sits on an empty-lattice resonance k = |alpha + q|."""


class GammaPointError(ConfigError):
    """Bloch vector too close to the origin for the Laplace kernel."""


class SingularityError(NumericalError):
    """Green's function requested at (or next to) a lattice point."""


class ConvergenceError(NumericalError):
    """Adaptive lattice-sum truncation exceeded its shell budget."""


class DiscretizationError(NumericalError):
    """Boundary quadrature is not resolved at the requested tolerance."""


class StepError(NumericalError):
    """Finite-difference step too small (Richardson disagreement)."""


class ConeMissingError(NumericalError):
    """No double characteristic value found at the Dirac point."""
