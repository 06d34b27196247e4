"""Exception hierarchy shared by all modules."""


class DispersionError(Exception):
    """Base class for errors raised by this package."""


class InvalidKernelError(DispersionError):
    """Kernel violates a structural requirement (sign, symmetry, moments)."""


class ModeError(DispersionError):
    """Operation called with a kernel/grid of the wrong kind."""


class ShapeError(DispersionError, ValueError):
    """Field does not match the grid it is combined with."""


class DomainError(DispersionError, ValueError):
    """Degenerate or malformed domain."""


class ConfigError(DispersionError, ValueError):
    """Invalid run configuration or parameters."""


class StabilityError(ConfigError):
    """Time step exceeds the explicit stability bound."""

    def __init__(self, dt, bound):
        super().__init__(f"dt={dt:.6g} exceeds stability bound {bound:.6g}")
        self.dt = dt
        self.bound = bound


class NumericalError(DispersionError, ArithmeticError):
    """A numerical procedure failed (eigensolve, divergence, non-finite values)."""


class BlowUpError(NumericalError):
    """Time integration produced non-finite values."""

    def __init__(self, t_last, trace=None):
        super().__init__(f"non-finite state after t={t_last:.6g}")
        self.t_last = t_last
        self.trace = trace


class CertificateError(DispersionError):
    """Contraction certificate is negative and no override was given."""

    def __init__(self, cond1_margin, cond2_margin):
        super().__init__(
            f"contraction certificate failed: cond1_margin={cond1_margin:.6g}, "
            f"cond2_margin={cond2_margin:.6g}"
        )
        self.cond1_margin = cond1_margin
        self.cond2_margin = cond2_margin
