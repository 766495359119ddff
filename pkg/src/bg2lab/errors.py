"""Exception hierarchy shared by all bg2lab modules."""


class Bg2labError(Exception):
    """Base class for every error raised by the package."""


class ParameterError(Bg2labError, ValueError):
    """An argument lies outside its admissible range."""


class BlockTooLargeError(ParameterError):
    """A block length exceeds the locality cap (a quarter of the ring)."""


class ScaleOrderError(ParameterError):
    """Block scales are not ordered as ``1 <= ell0 <= L``."""


class UnsupportedDensityError(ParameterError):
    """The requested (model, density) pair has no closed-form decomposition."""


class KindMismatchError(Bg2labError, TypeError):
    """A configuration of the wrong kind (exclusion vs energy) was supplied."""


class MollifierError(ParameterError):
    """The mollifier width is finer than the lattice spacing."""


class StateSpaceTooLargeError(ParameterError):
    """The exact oracle was asked to enumerate too many states."""


class ConfigError(Bg2labError, ValueError):
    """An experiment configuration failed validation."""


class NumericalAccuracyError(Bg2labError, ArithmeticError):
    """A numerical routine could not reach its accuracy target."""


class IntegratorAccuracyError(NumericalAccuracyError):
    """The PDMP flow integrator drifted beyond its conservation tolerance."""


class QuadratureError(NumericalAccuracyError):
    """Adaptive quadrature failed to converge."""


class AbsorbingStateWarning(UserWarning):
    """All jump rates vanished; the run was finished with a single dwell."""
