"""Exception hierarchy shared by all modules."""


class ExtmaxError(Exception):
    """Base class for every error raised by this package."""


class SpaceMismatchError(ExtmaxError, ValueError):
    def __init__(self, message, left=None, right=None):
        super().__init__(message)
        self.left = left
        self.right = right


class BackendError(ExtmaxError, ValueError):
    """Operation not available on the requested grid backend."""


class NotSPDError(ExtmaxError, ValueError):
    def __init__(self, message, point=None, min_eig=None):
        super().__init__(message)
        self.point = point
        self.min_eig = min_eig


class MaterialLawError(ExtmaxError, ValueError):
    """Violation of the selfadjointness (H1) or coercivity (H2) requirement."""

    def __init__(self, message, hypothesis, point=None, value=None):
        super().__init__(message)
        self.hypothesis = hypothesis
        self.point = point
        self.value = value


class SchurConditionError(ExtmaxError, ValueError):
    def __init__(self, message, point=None, value=None):
        super().__init__(message)
        self.point = point
        self.value = value


class SolverError(ExtmaxError, RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class CausalityViolation(ExtmaxError, AssertionError):
    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class CommutationError(ExtmaxError, ValueError):
    def __init__(self, message, k=None, norm=None):
        super().__init__(message)
        self.k = k
        self.norm = norm


class AdmissibilityError(ExtmaxError, ValueError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class PicardDivergence(ExtmaxError, RuntimeError):
    def __init__(self, message, step, contraction=None):
        super().__init__(message)
        self.step = step
        self.contraction = contraction


class ConfigError(ExtmaxError, ValueError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
