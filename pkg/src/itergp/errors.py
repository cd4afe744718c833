"""Exception types shared across the package."""


class InputError(ValueError):
    """Raised when user-supplied inputs have the wrong shape, type or range."""


class NumericalError(RuntimeError):
    """Raised when a factorization or iterative procedure fails numerically."""


class UnsupportedKernelError(TypeError):
    """Raised when an operation needs a capability the kernel lacks."""
