"""Exception types shared across the package.

The CLI maps :class:`InputError` to exit code 2 and :class:`NumericalError`
to exit code 3.
"""


class InputError(ValueError):
    """Invalid input data, file, shape, or parameter."""


class NumericalError(RuntimeError):
    """A computation produced non-finite values it cannot recover from."""
