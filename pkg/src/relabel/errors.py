"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """Bad shapes, out-of-range values, or inconsistent inputs."""


class NumericFailure(ArithmeticError):
    """A computation produced NaN or Inf."""


class SchemaError(ValueError):
    """A file or config does not match its expected layout."""
