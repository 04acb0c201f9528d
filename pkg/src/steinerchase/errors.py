"""Exception hierarchy shared across the package."""


class ChaseError(Exception):
    """Base class for all library errors."""


class ValidationError(ChaseError, ValueError):
    """Malformed or invalid input (bodies, functions, instances, specs)."""


class InfeasibleBody(ValidationError):
    pass


class Unbounded(ValidationError):
    pass


class InvalidSpec(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class DimensionTooLarge(ValidationError):
    pass


class DualNormViolation(ValidationError):
    pass


class NotNested(ValidationError):
    pass


class EmptyLevelSet(ChaseError):
    pass


class MaxIterations(ChaseError):
    pass


class SolverFailure(ChaseError):
    """A path program did not reach its gap target."""

    def __init__(self, message, iterations=None, best_bound=None):
        self.iterations = iterations
        self.best_bound = best_bound
        super().__init__(f"{message} (iterations={iterations}, best_bound={best_bound})")
