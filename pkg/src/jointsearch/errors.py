"""Exception types shared across the package."""


class JointSearchError(Exception):
    """Base class for all errors raised by jointsearch."""


class SpaceConfigError(JointSearchError, ValueError):
    pass


class InvalidInputError(JointSearchError, ValueError):
    """An (arch, policy) pair failed validation."""

    def __init__(self, violations):
        self.violations = list(violations)
        msg = "; ".join(str(v) for v in self.violations) or "invalid input"
        super().__init__(msg)


class CardinalityOverflowError(JointSearchError):
    def __init__(self, count, limit):
        self.count = count
        self.limit = limit
        super().__init__(f"space has {count} pairs, exceeds limit {limit}")


class MalformedEncodingError(JointSearchError, ValueError):
    pass


class DimensionMismatchError(JointSearchError, ValueError):
    pass


class NonFiniteLossError(JointSearchError, ArithmeticError):
    def __init__(self, epoch):
        self.epoch = epoch
        super().__init__(f"non-finite training loss at epoch {epoch}")


class CorruptCheckpointError(JointSearchError):
    pass


class FingerprintWarning(UserWarning):
    """A checkpoint or table was built for a different search space."""


class FingerprintMismatchError(JointSearchError):
    pass


class DegenerateTestSetError(JointSearchError, ValueError):
    pass


class MissingKeyError(JointSearchError, KeyError):
    def __init__(self, key):
        self.key = key
        super().__init__(f"no cost-table entry for {key}")

    def __str__(self):
        return self.args[0]


class IncompleteTableError(JointSearchError):
    pass


class MissingSpatialMetadataError(JointSearchError):
    pass


class InfeasibleConstraintError(JointSearchError):
    def __init__(self, message, min_cost=None):
        self.min_cost = min_cost
        super().__init__(message)


class MutationStuckError(JointSearchError):
    pass


class CrossoverStuckError(JointSearchError):
    pass


class DegenerateTensorError(JointSearchError, ValueError):
    pass


class DivisibilityError(JointSearchError, ValueError):
    pass
