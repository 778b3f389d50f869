"""Exception hierarchy. Every error raised by the package derives from ConteaError."""


class ConteaError(Exception):
    """Base class; the CLI maps any of these to a nonzero exit code."""


class DatasetLayoutError(ConteaError):
    pass


class ParseError(ConteaError):
    def __init__(self, path, line_no, message):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {message}")


class DanglingLinkError(ConteaError):
    pass


class NonMonotonicGrowthError(ConteaError):
    pass


class RelationGrowthError(ConteaError):
    """A later snapshot introduced a relation absent from the earlier one."""


class UnknownEntityError(ConteaError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EmptyGraphError(ConteaError):
    pass


class NumericalInstabilityError(ConteaError):
    def __init__(self, group):
        self.group = group
        super().__init__(f"non-finite gradient in parameter group {group!r}")


class TrainingDivergedError(ConteaError):
    def __init__(self, epoch, loss):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")


class DegenerateVectorError(ConteaError):
    pass


class PreconditionError(ConteaError):
    pass


class EmptyGoldError(ConteaError):
    pass


class OutputError(ConteaError):
    pass


class GenerationInfeasibleError(ConteaError):
    pass


class ConfigError(ConteaError):
    pass


class SnapshotError(ConteaError):
    """Wraps an error raised while processing one snapshot of a run."""

    def __init__(self, index, cause):
        self.index = index
        self.cause = cause
        super().__init__(f"snapshot {index}: {cause}")
