"""Exception hierarchy shared across the package."""


class ConsolidateError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ConsolidateError):
    """Array shapes are incompatible with the requested operation."""


class DomainError(ConsolidateError):
    """An argument lies outside the operation's domain."""


class ParseError(ConsolidateError):
    """A byte stream does not conform to the expected file format."""


class TransportError(ConsolidateError):
    """A download failed at the network level."""


class IntegrityError(ConsolidateError):
    """A file's checksum does not match the expected digest."""


class ConsistencyError(ConsolidateError):
    """Two values that must agree (shapes, cache/batch pairing) do not."""


class StateError(ConsolidateError):
    """An operation was applied to a state that does not admit it."""


class ConfigError(ConsolidateError):
    """A configuration file or flag set is invalid."""


class DivergenceError(ConsolidateError):
    """Training produced a non-finite loss.

    Carries enough context (epoch, penalty weight, and optionally the
    regime/task added by the runner) to report where the blow-up happened.
    """

    def __init__(self, message: str, *, epoch: int, lam: float,
                 task_id: int | None = None, regime: str | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.lam = lam
        self.task_id = task_id
        self.regime = regime
