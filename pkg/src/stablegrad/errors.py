"""Exception types shared across the package."""


class StablegradError(Exception):
    """Base class for all package errors."""


class ShapeError(StablegradError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(StablegradError, ValueError):
    """An argument lies outside the domain an operation accepts."""


class ContractError(StablegradError, RuntimeError):
    """An operation was called in a state its contract forbids."""


class DataError(StablegradError, ValueError):
    """Input data is malformed (bad CSV row, label out of range, ...)."""


class ConfigError(StablegradError, ValueError):
    """A configuration file or override could not be parsed or validated."""


class TrainingDiverged(StablegradError, FloatingPointError):
    """The training loss became non-finite."""

    def __init__(self, epoch: int, batch: int, last_terms: dict | None):
        self.epoch = epoch
        self.batch = batch
        self.last_terms = last_terms
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch}; "
            f"last finite terms: {last_terms}"
        )
