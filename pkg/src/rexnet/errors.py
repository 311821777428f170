"""Exception hierarchy shared by every pipeline stage."""


class RexNetError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(RexNetError, ValueError):
    """A file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class ValidationError(RexNetError, ValueError):
    """Input parsed fine but violates a data invariant."""


class MissingEmbeddingError(ValidationError, KeyError):
    """An item has no row in the embedding table."""

    def __init__(self, item: str):
        self.item = item
        super().__init__(f"no embedding for item {item!r}")

    def __str__(self) -> str:
        return self.args[0]


class EmptySplitError(RexNetError):
    """A split or evaluation set ended up with no users."""


class TrainingError(RexNetError, ArithmeticError):
    """Optimization diverged (non-finite loss or parameters)."""

    def __init__(self, message: str, epoch: int | None = None):
        self.epoch = epoch
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)
