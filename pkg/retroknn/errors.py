"""Exception hierarchy shared by every retroknn module."""
from __future__ import annotations


class RetroKnnError(Exception):
    pass


class ParseError(RetroKnnError):
    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ValidationError(RetroKnnError):
    def __init__(self, message: str, record_index: int | None = None) -> None:
        self.record_index = record_index
        super().__init__(f"record {record_index}: {message}" if record_index is not None else message)


class ConfigurationError(RetroKnnError):
    pass


class GenerationError(RetroKnnError):
    pass


class TrainingError(RetroKnnError):
    def __init__(self, message: str, epoch: int | None = None) -> None:
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}" if epoch is not None else message)


class FormatError(RetroKnnError):
    pass


class QueryError(RetroKnnError):
    pass


class RetrievalError(RetroKnnError):
    pass


class EvaluationError(RetroKnnError):
    pass
