# Exceptions shared by every fairtext module.
# Each one knows the exit code the CLI should return for it:
#   1: config / validation problem (the user asked for something impossible)
#   2: data problem (a file we were given is broken)
#   3: internal problem (our own maths went wrong)


class FairTextError(Exception):
    """Base class for everything fairtext raises on purpose."""
    exit_code = 3


# --- Exit code 1 ---

class ConfigError(FairTextError):
    exit_code = 1


class InvalidArgumentError(ConfigError):
    pass


# --- Exit code 2 ---

class DataError(FairTextError):
    exit_code = 2


class CorpusSchemaError(DataError):
    def __init__(self, column: str, path=None):
        self.column = column
        where = f" in {path}" if path else ""
        super().__init__(f"missing required column '{column}'{where}")


class CorpusParseError(DataError):
    def __init__(self, message: str, byte_offset: int):
        self.byte_offset = byte_offset
        super().__init__(f"{message} (byte offset {byte_offset})")


class LabelValueError(DataError):
    def __init__(self, row: int, column: str, value):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"row {row}: label '{column}' must be 0 or 1, got {value!r}")


class DuplicateIdError(DataError):
    pass


class EmptyCorpusError(DataError):
    pass


class UnlabeledDocumentError(DataError):
    pass


class LexiconParseError(DataError):
    pass


class LexiconValidationError(DataError):
    pass


class EmbeddingParseError(DataError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


class OutOfVocabularyError(DataError, KeyError):
    def __init__(self, word: str):
        self.word = word
        super().__init__(f"'{word}' is not in the embedding vocabulary")

    def __str__(self):
        return self.args[0]


class ScoreImportError(DataError):
    pass


class UnknownIdError(ScoreImportError):
    pass


class MissingIdError(ScoreImportError):
    pass


class ScoreRangeError(ScoreImportError):
    pass


class AssignmentError(DataError):
    pass


class ModelFormatError(DataError):
    pass


# --- Exit code 3 ---

class InternalError(FairTextError):
    exit_code = 3


class DimensionMismatchError(InternalError):
    pass


class TrainingError(InternalError):
    def __init__(self, message: str, epoch: int):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}")


class OverlappingSpansError(InternalError):
    pass


class ReportMismatchError(InternalError):
    pass
