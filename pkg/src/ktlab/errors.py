"""Exception types shared across the package.

Input/validation problems derive from KtlabInputError (CLI exit code 2),
runtime failures such as divergence derive from KtlabRuntimeError (exit 3).
"""


class KtlabError(Exception):
    pass


class KtlabInputError(KtlabError):
    pass


class KtlabRuntimeError(KtlabError):
    pass


class SchemaError(KtlabInputError):
    """A required column is missing or the file schema is inconsistent."""


class ParseError(KtlabInputError):
    """Malformed content; carries a row number or character offset."""

    def __init__(self, message, row=None, offset=None):
        self.row = row
        self.offset = offset
        if row is not None:
            message = f"{message} (row {row})"
        if offset is not None:
            message = f"{message} (offset {offset})"
        super().__init__(message)


class EmptyDatasetError(KtlabInputError):
    pass


class InfeasibleSplitError(KtlabInputError):
    pass


class InfeasibleSampleError(KtlabInputError):
    pass


class TemplateError(KtlabInputError):
    pass


class FormattingError(KtlabInputError):
    pass


class VocabError(KtlabInputError):
    """Answer words missing from a vocabulary, or similar configuration gaps."""


class DecodeError(KtlabInputError):
    pass


class SequenceLengthError(KtlabInputError):
    pass


class RankError(KtlabInputError):
    pass


class MergeError(KtlabInputError):
    pass


class ParameterError(KtlabInputError):
    pass


class MissingKcError(KtlabInputError):
    pass


class UnknownKcError(KtlabInputError):
    pass


class UndefinedAucError(KtlabInputError):
    """AUC requested for records containing only one class."""


class UnsupportedConfigError(KtlabInputError):
    pass


class ProtocolViolationError(KtlabInputError):
    """Split hygiene broken: test-student data would reach a fit call."""


class DivergenceError(KtlabRuntimeError):
    """Training produced a non-finite loss; message names epoch and batch."""


class OptimizationError(KtlabRuntimeError):
    pass


class CheckpointError(KtlabInputError):
    pass
