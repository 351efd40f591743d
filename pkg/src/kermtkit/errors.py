"""Exception hierarchy.

Every error carries a ``category`` used by the CLI to emit a machine-readable
failure line on stderr.
"""


class KermtError(Exception):
    category = "KermtError"

    def __init__(self, message: str = ""):
        super().__init__(message)
        self.category = type(self).__name__


# smiles
class SmilesError(KermtError, ValueError):
    pass


class EmptyInput(SmilesError):
    pass


class UnmatchedRingClosure(SmilesError):
    pass


class UnbalancedParenthesis(SmilesError):
    pass


class UnknownAtomSymbol(SmilesError):
    pass


class SmilesSyntaxError(SmilesError):
    pass


class InvalidAromaticity(SmilesError):
    pass


# featurize
class AllMoleculesInvalid(KermtError):
    pass


class LengthMismatch(KermtError, ValueError):
    pass


class EmptyReference(KermtError, ValueError):
    pass


class SchemaMismatch(KermtError):
    pass


# pretrain labels
class EmptyCorpus(KermtError, ValueError):
    pass


class VocabMismatch(KermtError):
    pass


# autodiff
class ShapeMismatch(KermtError, ValueError):
    pass


class IndexOutOfRange(KermtError, IndexError):
    pass


class NonScalarLoss(KermtError, ValueError):
    pass


# checkpoints
class VersionMismatch(KermtError):
    pass


class CorruptFile(KermtError):
    pass


class MissingTensor(KermtError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# training
class NoObservedEntries(KermtError, ValueError):
    pass


class EmptyFold(KermtError, ValueError):
    pass


class ConstantTask(KermtError, ValueError):
    pass


# splits
class MissingDate(KermtError, ValueError):
    pass


class UnparseableDate(KermtError, ValueError):
    pass


class ConvergenceFailure(KermtError, RuntimeError):
    pass


class InsufficientEligibleRows(KermtError, ValueError):
    pass


class UnknownTask(KermtError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class TooSmall(KermtError, ValueError):
    pass


# eval
class DegenerateVariance(KermtError, ValueError):
    pass


class TooFewCoObserved(KermtError, ValueError):
    pass


class EmptyTrainSet(KermtError, ValueError):
    pass


class TaskMismatch(KermtError, ValueError):
    pass


# data / cli
class MissingSmilesColumn(KermtError, ValueError):
    pass


class NonNumericCell(KermtError, ValueError):
    def __init__(self, row: int, column: str, value: str):
        super().__init__(f"non-numeric cell {value!r} at row {row} column {column!r}")
        self.row = row
        self.column = column


class ConfigError(KermtError, ValueError):
    pass
