"""Exception hierarchy.

``DataError`` subclasses describe bad inputs (malformed files, incompatible
checkpoints, shape problems); everything else derived from ``MergeLabError``
is a usage error. The CLI maps the two families to exit codes 2 and 1.
"""


class MergeLabError(Exception):
    """Base class for all errors raised by mergelab."""


class DataError(MergeLabError):
    """Input data is malformed or cannot be combined."""


# tensor store
class MalformedHeader(DataError):
    pass


class OffsetError(DataError):
    pass


class DuplicateName(DataError):
    pass


class UnknownTensor(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# merging
class IncompatibleCheckpoints(DataError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class IntTensorMismatch(DataError):
    pass


class AlphaOutOfRange(MergeLabError, ValueError):
    pass


class EmptyModelList(MergeLabError, ValueError):
    pass


# toy model
class InvalidSpec(MergeLabError, ValueError):
    pass


class InvalidConfig(MergeLabError, ValueError):
    pass


class ShapeMismatch(DataError, ValueError):
    pass


class TokenOutOfRange(DataError, ValueError):
    pass


class NonFiniteLoss(DataError, ArithmeticError):
    pass


# evaluation
class EmptySentenceSet(MergeLabError, ValueError):
    pass


class ZeroVector(DataError, ValueError):
    pass


class LengthMismatch(MergeLabError, ValueError):
    pass


class TooFewPoints(MergeLabError, ValueError):
    pass


class WrongModelCount(MergeLabError, ValueError):
    pass
