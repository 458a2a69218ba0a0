"""Exception hierarchy.

Errors are grouped by the exit code the command line maps them to:
``InputError`` -> 2, ``ModelError`` -> 3.
"""


class PCQAError(Exception):
    """Base class for every error raised by this package."""


class InputError(PCQAError):
    pass


class MissingFile(InputError):
    pass


class MissingProperty(InputError):
    pass


class MalformedHeader(InputError):
    pass


class TruncatedBody(InputError):
    pass


class EmptyCloud(InputError):
    pass


class AlreadyConverted(InputError):
    pass


class ModelError(PCQAError):
    pass


class LayoutMismatch(ModelError):
    pass


class VersionMismatch(ModelError):
    pass


class CorruptFile(ModelError):
    pass


class EvaluationError(PCQAError):
    pass


class ConstantInput(EvaluationError):
    pass


class NoDifferentPairs(EvaluationError):
    pass
