"""Exception types raised across the package."""


class DeePointError(Exception):
    """Base class for all package errors."""


# geometry
class NonPositiveDepth(DeePointError, ValueError):
    pass


class InsufficientViews(DeePointError, ValueError):
    pass


class DegenerateGeometry(DeePointError, ValueError):
    pass


class CoincidentPoints(DeePointError, ValueError):
    pass


# simulation / splits
class InfeasibleRoom(DeePointError, ValueError):
    pass


class InsufficientDiversity(DeePointError, ValueError):
    pass


# tokenization / model
class UndetectedJoint(DeePointError, ValueError):
    pass


class EmptyWindow(DeePointError, ValueError):
    pass


# training
class SingleClassDataset(DeePointError, ValueError):
    pass


class NonFiniteLoss(DeePointError, RuntimeError):
    pass


# evaluation
class EmptyInput(DeePointError, ValueError):
    pass


class NoInstances(DeePointError, ValueError):
    pass


class NoEvaluableFrames(DeePointError, ValueError):
    pass


class MissingJoint(DeePointError, KeyError):
    pass


# dataset I/O
class SchemaError(DeePointError, ValueError):
    """Raised when an on-disk record violates the dataset schema.

    ``path`` and ``line`` (1-based) locate the offending record when known.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
            loc += ": "
        super().__init__(loc + message)


class MissingFile(DeePointError, FileNotFoundError):
    pass
