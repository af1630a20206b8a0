"""Exception types shared across the package."""


class AvgMdpError(Exception):
    """Base class for all package errors."""


class ValidationError(AvgMdpError, ValueError):
    """Input failed a precondition check."""


class InvalidModel(ValidationError):
    pass


class InvalidPolicy(ValidationError):
    pass


class InvalidEpsilon(ValidationError):
    pass


class InvalidWeights(ValidationError):
    pass


class NotCommunicating(ValidationError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class NotFullySupported(ValidationError):
    pass


class DegenerateMeasure(ValidationError):
    pass


class NotInvariant(ValidationError):
    pass


class IllegalAction(ValidationError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ResourceLimit(ValidationError):
    """A brute-force routine would exceed its enumeration cap."""


class BoundNotApplicable(AvgMdpError):
    def __init__(self, lemma, reason=""):
        super().__init__(f"{lemma}: {reason}" if reason else lemma)
        self.lemma = lemma


class NoExplorationNeeded(AvgMdpError):
    pass


class SolverError(AvgMdpError):
    """A numerical routine failed to converge or to certify its output."""
