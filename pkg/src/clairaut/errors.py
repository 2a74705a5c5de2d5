"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line front end:

====  ==========================================
1     parse / model-file errors
2     rank and index-split errors
3     velocity resolution and evaluation errors
4     inconsistent degenerate-velocity system
5     verification failure
====  ==========================================
"""


class ClairautError(Exception):
    exit_code = 1

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    @property
    def kind(self):
        return type(self).__name__


class ParseError(ClairautError):
    exit_code = 1

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message, line=line, column=column)


class UnknownSymbolError(ParseError):
    def __init__(self, name, line=None, column=None):
        self.name = name
        super().__init__(f'unknown symbol "{name}"', line, column)


class ModelError(ClairautError):
    """Malformed or dimensionally inconsistent model file."""

    exit_code = 1


class UnboundSymbolError(ClairautError):
    exit_code = 3

    def __init__(self, name):
        self.name = name
        super().__init__(f'unbound symbol "{name}"')


class DomainError(ClairautError):
    exit_code = 3

    def __init__(self, message, subtree=None):
        self.subtree = subtree
        if subtree is not None:
            message = f"{message} in {subtree}"
        super().__init__(message)


class RankNotConstant(ClairautError):
    exit_code = 2


class SplitUnstable(ClairautError):
    exit_code = 2


class ModelSingular(ClairautError):
    exit_code = 2


class NoConvergence(ClairautError):
    exit_code = 3


class SingularJacobian(ClairautError):
    exit_code = 3


class DependenceOnVelocity(ClairautError):
    exit_code = 3


class FNotInvertible(ClairautError):
    exit_code = 4


class InconsistentSystem(ClairautError):
    exit_code = 4


class MissingGauge(ClairautError):
    exit_code = 4


class IntegrationAborted(ClairautError):
    """Integration stopped early; ``partial`` holds the samples computed so far."""

    def __init__(self, cause, partial, t0=None):
        self.cause = cause
        self.partial = partial
        self.exit_code = getattr(cause, "exit_code", 3)
        t = partial.t[-1] if len(partial.t) else t0
        super().__init__(f"integration aborted after t={t:.17g}: {cause}")


class VerificationError(ClairautError):
    exit_code = 5


class TooFewSamples(VerificationError):
    pass


class CalibrationAmbiguous(VerificationError):
    pass


class SupremumOnBoundary(VerificationError):
    pass
