"""Exception hierarchy. Every error carries a stable machine-readable code."""


class OptRegimeError(Exception):
    code = "ESTIMATOR_FAILURE"

    def __init__(self, message=""):
        super().__init__(message)
        self.message = message

    def as_record(self):
        return {"error": self.code, "message": self.message}


class EmptyStratumError(OptRegimeError):
    code = "EMPTY_STRATUM"


class ZeroWeightError(OptRegimeError):
    code = "ZERO_WEIGHT"


class UnreachableStratumError(OptRegimeError):
    code = "UNREACHABLE_STRATUM"


class HistoryNotRecoverableError(OptRegimeError):
    code = "HISTORY_NOT_RECOVERABLE"


class UnknownStratumError(OptRegimeError):
    code = "UNKNOWN_STRATUM"


class SingularSystemError(OptRegimeError):
    code = "SINGULAR_SYSTEM"


class DegenerateBasisError(OptRegimeError):
    code = "DEGENERATE_BASIS"


class FoldTooSmallError(OptRegimeError):
    code = "FOLD_TOO_SMALL"


class UnsupportedQueryError(OptRegimeError):
    code = "UNSUPPORTED_QUERY"


class InvalidDataError(OptRegimeError):
    code = "INVALID_DATA"
