"""Exception hierarchy. Each class carries a short machine-readable ``code``."""


class SsKanError(Exception):
    code = "error"

    def __init__(self, message: str = "", **context):
        super().__init__(message)
        self.context = context


class InvalidDomainError(SsKanError, ValueError):
    code = "invalid-domain"


class InvalidSizeError(SsKanError, ValueError):
    code = "invalid-size"


class DegenerateRangeError(SsKanError, ValueError):
    code = "degenerate-range"


class DimensionMismatchError(SsKanError, ValueError):
    code = "dimension-mismatch"


class LengthMismatchError(SsKanError, ValueError):
    code = "length-mismatch"


class EmptyBatchError(SsKanError, ValueError):
    code = "empty-batch"


class NonFiniteStateError(SsKanError, ArithmeticError):
    """Raised when a rollout produces NaN/Inf; ``index`` is the failing time step."""

    code = "non-finite-state"

    def __init__(self, message: str = "", index: int | None = None):
        super().__init__(message, index=index)
        self.index = index


class NonFiniteLossError(SsKanError, ArithmeticError):
    code = "non-finite-loss"


class DivergedError(SsKanError, ArithmeticError):
    code = "diverged"

    def __init__(self, message: str = "", epoch: int | None = None, segment: int | None = None, report=None):
        super().__init__(message, epoch=epoch, segment=segment)
        self.epoch = epoch
        self.segment = segment
        self.report = report


class UnstableSpecError(SsKanError, ValueError):
    code = "unstable-spec"


class OrderMismatchError(SsKanError, ValueError):
    code = "order-mismatch"


class UnstableIntegrationError(SsKanError, ArithmeticError):
    code = "unstable-integration"


class AliasingError(SsKanError, ValueError):
    code = "aliasing"


class MalformedHeaderError(SsKanError, ValueError):
    code = "malformed-header"


class NonNumericCellError(SsKanError, ValueError):
    code = "non-numeric-cell"

    def __init__(self, message: str = "", line: int | None = None):
        super().__init__(message, line=line)
        self.line = line


class RankDeficientError(SsKanError, ValueError):
    code = "rank-deficient"


class AllZeroCoefficientsError(SsKanError, ValueError):
    code = "all-zero-coefficients"


class IndexOutOfRangeError(SsKanError, IndexError):
    code = "index-out-of-range"


class ZeroRangeChannelError(SsKanError, ValueError):
    code = "zero-range-channel"


class InvalidConfigError(SsKanError, ValueError):
    code = "invalid-config"


class IOFailureError(SsKanError, OSError):
    code = "io-error"
