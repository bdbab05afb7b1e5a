"""Exception types shared across the package."""


class LobqrError(Exception):
    """Base class for all package errors."""


class ConfigInvalid(LobqrError):
    """A configuration value is out of range or inconsistent."""


class BookError(LobqrError):
    """A snapshot violates an order-book invariant."""

    reason = "invalid"


class CrossedBook(BookError):
    """Best ask at or below best bid."""

    reason = "crossed_book"


class NonMonotoneLevels(BookError):
    """Ask prices not strictly increasing or bid prices not strictly decreasing."""

    reason = "non_monotone_levels"


class NonPositiveSize(BookError):
    """A resting level with size <= 0."""

    reason = "non_positive_size"


class NonMonotoneTimestamp(BookError):
    """Event timestamp not strictly greater than the previous accepted one."""

    reason = "non_monotone_timestamp"


class MalformedRow(LobqrError):
    """A CSV row that cannot be parsed into the snapshot schema."""

    def __init__(self, line: int | None, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class StreamTooShort(LobqrError):
    """Not enough usable rows to build a single input window."""


class EmptySplit(LobqrError):
    """A chronological split produced an empty train/validation/test range."""


class ShapeMismatch(LobqrError):
    """Operand shapes incompatible for a kernel."""


class CheckFailed(LobqrError):
    """A gradient check exceeded its tolerance."""

    def __init__(self, name: str, index: tuple, analytic: float, numeric: float, rel_err: float):
        self.name = name
        self.index = index
        self.analytic = analytic
        self.numeric = numeric
        self.rel_err = rel_err
        super().__init__(
            f"gradient mismatch at {name}{list(index)}: "
            f"analytic={analytic:.6e} numeric={numeric:.6e} rel_err={rel_err:.3e}"
        )


class DivergedLoss(LobqrError):
    """Training produced a non-finite loss."""


class SingularDesign(LobqrError):
    """Least-squares design matrix is rank deficient."""


class EmptySegment(LobqrError):
    """No observations available to fit combination weights."""


class WeightsOffSimplex(LobqrError):
    """Combination weights negative or not summing to one."""


class EmptyInput(LobqrError):
    """A metric was requested on zero samples."""


class TooFewSamples(LobqrError):
    """A statistical test was invoked on an empty sample."""


class MissingArtifact(LobqrError):
    """A pipeline stage requires a file another stage has not produced."""


class LockHeld(LobqrError):
    """Another run owns the output directory."""
