"""Exception types shared across the codec, sources, protocol and CLI."""


class SparsampError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(SparsampError, ValueError):
    """A caller-supplied parameter is outside its documented domain."""


class DistributionError(SparsampError, ValueError):
    """A probability distribution violates its invariants."""


class StreamExhausted(SparsampError):
    """The keyed random stream ran out of counter space.

    Raised instead of wrapping the counter: reusing randomness is the
    one failure mode a deterministic stream must never hide.
    """


class ConsistencyError(SparsampError):
    """Internal codec state violated an invariant (hard abort, never resample)."""

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class AmbiguitySignal(SparsampError):
    """Extraction reached a candidate count of zero.

    The observed token stream cannot have been produced by any message
    on this token path; used to prune backtracking branches early.
    """

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class ExtractionFailure(SparsampError):
    """Extraction could not recover a plausible message."""


class ProtocolError(SparsampError):
    """The model step protocol was violated (framing, ordering or payload)."""


class TraceFormatError(SparsampError, ValueError):
    """A trace file is malformed or truncated."""
