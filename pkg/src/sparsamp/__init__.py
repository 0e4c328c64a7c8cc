"""Steganographic codec over generative-model token streams.

Messages ride the sampling step: a keyed pseudo-random value is shifted
by the message's index among its remaining candidates before sampling,
and each sampled token narrows the candidate set until the chunk is
uniquely decodable. The sampled distribution is never altered, so stego
output is distributed exactly like cover output under the same key.
"""

from .codec import (
    ChunkState,
    Distribution,
    EmbedResult,
    EmbedSession,
    ExtractResult,
    ExtractSession,
    StepSource,
    TokenDraw,
    backward_reconstruct,
    build_distribution,
    embed,
    extract,
    sample,
    sparse_update,
)
from .errors import (
    AmbiguitySignal,
    ConsistencyError,
    DistributionError,
    ExtractionFailure,
    ParameterError,
    ProtocolError,
    SparsampError,
    StreamExhausted,
    TraceFormatError,
)
from .randomness import KeyedPrng, SeedKey, UnitFixed, shift_units, units_to_real

__version__ = "0.1.0"

__all__ = [
    "AmbiguitySignal",
    "ChunkState",
    "ConsistencyError",
    "Distribution",
    "DistributionError",
    "EmbedResult",
    "EmbedSession",
    "ExtractResult",
    "ExtractSession",
    "ExtractionFailure",
    "KeyedPrng",
    "ParameterError",
    "ProtocolError",
    "SeedKey",
    "SparsampError",
    "StepSource",
    "StreamExhausted",
    "TokenDraw",
    "TraceFormatError",
    "UnitFixed",
    "backward_reconstruct",
    "build_distribution",
    "embed",
    "extract",
    "sample",
    "shift_units",
    "sparse_update",
    "units_to_real",
]
