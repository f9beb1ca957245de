"""
Exception hierarchy for the lab services
"""
from typing import Any, Dict, Optional


class DiffCError(Exception):
    """Base class for all lab errors"""


class DomainError(DiffCError, ValueError):
    """An argument lies outside the domain of the operation"""


class UnsupportedPairError(DomainError):
    """A (prior, target) pair for which no positive w_min exists"""


class UnsupportedSourceError(DiffCError):
    """The source does not provide the quantity an operation needs"""


class IndexRangeError(DomainError):
    """An index cannot be represented by the index code"""


class FramingError(DiffCError):
    """A bit string ended early or does not hold a valid codeword"""


class FormatError(DiffCError):
    """A bitstream header is malformed or does not match the decoder setup"""


class BudgetExceededError(DiffCError):
    """The candidate budget ran out before the stopping rule fired"""

    def __init__(self, message: str, partial_state: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.partial_state = partial_state or {}


class ChunkBudgetError(DiffCError):
    """A single diffusion step carries more information than one chunk"""

    def __init__(self, message: str, step: int, kl_bits: float, chunk_bits: float):
        super().__init__(message)
        self.step = step
        self.kl_bits = kl_bits
        self.chunk_bits = chunk_bits


class NonFiniteScoreError(DiffCError):
    """A score evaluation returned NaN or infinity"""

    def __init__(self, message: str, z: Any = None, noise_level: Optional[float] = None):
        super().__init__(message)
        self.z = z
        self.noise_level = noise_level
