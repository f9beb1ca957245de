"""
Prefix-free code for candidate indices under the Zipf model p(n) ∝ n^-lambda

Each index n owns the slice [B(n), B(n+1)) of the integer range [0, 2^P),
where B(n) is the exact cumulative Zipf mass below n computed with the
Hurwitz zeta function. The codeword of n is the shortest dyadic interval
that fits inside its slice, so codewords are prefix-free and at most two
bits longer than the ideal codelength.
"""
import logging
from functools import lru_cache
from typing import List, Tuple

import mpmath

from diffc_lab.lab.errors import DomainError, FramingError, IndexRangeError

logger = logging.getLogger("diffc_rcc")

PRECISION_BITS = 160
WORKING_DPS = 60
MAX_INDEX = 2 ** 62
_SCALE = 1 << PRECISION_BITS


class BitWriter:
    """Accumulates bits most-significant first"""

    def __init__(self):
        self._bits: List[int] = []

    def write(self, value: int, width: int) -> None:
        for shift in range(width - 1, -1, -1):
            self._bits.append((value >> shift) & 1)

    def extend(self, bits: List[int]) -> None:
        self._bits.extend(bits)

    @property
    def bit_length(self) -> int:
        return len(self._bits)

    def bits(self) -> List[int]:
        return list(self._bits)

    def to_bytes(self) -> bytes:
        out = bytearray()
        for start in range(0, len(self._bits), 8):
            chunk = self._bits[start:start + 8]
            byte = 0
            for bit in chunk:
                byte = (byte << 1) | bit
            byte <<= 8 - len(chunk)
            out.append(byte)
        return bytes(out)


class BitReader:
    """Reads bits most-significant first; reads past the end raise FramingError"""

    def __init__(self, data: bytes, bit_length: int = None):
        self._data = data
        self._limit = len(data) * 8 if bit_length is None else bit_length
        if self._limit > len(data) * 8:
            raise FramingError(f"bit length {self._limit} exceeds {len(data)} bytes")
        self._pos = 0

    @property
    def remaining(self) -> int:
        return self._limit - self._pos

    @property
    def position(self) -> int:
        return self._pos

    def _bit(self, index: int) -> int:
        return (self._data[index >> 3] >> (7 - (index & 7))) & 1

    def peek(self, width: int) -> Tuple[int, int]:
        """Next ``width`` bits zero-padded past the end, plus how many were real"""
        available = min(width, self.remaining)
        value = 0
        for i in range(width):
            bit = self._bit(self._pos + i) if i < available else 0
            value = (value << 1) | bit
        return value, available

    def skip(self, width: int) -> None:
        if width > self.remaining:
            raise FramingError(f"need {width} bits, only {self.remaining} left")
        self._pos += width

    def read(self, width: int) -> int:
        value, available = self.peek(width)
        if available < width:
            raise FramingError(f"need {width} bits, only {available} left")
        self._pos += width
        return value


def _check_lambda(zipf_lambda: float) -> None:
    if not (zipf_lambda > 1.0):
        raise DomainError(f"Zipf exponent must exceed 1, got {zipf_lambda}")


@lru_cache(maxsize=256)
def _zeta_total(zipf_lambda: float) -> mpmath.mpf:
    with mpmath.workdps(WORKING_DPS):
        return mpmath.zeta(mpmath.mpf(zipf_lambda))


@lru_cache(maxsize=65536)
def _boundary(n: int, zipf_lambda: float) -> int:
    """B(n) = floor(2^P * P(N < n)); B(1) = 0"""
    if n <= 1:
        return 0
    with mpmath.workdps(WORKING_DPS):
        s = mpmath.mpf(zipf_lambda)
        tail = mpmath.zeta(s, n) / _zeta_total(zipf_lambda)
        return int(mpmath.floor((1 - tail) * _SCALE))


def _codeword(n: int, zipf_lambda: float) -> Tuple[int, int]:
    """(value, length) of the shortest dyadic interval inside the slice of n"""
    lo = _boundary(n, zipf_lambda)
    hi = _boundary(n + 1, zipf_lambda)
    if hi <= lo:
        raise IndexRangeError(f"index {n} has no representable mass at lambda={zipf_lambda}")
    for length in range(1, PRECISION_BITS + 1):
        step = 1 << (PRECISION_BITS - length)
        k = -(-lo // step)
        if (k + 1) * step <= hi:
            return k, length
    raise IndexRangeError(f"index {n} needs more than {PRECISION_BITS} bits")


def _check_index(n: int) -> None:
    if n < 1:
        raise DomainError(f"indices start at 1, got {n}")
    if n > MAX_INDEX:
        raise IndexRangeError(f"index {n} exceeds the coder range 2^62")


def codeword_length(n: int, zipf_lambda: float) -> int:
    _check_lambda(zipf_lambda)
    _check_index(n)
    return _codeword(n, zipf_lambda)[1]


def serialize_index(n: int, zipf_lambda: float) -> List[int]:
    """
    Encode an index as a list of bits

    :param n: index, 1 <= n <= 2^62
    :param zipf_lambda: Zipf exponent shared with the decoder
    :return: prefix-free codeword, most-significant bit first
    """
    _check_lambda(zipf_lambda)
    _check_index(n)
    value, length = _codeword(n, zipf_lambda)
    writer = BitWriter()
    writer.write(value, length)
    return writer.bits()


def write_index(writer: BitWriter, n: int, zipf_lambda: float) -> int:
    bits = serialize_index(n, zipf_lambda)
    writer.extend(bits)
    return len(bits)


def _locate(point: int, zipf_lambda: float) -> int:
    """Index whose slice contains ``point``"""
    if point >= _boundary(MAX_INDEX + 1, zipf_lambda):
        raise FramingError("bits do not fall inside the slice of any representable index")
    # exponential search for an upper bracket, then bisection
    hi = 1
    while _boundary(hi + 1, zipf_lambda) <= point:
        hi = min(hi * 2, MAX_INDEX)
    lo = max(1, hi // 2)
    while lo < hi:
        mid = (lo + hi) // 2
        if _boundary(mid + 1, zipf_lambda) <= point:
            lo = mid + 1
        else:
            hi = mid
    return lo


def read_index(reader: BitReader, zipf_lambda: float) -> int:
    """Decode one index, consuming exactly its codeword"""
    _check_lambda(zipf_lambda)
    if reader.remaining <= 0:
        raise FramingError("bit string ended before the next index")
    point, available = reader.peek(PRECISION_BITS)
    n = _locate(point, zipf_lambda)
    value, length = _codeword(n, zipf_lambda)
    if length > available:
        raise FramingError(f"codeword of {length} bits truncated after {available} bits")
    if point >> (PRECISION_BITS - length) != value:
        raise FramingError("bits are not a valid codeword")
    reader.skip(length)
    return n


def deserialize_index(bits: List[int], zipf_lambda: float) -> int:
    """Inverse of serialize_index; the bit list must hold exactly one codeword"""
    writer = BitWriter()
    writer.extend(list(bits))
    reader = BitReader(writer.to_bytes(), writer.bit_length)
    n = read_index(reader, zipf_lambda)
    if reader.remaining:
        raise FramingError(f"{reader.remaining} trailing bits after the codeword")
    return n
