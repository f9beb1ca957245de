import pytest

from diffc_lab.lab.errors import DomainError, FramingError, IndexRangeError
from diffc_lab.lab.index_coding import (
    MAX_INDEX,
    BitReader,
    BitWriter,
    codeword_length,
    deserialize_index,
    read_index,
    serialize_index,
    write_index,
)
from diffc_lab.lab.rcc import zipf_codelength, zipf_exponent


def _is_prefix(a, b):
    return len(a) <= len(b) and b[:len(a)] == a


def test_codewords_are_prefix_free():
    lam = 1.5
    words = [serialize_index(n, lam) for n in range(1, 301)]
    for i, a in enumerate(words):
        for j, b in enumerate(words):
            if i != j:
                assert not _is_prefix(a, b), (i + 1, j + 1)


@pytest.mark.parametrize("lam", [1.05, 1.3, 2.0])
def test_codeword_within_two_bits_of_ideal(lam):
    for n in list(range(1, 200)) + [1000, 12345, 2 ** 20 + 7]:
        assert codeword_length(n, lam) <= zipf_codelength(n, lam) + 2.0 + 1e-9


def test_mixed_stream_decodes_in_order():
    lams = [zipf_exponent(kl) for kl in (0.0, 0.5, 3.0, 12.0, 40.0)]
    indices = [1, 2, 17, 4096, 3, 2 ** 33 + 5, 1, 999_999]
    writer = BitWriter()
    plan = [(n, lams[i % len(lams)]) for i, n in enumerate(indices)]
    for n, lam in plan:
        write_index(writer, n, lam)
    reader = BitReader(writer.to_bytes(), writer.bit_length)
    assert [read_index(reader, lam) for _, lam in plan] == indices
    assert reader.remaining == 0


def test_extreme_indices():
    lam = 1.1
    for n in (2 ** 40, MAX_INDEX):
        assert deserialize_index(serialize_index(n, lam), lam) == n
    with pytest.raises(IndexRangeError):
        serialize_index(MAX_INDEX + 1, lam)
    with pytest.raises(DomainError):
        serialize_index(0, lam)
    with pytest.raises(DomainError):
        serialize_index(5, 1.0)


def test_truncated_codeword_is_a_framing_error():
    lam = 1.2
    for n in (2, 77, 5000):
        bits = serialize_index(n, lam)
        with pytest.raises(FramingError):
            deserialize_index(bits[:-1], lam)
    with pytest.raises(FramingError):
        deserialize_index([], lam)


def test_trailing_bits_are_rejected():
    bits = serialize_index(9, 1.4)
    with pytest.raises(FramingError):
        deserialize_index(bits + [0], 1.4)


def test_bits_beyond_the_code_range():
    with pytest.raises(FramingError):
        deserialize_index([1] * 200, 1.5)


def test_bit_reader_limits():
    writer = BitWriter()
    writer.write(0b101, 3)
    data = writer.to_bytes()
    assert data == bytes([0b10100000])
    reader = BitReader(data, 3)
    assert reader.peek(5) == (0b10100, 3)
    assert reader.read(2) == 0b10
    with pytest.raises(FramingError):
        reader.read(2)
    with pytest.raises(FramingError):
        BitReader(data, 9)
