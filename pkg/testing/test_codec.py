import math

import numpy as np
import pytest

from diffc_lab.lab.codec import (
    HEADER_SIZE,
    DiffCCodec,
    chunk_overhead,
    decode_to_z,
    encode,
    joint_cost_bits,
    pack_chunks,
    read_bitstream,
    stream_key_from_seed,
    write_bitstream,
)
from diffc_lab.lab.diffusion import make_schedule, step_for_sigma
from diffc_lab.lab.errors import ChunkBudgetError, DomainError, FormatError, FramingError
from diffc_lab.lab.rcc import bound_check
from diffc_lab.lab.sources import GaussianMixtureSource, GaussianSource, standard_normal, two_mode_gmm
from diffc_lab.models.codec import SourceKind, SourceSpec

KEY = stream_key_from_seed(7)
SCHEDULE = make_schedule("cosine", 20)


def _rotated_gmm():
    angle = 0.9
    return GaussianMixtureSource(SourceSpec(
        kind=SourceKind.GMM, dims=2, weights=[0.5, 0.5],
        means=[[-1.0, 0.0], [1.0, 0.5]], variances=[[0.3, 0.5], [0.3, 0.2]],
        rotation=[[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]],
    ))


def test_round_trip_reproduces_encoder_state():
    source = standard_normal()
    result = encode(np.array([0.7]), source, SCHEDULE, 10, 40.0, KEY)
    data = write_bitstream(result.bitstream)
    z = decode_to_z(read_bitstream(data), source)
    np.testing.assert_allclose(z, result.z, rtol=1e-12, atol=1e-12)
    assert result.t_stop == 10
    size = len(result.bitstream.payload)
    assert 8 * (size - 1) < result.ledger.realized_bits <= 8 * size


def test_round_trip_in_a_rotated_frame():
    source = _rotated_gmm()
    schedule = make_schedule("cosine", 12)
    x = np.array([0.4, -0.8])
    result = DiffCCodec(source, schedule).encode(x, 4, KEY, 40.0)
    z = DiffCCodec(source, schedule).decode_to_z(read_bitstream(write_bitstream(result.bitstream)))
    np.testing.assert_allclose(z, result.z, rtol=1e-10, atol=1e-12)


def test_ledger_accounting():
    result = encode(np.array([-1.2]), two_mode_gmm(), SCHEDULE, 3, 4.0, KEY)
    ledger = result.ledger
    assert len(ledger.per_step_kl_bits) == SCHEDULE.steps - 3
    assert [s for chunk in ledger.chunks for s in chunk] == list(range(SCHEDULE.steps, 2, -1))
    assert ledger.bound_bits >= ledger.total_kl_bits
    assert joint_cost_bits(ledger) == pytest.approx(bound_check(ledger.total_kl_bits))
    assert ledger.chunk_model_bits == pytest.approx(chunk_overhead(ledger.total_kl_bits, 4.0))
    assert ledger.candidates_examined >= SCHEDULE.steps - 2


def test_header_fields():
    result = encode(np.array([0.1]), standard_normal(), SCHEDULE, 15, 12.5, KEY)
    header = read_bitstream(write_bitstream(result.bitstream)).header
    assert (header.steps, header.t_stop, header.chunk_bits) == (20, 15, 13)
    assert header.stream_key == KEY
    assert header.source_hash == standard_normal().descriptor_hash


def test_corrupted_headers_are_rejected():
    data = write_bitstream(encode(np.array([0.3]), standard_normal(), SCHEDULE, 10, 40.0, KEY).bitstream)
    with pytest.raises(FormatError):
        read_bitstream(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        read_bitstream(data[:4] + bytes([9]) + data[5:])
    with pytest.raises(FramingError):
        read_bitstream(data[:HEADER_SIZE - 1])
    with pytest.raises(FramingError):
        read_bitstream(data[:-1])
    with pytest.raises(FormatError):
        read_bitstream(data + b"\x00")


def test_decoder_checks_source_and_schedule():
    bitstream = encode(np.array([0.3]), standard_normal(), SCHEDULE, 10, 40.0, KEY).bitstream
    with pytest.raises(FormatError):
        decode_to_z(bitstream, two_mode_gmm())
    with pytest.raises(FormatError):
        DiffCCodec(standard_normal(), make_schedule("cosine", 30)).decode_to_z(bitstream)


def test_step_over_chunk_budget():
    with pytest.raises(ChunkBudgetError) as info:
        encode(np.array([0.3]), standard_normal(), SCHEDULE, 1, 1e-6, KEY)
    assert info.value.kl_bits > info.value.chunk_bits
    with pytest.raises(ChunkBudgetError):
        pack_chunks([3, 2], [0.5, 4.0], 1.0)


def test_pack_chunks_is_greedy_and_ordered():
    assert pack_chunks([5, 4, 3, 2], [0.4, 0.5, 0.3, 0.9], 1.0) == [[5, 4], [3], [2]]
    assert pack_chunks([], [], 1.0) == []


def test_chunk_overhead_formula():
    assert chunk_overhead(80.0, 40.0) == pytest.approx(2 * (45 + math.log2(41)))
    assert chunk_overhead(0.0, 40.0) == 0.0
    with pytest.raises(DomainError):
        chunk_overhead(1.0, 0.0)


def test_expected_rate_equals_mutual_information():
    angle = 0.4
    source = GaussianSource(SourceSpec(
        kind=SourceKind.GAUSSIAN, dims=2, lambdas=[2.0, 0.5],
        rotation=[[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]],
    ))
    schedule = make_schedule("cosine", 100)
    t_stop = step_for_sigma(schedule, 0.5)
    rng = np.random.default_rng(0)
    totals = DiffCCodec(source, schedule).simulate_total_kl(source.sample(10_000, rng), t_stop, rng)
    sigma2 = schedule.sigma_at(t_stop) ** 2
    lam = np.array([2.0, 0.5])
    mutual_info = 0.5 * np.sum(np.log2(1.0 + (1.0 - sigma2) * lam / sigma2))
    se = totals.std() / math.sqrt(totals.size)
    assert abs(totals.mean() - mutual_info) <= 3 * se


def test_dry_run_returns_ledger_only():
    codec = DiffCCodec(standard_normal(), SCHEDULE)
    result = codec.encode(np.array([0.5]), 5, KEY, 40.0, dry_run=True, rng=np.random.default_rng(1))
    assert result.bitstream is None
    assert result.ledger.realized_bits == 0
    assert result.ledger.total_kl_bits > 0
    with pytest.raises(DomainError):
        codec.encode(np.array([0.5]), 5, KEY, 40.0, dry_run=True)
    with pytest.raises(DomainError):
        codec.encode(np.array([0.5]), 21, KEY, 40.0)


def test_reverse_variance_modes():
    codec = DiffCCodec(standard_normal(), SCHEDULE, "forward_posterior")
    result = codec.encode(np.array([0.7]), 10, KEY, 40.0, dry_run=True, rng=np.random.default_rng(4))
    assert result.bitstream is None
    assert result.ledger.total_kl_bits > 0
    with pytest.raises(DomainError):
        codec.encode(np.array([0.7]), 10, KEY, 40.0)
    stream = DiffCCodec(standard_normal(), SCHEDULE, "matched").encode(np.array([0.7]), 10, KEY, 40.0).bitstream
    with pytest.raises(DomainError):
        codec.decode_to_z(stream)
    with pytest.raises(DomainError):
        DiffCCodec(standard_normal(), SCHEDULE, "learned")


def test_stream_keys_depend_on_seed():
    assert len(KEY) == 16
    assert stream_key_from_seed(7) == KEY
    assert stream_key_from_seed(8) != KEY
