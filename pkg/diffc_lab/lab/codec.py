"""
Progressive DiffC codec over analytic sources

The encoder sends z_T, then refines it step by step down to t_stop. Each
step is one reverse-channel-coding transmission of the forward-process
posterior q(z_s | z_{s+1}, x) against the decoder's model p(z_s | z_{s+1}).
Everything runs in the source's independent-coordinate frame; inputs and
outputs are rotated at the boundary.
"""
import hashlib
import logging
import math
import struct
from typing import List, NamedTuple, Optional

import numpy as np

from diffc_lab.config import settings
from diffc_lab.lab.diffusion import schedule_from_id
from diffc_lab.lab.errors import ChunkBudgetError, DomainError, FormatError, FramingError
from diffc_lab.lab.index_coding import BitReader, BitWriter, read_index, write_index
from diffc_lab.lab.rcc import (
    DiagonalGaussian,
    bound_check,
    gaussian_wmin,
    rcc_decode,
    rcc_encode,
    zipf_exponent,
)
from diffc_lab.lab.sources import AnalyticSource
from diffc_lab.models.codec import (
    Bitstream,
    BitstreamHeader,
    DiffusionSchedule,
    EncodeResult,
    RateLedger,
)
from diffc_lab.models.rcc import RccChannel

logger = logging.getLogger("diffc_codec")

LOG2E = 1.4426950408889634
HEADER_FORMAT = "<4sBBHHI16s32sI"
HEADER_SIZE = struct.calcsize(HEADER_FORMAT)
MAGIC = b"DIFC"
VERSION = 1
VARIANCE_MODES = ("matched", "forward_posterior")
# prior variance equals the target variance, so RCC has no valid w_min
DRY_RUN_ONLY_MODES = ("forward_posterior",)


def chunk_overhead(total_kl_bits: float, chunk_bits: float) -> float:
    """(C / B) (B + log2(B + 1) + 5): cost of sending C bits in chunks of B"""
    if not chunk_bits > 0:
        raise DomainError(f"chunk budget must be positive, got {chunk_bits}")
    if total_kl_bits < 0:
        raise DomainError(f"total KL must be nonnegative, got {total_kl_bits}")
    return total_kl_bits / chunk_bits * (chunk_bits + math.log2(chunk_bits + 1.0) + 5.0)


def pack_chunks(steps: List[int], kl_bits: List[float], chunk_bits: float) -> List[List[int]]:
    """Greedy, order-preserving grouping of steps into chunks of at most B bits of KL"""
    chunks: List[List[int]] = []
    current: List[int] = []
    load = 0.0
    for step, kl in zip(steps, kl_bits):
        if kl > chunk_bits:
            raise ChunkBudgetError(
                f"step {step} carries {kl:.3f} bits, more than the chunk budget of {chunk_bits} bits",
                step=step, kl_bits=kl, chunk_bits=chunk_bits,
            )
        if current and load + kl > chunk_bits:
            chunks.append(current)
            current, load = [], 0.0
        current.append(step)
        load += kl
    if current:
        chunks.append(current)
    return chunks


def joint_cost_bits(ledger: RateLedger) -> float:
    """Cost of sending q(z_{T:t_stop} | x) as a single transmission, for comparison"""
    return bound_check(ledger.total_kl_bits)


def stream_key_from_seed(seed: int) -> bytes:
    return hashlib.blake2b(str(int(seed)).encode(), digest_size=16, person=b"diffc-stream").digest()


class StepConditionals(NamedTuple):
    """Prior p(z_s | z_{s+1}) and the target's affine map x -> c_x x + shift"""
    prior_mean: np.ndarray
    prior_var: np.ndarray
    target_scale: float
    target_shift: np.ndarray
    target_var: float
    info_bits: np.ndarray


def _gaussian_kl_rows(target_mean, target_var, prior_mean, prior_var) -> np.ndarray:
    ratio = target_var / prior_var
    nats = 0.5 * np.sum(ratio - 1.0 - np.log(ratio) + (target_mean - prior_mean) ** 2 / prior_var, axis=1)
    return np.maximum(nats, 0.0) * LOG2E


class DiffCCodec:
    """Encoder and decoder bound to one source and schedule"""

    def __init__(self, source: AnalyticSource, schedule: DiffusionSchedule,
                 reverse_variance: Optional[str] = None):
        self.source = source
        self.schedule = schedule
        self.reverse_variance = reverse_variance or settings.DIFFC_REVERSE_VARIANCE
        if self.reverse_variance not in VARIANCE_MODES:
            raise DomainError(f"reverse variance must be one of {VARIANCE_MODES}, got {self.reverse_variance}")
        self.rotation = source.rotation
        self.frame = source.canonical()
        self.dims = source.dims
        self._marginal_mean = self.frame.mean()
        self._marginal_var = np.diag(np.atleast_2d(self.frame.covariance())).copy()

    def _to_frame(self, x: np.ndarray) -> np.ndarray:
        return x if self.rotation is None else x @ self.rotation

    def _from_frame(self, z: np.ndarray) -> np.ndarray:
        return z if self.rotation is None else z @ self.rotation.T

    def conditionals(self, step: int, z_next: Optional[np.ndarray]) -> StepConditionals:
        """
        Model prior and target coefficients for the transmission at ``step``

        :param step: s in T..t_stop
        :param z_next: rows of z_{s+1} in the source frame; ignored at s = T
        """
        sched = self.schedule
        if step == sched.steps:
            alpha = sched.alpha_at(step)
            sigma2 = sched.sigma_at(step) ** 2
            prior_var = alpha ** 2 * self._marginal_var + sigma2
            rows = 1 if z_next is None else np.atleast_2d(z_next).shape[0]
            info = 0.5 * np.sum(np.log2(prior_var / sigma2))
            return StepConditionals(
                prior_mean=np.broadcast_to(alpha * self._marginal_mean, (rows, self.dims)),
                prior_var=np.broadcast_to(prior_var, (rows, self.dims)),
                target_scale=alpha,
                target_shift=np.zeros((rows, self.dims)),
                target_var=sigma2,
                info_bits=np.full(rows, info),
            )

        z_next = np.atleast_2d(z_next)
        alpha_s = sched.alpha_at(step)
        alpha_next = sched.alpha_at(step + 1)
        sigma2_s = sched.sigma_at(step) ** 2
        sigma2_next = sched.sigma_at(step + 1) ** 2
        # transition variance 1 - (alpha_{s+1}/alpha_s)^2 from the beta increment
        sigma2_trans = -math.expm1(-sched.beta[step])
        c_x = alpha_s * sigma2_trans / sigma2_next
        c_z = (alpha_next / alpha_s) * sigma2_s / sigma2_next
        post_var = sigma2_trans * sigma2_s / sigma2_next

        eta_next = sched.eta_at(step + 1)
        y = z_next / alpha_next
        x_mean = self.frame.posterior_mean(y, eta_next)
        x_var = self.frame.posterior_var(y, eta_next)
        shift = c_z * z_next
        if self.reverse_variance == "matched":
            prior_var = post_var + c_x ** 2 * x_var
        else:
            prior_var = np.full_like(x_var, post_var)
        info = 0.5 * np.sum(np.log2(1.0 + c_x ** 2 * x_var / post_var), axis=1)
        return StepConditionals(
            prior_mean=shift + c_x * x_mean,
            prior_var=prior_var,
            target_scale=c_x,
            target_shift=shift,
            target_var=post_var,
            info_bits=info,
        )

    def encode(self, x: np.ndarray, t_stop: int, stream_key: bytes,
               chunk_bits: Optional[float] = None, dry_run: bool = False,
               rng: Optional[np.random.Generator] = None) -> EncodeResult:
        """
        Encode one input down to step t_stop

        :param x: M-vector in the source's frame
        :param t_stop: last transmitted step, 1 <= t_stop <= T
        :param stream_key: 16-byte shared seed
        :param chunk_bits: chunk budget B
        :param dry_run: draw each z_s directly from its target instead of running RCC;
            yields the ledger without a bitstream
        :param rng: generator for dry runs
        :return: bitstream (None for dry runs), ledger and the reached z_{t_stop}
        """
        chunk_bits = chunk_bits or settings.DIFFC_CHUNK_BITS
        sched = self.schedule
        if not 1 <= t_stop <= sched.steps:
            raise DomainError(f"t_stop {t_stop} outside 1..{sched.steps}")
        if dry_run and rng is None:
            raise DomainError("dry runs need a random generator")
        if not dry_run:
            self._check_transmittable()
        x = np.asarray(x, dtype=np.float64).reshape(1, self.dims)
        x_frame = self._to_frame(x)

        writer = BitWriter()
        steps = list(range(sched.steps, t_stop - 1, -1))
        kl_bits: List[float] = []
        ideal_bits = 0.0
        examined = 0
        z = None
        for step in steps:
            cond = self.conditionals(step, z)
            target_mean = cond.target_scale * x_frame + cond.target_shift
            kl = float(_gaussian_kl_rows(target_mean, cond.target_var, cond.prior_mean, cond.prior_var)[0])
            if kl > chunk_bits:
                raise ChunkBudgetError(
                    f"step {step} carries {kl:.3f} bits, more than the chunk budget of {chunk_bits} bits",
                    step=step, kl_bits=kl, chunk_bits=chunk_bits,
                )
            kl_bits.append(kl)
            target = DiagonalGaussian(target_mean[0], cond.target_var)
            if dry_run:
                z = target.draw(rng.standard_normal(self.dims)).reshape(1, self.dims)
                continue
            prior = DiagonalGaussian(cond.prior_mean[0], cond.prior_var[0])
            channel = RccChannel(
                prior=prior,
                target=target,
                w_min=gaussian_wmin(prior.mean, prior.var, target.mean, target.var),
                stream_key=stream_key,
                step_id=step,
                info_bits=float(cond.info_bits[0]),
            )
            record = rcc_encode(channel)
            write_index(writer, record.selected_index, record.zipf_lambda)
            ideal_bits += record.ideal_codelength_bits
            examined += record.candidates_examined
            z = np.asarray(record.sample).reshape(1, self.dims)

        chunks = pack_chunks(steps, kl_bits, chunk_bits)
        step_kl = dict(zip(steps, kl_bits))
        bound = sum(bound_check(sum(step_kl[s] for s in chunk)) for chunk in chunks)
        ledger = RateLedger(
            prior_term_bits=kl_bits[0],
            per_step_kl_bits=kl_bits[1:],
            chunks=chunks,
            bound_bits=bound,
            chunk_model_bits=chunk_overhead(sum(kl_bits), chunk_bits),
            chunk_bits=chunk_bits,
            ideal_codelength_bits=ideal_bits,
            realized_bits=writer.bit_length,
            candidates_examined=examined,
        )

        bitstream = None
        if not dry_run:
            payload = writer.to_bytes()
            header = BitstreamHeader(
                preset_id=sched.preset_id,
                steps=sched.steps,
                t_stop=t_stop,
                chunk_bits=int(math.ceil(chunk_bits)),
                stream_key=stream_key,
                source_hash=self.source.descriptor_hash,
                payload_length=len(payload),
            )
            bitstream = Bitstream(header=header, payload=payload)
            logger.info(
                f"Encoded {len(steps)} steps: {ledger.total_kl_bits:.2f} bits KL, "
                f"{ledger.realized_bits} bits written, {len(chunks)} chunks"
            )
        z_out = self._from_frame(z)[0]
        return EncodeResult(bitstream=bitstream, ledger=ledger, z=z_out.tolist(), t_stop=t_stop)

    def decode_to_z(self, bitstream: Bitstream) -> np.ndarray:
        """Replay the encoder's transmissions and return z_{t_stop}"""
        self._check_transmittable()
        header = bitstream.header
        self._check_header(header)
        reader = BitReader(bitstream.payload)
        z = None
        for step in range(header.steps, header.t_stop - 1, -1):
            cond = self.conditionals(step, z)
            prior = DiagonalGaussian(cond.prior_mean[0], cond.prior_var[0])
            index = read_index(reader, zipf_exponent(float(cond.info_bits[0])))
            z = rcc_decode(index, prior, header.stream_key, step).reshape(1, self.dims)
        return self._from_frame(z)[0]

    def _check_transmittable(self) -> None:
        if self.reverse_variance in DRY_RUN_ONLY_MODES:
            raise DomainError(
                f"reverse variance '{self.reverse_variance}' supports dry runs only; use 'matched' to encode or decode"
            )

    def _check_header(self, header: BitstreamHeader) -> None:
        if header.preset_id != self.schedule.preset_id or header.steps != self.schedule.steps:
            raise FormatError(
                f"bitstream schedule (preset {header.preset_id}, T={header.steps}) does not match "
                f"the decoder (preset {self.schedule.preset_id}, T={self.schedule.steps})"
            )
        if header.source_hash != self.source.descriptor_hash:
            raise FormatError("bitstream was encoded for a different source")

    def simulate_total_kl(self, xs: np.ndarray, t_stop: int, rng: np.random.Generator) -> np.ndarray:
        """
        Total ledger KL (prior term plus every step) for many inputs at once

        Each z_s is drawn exactly from its target, which is the distribution
        the RCC transmission reproduces.
        """
        sched = self.schedule
        if not 1 <= t_stop <= sched.steps:
            raise DomainError(f"t_stop {t_stop} outside 1..{sched.steps}")
        xs = self._to_frame(np.asarray(xs, dtype=np.float64).reshape(-1, self.dims))
        total = np.zeros(xs.shape[0])
        z = None
        for step in range(sched.steps, t_stop - 1, -1):
            cond = self.conditionals(step, z if z is not None else xs)
            target_mean = cond.target_scale * xs + cond.target_shift
            total += _gaussian_kl_rows(target_mean, cond.target_var, cond.prior_mean, cond.prior_var)
            z = target_mean + math.sqrt(cond.target_var) * rng.standard_normal(xs.shape)
        return total


def encode(x: np.ndarray, source: AnalyticSource, schedule: DiffusionSchedule, t_stop: int,
           chunk_bits: Optional[float], stream_key: bytes) -> EncodeResult:
    return DiffCCodec(source, schedule).encode(x, t_stop, stream_key, chunk_bits)


def decode_to_z(bitstream: Bitstream, source: AnalyticSource,
                schedule: Optional[DiffusionSchedule] = None) -> np.ndarray:
    if schedule is None:
        schedule = schedule_from_id(bitstream.header.preset_id, bitstream.header.steps)
    return DiffCCodec(source, schedule).decode_to_z(bitstream)


def write_bitstream(bitstream: Bitstream) -> bytes:
    h = bitstream.header
    if h.payload_length != len(bitstream.payload):
        raise FormatError("header payload length does not match the payload")
    head = struct.pack(
        HEADER_FORMAT, h.magic, h.version, h.preset_id, h.steps, h.t_stop,
        h.chunk_bits, h.stream_key, h.source_hash, h.payload_length,
    )
    return head + bitstream.payload


def read_bitstream(data: bytes) -> Bitstream:
    if len(data) < HEADER_SIZE:
        raise FramingError(f"bitstream has {len(data)} bytes, the header alone needs {HEADER_SIZE}")
    magic, version, preset_id, steps, t_stop, chunk_bits, key, source_hash, length = struct.unpack(
        HEADER_FORMAT, data[:HEADER_SIZE]
    )
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported bitstream version {version}")
    payload = data[HEADER_SIZE:]
    if len(payload) < length:
        raise FramingError(f"payload truncated: header promises {length} bytes, found {len(payload)}")
    if len(payload) > length:
        raise FormatError(f"{len(payload) - length} trailing bytes after the payload")
    try:
        header = BitstreamHeader(
            magic=magic, version=version, preset_id=preset_id, steps=steps, t_stop=t_stop,
            chunk_bits=chunk_bits, stream_key=key, source_hash=source_hash, payload_length=length,
        )
    except ValueError as e:
        raise FormatError(f"invalid bitstream header: {e}")
    return Bitstream(header=header, payload=payload)
