"""
Reverse channel coding with the Poisson functional representation

The encoder walks a shared candidate stream drawn from the prior p, scores
candidate n by s_n = t_n * p(z_n) / q(z_n) with t_n the n-th arrival of a
unit-rate Poisson process, and stops once no later candidate can beat the
best score so far. The selected index is an exact sample of q.
"""
import hashlib
import logging
import math
from typing import Optional, Protocol

import numpy as np
from scipy import special

from diffc_lab.config import settings
from diffc_lab.lab.errors import BudgetExceededError, DomainError, UnsupportedPairError
from diffc_lab.models.rcc import RccChannel, TransmissionRecord

logger = logging.getLogger("diffc_rcc")

LOG2E = 1.4426950408889634
_E_INV_LOG2E = LOG2E / math.e


class Density(Protocol):
    """A distribution the candidate stream can be drawn from and scored under"""

    dims: int

    def log_density(self, z: np.ndarray) -> np.ndarray:
        """Log-density of each row of z"""

    def draw(self, eps: np.ndarray) -> np.ndarray:
        """Map rows of standard normal noise to samples"""


class DiagonalGaussian:
    """N(mean, diag(var))"""

    def __init__(self, mean, var):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        self.var = np.broadcast_to(np.asarray(var, dtype=np.float64), self.mean.shape).copy()
        if np.any(self.var <= 0) or not np.all(np.isfinite(self.var)):
            raise DomainError("Gaussian variances must be positive and finite")
        self.dims = self.mean.size
        self._log_norm = -0.5 * np.sum(np.log(2.0 * math.pi * self.var))

    def log_density(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        return self._log_norm - 0.5 * np.sum((z - self.mean) ** 2 / self.var, axis=1)

    def draw(self, eps: np.ndarray) -> np.ndarray:
        return self.mean + np.sqrt(self.var) * eps

    def __repr__(self) -> str:
        return f"DiagonalGaussian(dims={self.dims})"


def gaussian_kl_bits(target: DiagonalGaussian, prior: DiagonalGaussian) -> float:
    """D_KL(target || prior) in bits for diagonal Gaussians"""
    if target.dims != prior.dims:
        raise DomainError(f"dimension mismatch: {target.dims} vs {prior.dims}")
    ratio = target.var / prior.var
    nats = 0.5 * np.sum(ratio - 1.0 - np.log(ratio) + (target.mean - prior.mean) ** 2 / prior.var)
    return float(max(nats, 0.0) * LOG2E)


def gaussian_wmin(prior_mean, prior_var, target_mean, target_var) -> float:
    """
    inf_z p(z) / q(z) for diagonal Gaussians p (prior) and q (target)

    The infimum per coordinate sits at z* = (mu_q s_p^2 - mu_p s_q^2) / (s_p^2 - s_q^2).
    """
    mp, vp, mq, vq = (np.atleast_1d(np.asarray(a, dtype=np.float64))
                      for a in (prior_mean, prior_var, target_mean, target_var))
    if np.any(vq >= vp):
        bad = int(np.argmax(vq >= vp))
        raise UnsupportedPairError(
            f"coordinate {bad}: target variance {vq[bad]} is not below prior variance {vp[bad]}"
        )
    log_w = np.sum(0.5 * np.log(vq / vp) - (mq - mp) ** 2 / (2.0 * (vp - vq)))
    return float(math.exp(log_w))


def zipf_exponent(info_content_bits: float) -> float:
    """lambda = 1 + 1 / (I + e^-1 log2 e + 1)"""
    if info_content_bits < 0 or math.isnan(info_content_bits):
        raise DomainError(f"information content must be nonnegative, got {info_content_bits}")
    return 1.0 + 1.0 / (info_content_bits + _E_INV_LOG2E + 1.0)


def zipf_codelength(n: int, zipf_lambda: float) -> float:
    """Ideal codelength -log2(n^-lambda / zeta(lambda)) in bits"""
    if not (zipf_lambda > 1.0):
        raise DomainError(f"Zipf exponent must exceed 1, got {zipf_lambda}")
    if n < 1:
        raise DomainError(f"indices start at 1, got {n}")
    return zipf_lambda * math.log2(n) + math.log2(float(special.zeta(zipf_lambda, 1)))


def bound_check(kl_bits: float) -> float:
    """Achievable cost C + log2(C + 1) + 5 of one transmission"""
    if kl_bits < 0:
        raise DomainError(f"KL must be nonnegative, got {kl_bits}")
    return kl_bits + math.log2(kl_bits + 1.0) + 5.0


def _sub_stream_key(stream_key: bytes, step_id: int, label: str) -> int:
    digest = hashlib.blake2b(
        stream_key + step_id.to_bytes(8, "little") + label.encode(), digest_size=16
    ).digest()
    return int.from_bytes(digest, "little")


class CandidateStream:
    """
    Counter-based shared randomness keyed by (stream_key, step_id)

    Block b holds candidates b*K+1 .. (b+1)*K and is generated from its own
    Philox counter, so any candidate is reachable without the ones before it.
    """

    def __init__(self, stream_key: bytes, step_id: int, dims: int, block_size: Optional[int] = None):
        self.dims = dims
        self.block_size = block_size or settings.DIFFC_CANDIDATE_BLOCK
        self._candidate_key = _sub_stream_key(stream_key, step_id, "candidates")
        self._arrival_key = _sub_stream_key(stream_key, step_id, "arrivals")

    def _generator(self, key: int, block: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=key, counter=block << 128))

    def noise_block(self, block: int) -> np.ndarray:
        return self._generator(self._candidate_key, block).standard_normal((self.block_size, self.dims))

    def arrival_gaps(self, block: int) -> np.ndarray:
        return self._generator(self._arrival_key, block).standard_exponential(self.block_size)

    def noise(self, index: int) -> np.ndarray:
        """Standard normal noise of candidate ``index`` (1-based)"""
        if index < 1:
            raise DomainError(f"candidate indices start at 1, got {index}")
        block, row = divmod(index - 1, self.block_size)
        return self.noise_block(block)[row]


def _info_bits(channel: RccChannel) -> float:
    if channel.info_bits is not None:
        return channel.info_bits
    if isinstance(channel.prior, DiagonalGaussian) and isinstance(channel.target, DiagonalGaussian):
        return gaussian_kl_bits(channel.target, channel.prior)
    raise DomainError("info_bits is required unless both prior and target are diagonal Gaussians")


def rcc_encode(channel: RccChannel, budget: Optional[int] = None,
               block_size: Optional[int] = None) -> TransmissionRecord:
    """
    Select the candidate whose index is transmitted

    :param channel: prior, target, w_min and shared stream key
    :param budget: cap on examined candidates
    :return: record with the selected index and its sample
    """
    if not (channel.w_min > 0) or not math.isfinite(channel.w_min):
        raise DomainError(f"w_min must be positive and finite, got {channel.w_min}")
    budget = budget or settings.DIFFC_CANDIDATE_BUDGET
    stream = CandidateStream(channel.stream_key, channel.step_id, channel.prior.dims, block_size)
    log_wmin = math.log(channel.w_min)

    t = 0.0
    best_log_score = math.inf
    best_index = 0
    examined = 0
    block = 0
    while True:
        if examined >= budget:
            raise BudgetExceededError(
                f"no candidate accepted within {budget} candidates (w_min={channel.w_min})",
                partial_state={"best_index": best_index, "best_log_score": best_log_score,
                               "examined": examined, "arrival_time": t},
            )
        candidates = channel.prior.draw(stream.noise_block(block))
        arrivals = t + np.cumsum(stream.arrival_gaps(block))
        log_t = np.log(arrivals)
        log_scores = log_t + channel.prior.log_density(candidates) - channel.target.log_density(candidates)

        running = np.minimum.accumulate(np.minimum(log_scores, best_log_score))
        stop = np.nonzero(running <= log_t + log_wmin)[0]
        last = int(stop[0]) if stop.size else stream.block_size - 1
        last = min(last, budget - examined - 1)

        window = log_scores[:last + 1]
        local = int(np.argmin(window))
        if window[local] < best_log_score:
            best_log_score = float(window[local])
            best_index = block * stream.block_size + local + 1
        examined += last + 1
        t = float(arrivals[last])
        if stop.size and int(stop[0]) == last:
            break
        block += 1

    info = _info_bits(channel)
    zipf_lambda = zipf_exponent(info)
    sample = channel.prior.draw(stream.noise(best_index))
    logger.debug(f"RCC step {channel.step_id}: N*={best_index} after {examined} candidates")
    return TransmissionRecord(
        selected_index=best_index,
        candidates_examined=examined,
        ideal_codelength_bits=zipf_codelength(best_index, zipf_lambda),
        kl_nats_estimate=info / LOG2E,
        zipf_lambda=zipf_lambda,
        sample=np.asarray(sample, dtype=np.float64).tolist(),
    )


def rcc_decode(selected_index: int, prior: Density, stream_key: bytes, step_id: int = 0,
               block_size: Optional[int] = None) -> np.ndarray:
    """Regenerate the selected candidate from the shared stream"""
    if selected_index < 1:
        raise DomainError(f"selected index must be at least 1, got {selected_index}")
    stream = CandidateStream(stream_key, step_id, prior.dims, block_size)
    return prior.draw(stream.noise(selected_index))


def validate_wmin(channel: RccChannel, probe_points: Optional[int] = None, seed: int = 0) -> bool:
    """
    Probe w_min <= p(z)/q(z) on random points from the target and prior

    Returns False and logs a warning when a probe violates the bound.
    """
    probe_points = probe_points or settings.DIFFC_WMIN_PROBE_POINTS
    rng = np.random.default_rng(seed)
    dims = channel.prior.dims
    half = probe_points // 2
    probes = np.vstack([
        channel.target.draw(rng.standard_normal((probe_points - half, dims))),
        channel.prior.draw(rng.standard_normal((half, dims))),
    ])
    log_ratio = channel.prior.log_density(probes) - channel.target.log_density(probes)
    worst = float(np.min(log_ratio))
    if worst < math.log(channel.w_min) - 1e-9:
        logger.warning(
            f"w_min={channel.w_min} violated on probe: min p/q = {math.exp(worst)} "
            f"over {probe_points} points; samples will not be exact"
        )
        return False
    return True
