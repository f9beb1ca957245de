"""
Data models for the progressive DiffC codec
"""
import math
from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

ROTATION_TOLERANCE = 1e-10


class SourceKind(str, Enum):
    GAUSSIAN = "gaussian"
    GMM = "gmm"
    LAPLACE = "laplace"


class SourceSpec(BaseModel):
    """
    Parameters of an analytic source X = mean + Q S

    gaussian: S ~ N(0, diag(lambdas))
    gmm:      S ~ sum_k weights[k] N(means[k], diag(variances[k]))
    laplace:  S_i iid Laplace(scale) convolved with N(0, smoothing^2)
    """
    kind: SourceKind
    dims: int
    lambdas: Optional[List[float]] = None
    mean: Optional[List[float]] = None
    weights: Optional[List[float]] = None
    means: Optional[List[List[float]]] = None
    variances: Optional[List[List[float]]] = None
    scale: Optional[float] = None
    smoothing: Optional[float] = None
    rotation: Optional[List[List[float]]] = None

    @model_validator(mode="after")
    def _check_parameters(self) -> "SourceSpec":
        if self.dims < 1:
            raise ValueError("a source needs at least one dimension")
        if self.kind == SourceKind.GAUSSIAN:
            if not self.lambdas or len(self.lambdas) != self.dims:
                raise ValueError("gaussian source needs one eigenvalue per dimension")
            if any(not (lam > 0) or not math.isfinite(lam) for lam in self.lambdas):
                raise ValueError("eigenvalues must be positive and finite")
            if self.mean is not None and len(self.mean) != self.dims:
                raise ValueError("mean length does not match dims")
        elif self.kind == SourceKind.GMM:
            if not self.weights or self.means is None or self.variances is None:
                raise ValueError("gmm source needs weights, means and variances")
            k = len(self.weights)
            if len(self.means) != k or len(self.variances) != k:
                raise ValueError("gmm weights, means and variances differ in length")
            if any(w <= 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-9:
                raise ValueError("mixture weights must be positive and sum to 1")
            for row in self.means + self.variances:
                if len(row) != self.dims:
                    raise ValueError("gmm component rows must have dims entries")
            if any(v <= 0 for row in self.variances for v in row):
                raise ValueError("component variances must be positive")
        elif self.kind == SourceKind.LAPLACE:
            if self.scale is None or self.scale <= 0:
                raise ValueError("laplace scale must be positive")
            if self.smoothing is None or self.smoothing <= 0:
                raise ValueError("laplace smoothing must be positive")
        if self.rotation is not None:
            q = np.asarray(self.rotation, dtype=np.float64)
            if q.shape != (self.dims, self.dims):
                raise ValueError(f"rotation must be {self.dims}x{self.dims}")
            if np.max(np.abs(q.T @ q - np.eye(self.dims))) > ROTATION_TOLERANCE:
                raise ValueError("rotation is not orthogonal within 1e-10")
        return self


class DiffusionSchedule(BaseModel):
    """
    Variance-preserving schedule z_t = sqrt(1 - sigma_t^2) x + sigma_t u, t = 1..T

    ``beta[t-1]`` is the increment of -ln(1 - sigma^2) between t-1 and t.
    """
    preset: str
    preset_id: int
    steps: int
    sigma: List[float]
    beta: List[float]
    eta: List[float]

    @model_validator(mode="after")
    def _check_schedule(self) -> "DiffusionSchedule":
        if self.steps < 1:
            raise ValueError("a schedule needs at least one step")
        if not (len(self.sigma) == len(self.beta) == len(self.eta) == self.steps):
            raise ValueError("schedule lists must have one entry per step")
        previous = 0.0
        for value in self.sigma:
            if not (previous < value < 1.0):
                raise ValueError("sigma must increase strictly inside (0, 1)")
            previous = value
        if any(b <= 0 for b in self.beta):
            raise ValueError("beta increments must be positive")
        return self

    def sigma_at(self, t: int) -> float:
        if not 1 <= t <= self.steps:
            raise ValueError(f"step {t} outside 1..{self.steps}")
        return self.sigma[t - 1]

    def alpha_at(self, t: int) -> float:
        return math.sqrt(1.0 - self.sigma_at(t) ** 2)

    def eta_at(self, t: int) -> float:
        self.sigma_at(t)
        return self.eta[t - 1]


class BitstreamHeader(BaseModel):
    magic: bytes = b"DIFC"
    version: int = 1
    preset_id: int
    steps: int
    t_stop: int
    chunk_bits: int
    stream_key: bytes
    source_hash: bytes
    payload_length: int

    @field_validator("stream_key")
    @classmethod
    def _check_key(cls, value: bytes) -> bytes:
        if len(value) != 16:
            raise ValueError("stream key must be 16 bytes")
        return value

    @field_validator("source_hash")
    @classmethod
    def _check_hash(cls, value: bytes) -> bytes:
        if len(value) != 32:
            raise ValueError("source hash must be 32 bytes")
        return value

    @model_validator(mode="after")
    def _check_steps(self) -> "BitstreamHeader":
        if not 1 <= self.t_stop <= self.steps:
            raise ValueError(f"t_stop {self.t_stop} outside 1..{self.steps}")
        if self.chunk_bits < 1:
            raise ValueError("chunk budget must be at least one bit")
        return self


class Bitstream(BaseModel):
    """Header plus the concatenated index codewords, steps T down to t_stop"""
    header: BitstreamHeader
    payload: bytes


class RateLedger(BaseModel):
    """Where the bits of one encode went"""
    prior_term_bits: float
    # steps T-1 down to t_stop
    per_step_kl_bits: List[float]
    chunks: List[List[int]]
    bound_bits: float
    chunk_model_bits: float
    chunk_bits: float
    ideal_codelength_bits: float = 0.0
    realized_bits: int = 0
    candidates_examined: int = 0

    @model_validator(mode="after")
    def _check_entries(self) -> "RateLedger":
        if self.prior_term_bits < 0 or any(kl < 0 for kl in self.per_step_kl_bits):
            raise ValueError("ledger KL entries must be nonnegative")
        if self.bound_bits < sum(self.per_step_kl_bits) - 1e-9:
            raise ValueError("bound below the summed step KL")
        return self

    @property
    def total_kl_bits(self) -> float:
        return self.prior_term_bits + sum(self.per_step_kl_bits)


class EncodeResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    bitstream: Optional[Bitstream]
    ledger: RateLedger
    z: List[float]
    t_stop: int
