"""
Data models for reverse channel coding
"""
from typing import Any, List, Optional

from pydantic import BaseModel, ConfigDict, field_validator, model_validator


class RccChannel(BaseModel):
    """
    One reverse-channel-coding transmission: send an exact sample of
    ``target`` using candidates drawn from ``prior``
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    prior: Any
    target: Any
    w_min: float
    stream_key: bytes
    step_id: int = 0
    # bits used to set the Zipf exponent; defaults to the Gaussian KL when both sides are Gaussian
    info_bits: Optional[float] = None

    @field_validator("stream_key")
    @classmethod
    def _check_key(cls, value: bytes) -> bytes:
        if len(value) != 16:
            raise ValueError(f"stream key must be 16 bytes, got {len(value)}")
        return value

    @field_validator("step_id")
    @classmethod
    def _check_step(cls, value: int) -> int:
        if value < 0:
            raise ValueError("step id must be nonnegative")
        return value


class TransmissionRecord(BaseModel):
    """Outcome of one encoder run"""
    selected_index: int
    candidates_examined: int
    ideal_codelength_bits: float
    kl_nats_estimate: float
    zipf_lambda: float
    sample: List[float]

    @model_validator(mode="after")
    def _check_counts(self) -> "TransmissionRecord":
        if self.selected_index < 1:
            raise ValueError("selected index starts at 1")
        if self.candidates_examined < self.selected_index:
            raise ValueError("examined fewer candidates than the selected index")
        return self

    @property
    def kl_bits_estimate(self) -> float:
        return self.kl_nats_estimate * 1.4426950408889634
