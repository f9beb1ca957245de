"""
Data models for Gaussian rate-distortion analytics
"""
import math
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, computed_field, field_validator, model_validator


class Spectrum(BaseModel):
    """Per-component variances of a Gaussian source"""
    lambdas: List[float]

    @field_validator("lambdas")
    @classmethod
    def _check_lambdas(cls, value: List[float]) -> List[float]:
        if len(value) < 1:
            raise ValueError("spectrum needs at least one component")
        for lam in value:
            if not math.isfinite(lam) or lam <= 0:
                raise ValueError(f"eigenvalues must be positive and finite, got {lam}")
        return value

    @property
    def dims(self) -> int:
        return len(self.lambdas)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.lambdas, dtype=np.float64)

    @property
    def total(self) -> float:
        return float(np.sum(self.array))

    def scaled(self, factor: float) -> "Spectrum":
        return Spectrum(lambdas=[lam * factor for lam in self.lambdas])


class SpectrumFit(BaseModel):
    """Eigendecomposition of a sample covariance"""
    spectrum: Spectrum
    rotation: List[List[float]]  # columns are eigenvectors, same order as the spectrum
    rank_deficient: bool = False
    n_samples: int


class WaterfillSolution(BaseModel):
    """Reverse water-filling allocation D_i = min(lambda_i, theta)"""
    theta: float
    per_component: List[float]
    total: float


class Variant(str, Enum):
    DIFFC_A = "DiffC-A"
    DIFFC_F = "DiffC-F"
    DIFFC_A_STAR = "DiffC-A*"
    DIFFC_F_STAR = "DiffC-F*"
    PINK_A = "P-A"
    PINK_F = "P-F"
    RD = "R*(D)"
    RD_HALF = "R*(D/2)"

    @property
    def control(self) -> str:
        """Name of the control parameter swept for this variant"""
        if self in (Variant.DIFFC_A, Variant.DIFFC_F, Variant.PINK_A, Variant.PINK_F):
            return "sigma"
        return "theta"

    @property
    def slug(self) -> str:
        return {
            Variant.DIFFC_A: "diffc_a",
            Variant.DIFFC_F: "diffc_f",
            Variant.DIFFC_A_STAR: "diffc_a_star",
            Variant.DIFFC_F_STAR: "diffc_f_star",
            Variant.PINK_A: "pink_a",
            Variant.PINK_F: "pink_f",
            Variant.RD: "rd",
            Variant.RD_HALF: "rd_half",
        }[self]


class Reconstruction(str, Enum):
    ANCESTRAL = "ancestral"
    FLOW = "flow"


class ScheduleKind(str, Enum):
    ISOTROPIC = "isotropic"
    WATERFILLED = "waterfilled"
    OPTIMAL_FLOW = "optimal_flow"
    PINK = "pink"


class GaussianSchedule(BaseModel):
    """
    Per-component Gaussian channel Z_i = a_i X_i + n_i U_i

    ``control`` is sigma for isotropic/pink schedules and theta for the
    water-filled and optimal-flow schedules.
    """
    kind: ScheduleKind
    control: float
    signal_coeff: List[float]
    noise_std: List[float]
    # 1 - a_i^2 kept separately; forming it from a_i loses precision near a_i = 1
    signal_deficit: List[float]

    @model_validator(mode="after")
    def _check_lengths(self) -> "GaussianSchedule":
        if not (len(self.signal_coeff) == len(self.noise_std) == len(self.signal_deficit)):
            raise ValueError("schedule component lists differ in length")
        if any(n < 0 for n in self.noise_std):
            raise ValueError("noise std must be nonnegative")
        return self

    @property
    def dims(self) -> int:
        return len(self.signal_coeff)


class RDPoint(BaseModel):
    """One point on a rate-distortion curve; rate_bits None means unbounded"""
    rate_bits: Optional[float]
    dims: int
    distortion: float
    snr_db: Optional[float]
    control: Optional[float] = None

    @model_validator(mode="after")
    def _check_values(self) -> "RDPoint":
        if self.rate_bits is not None and self.rate_bits < -1e-12:
            raise ValueError(f"negative rate {self.rate_bits}")
        if self.distortion < 0:
            raise ValueError(f"negative distortion {self.distortion}")
        return self

    @computed_field
    @property
    def rate_bpd(self) -> Optional[float]:
        if self.rate_bits is None:
            return None
        return max(self.rate_bits, 0.0) / self.dims

    @property
    def unbounded(self) -> bool:
        return self.rate_bits is None


class RDCurve(BaseModel):
    """An RD curve for one variant, points sorted by rate ascending"""
    variant: Variant
    points: List[RDPoint]
    references: Dict[str, "RDCurve"] = {}

    def bounded_points(self) -> List[RDPoint]:
        return [p for p in self.points if not p.unbounded]

    def rates(self) -> np.ndarray:
        return np.array([p.rate_bpd for p in self.bounded_points()])

    def snrs(self) -> np.ndarray:
        return np.array([p.snr_db for p in self.bounded_points()])

    def is_monotone(self) -> bool:
        """Rate strictly increases while distortion strictly decreases"""
        pts = self.bounded_points()
        for prev, cur in zip(pts, pts[1:]):
            if not (cur.rate_bits > prev.rate_bits and cur.distortion < prev.distortion):
                return False
        return True


RDCurve.model_rebuild()
