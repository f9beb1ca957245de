"""
Data models for the Monte Carlo theorem harness
"""
from typing import List, Optional

from pydantic import BaseModel, model_validator


class GEstimate(BaseModel):
    """Monte Carlo estimate of G_t = E||grad log p_t(Z_t)||^2"""
    t: Optional[int] = None
    sigma: float
    g_value: float
    g_tilde: float
    std_error: float
    per_dim: float
    per_dim_std_error: float
    n_samples: int

    @model_validator(mode="after")
    def _check_value(self) -> "GEstimate":
        if self.g_value < 0:
            raise ValueError("G is a mean of squared norms and cannot be negative")
        return self


class Assertion(BaseModel):
    """One row of a report: `theorem,condition,n,estimate,stderr,bound,pass`"""
    theorem: str
    condition: str
    n: int
    estimate: float
    stderr: float
    bound: float
    passed: bool
    # informational rows are written but never fail a report
    asserted: bool = True

    def csv_row(self) -> List[str]:
        return [
            self.theorem,
            self.condition,
            str(self.n),
            f"{self.estimate:.12g}",
            f"{self.stderr:.12g}",
            f"{self.bound:.12g}",
            "true" if self.passed else ("false" if self.asserted else "reported"),
        ]


class TheoremReport(BaseModel):
    report_id: str
    seed: int
    assertions: List[Assertion]
    notes: List[str] = []

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions if a.asserted)

    @property
    def failures(self) -> List[Assertion]:
        return [a for a in self.assertions if a.asserted and not a.passed]
