"""
Data models for the command-line front end
"""
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, model_validator

Subcommand = Literal["rd-curve", "encode", "decode", "verify", "g-curve"]
STOCHASTIC = ("encode", "decode", "verify", "g-curve")


class RunConfig(BaseModel):
    """Fully resolved options of one CLI invocation (flags > config file > settings)"""
    subcommand: Subcommand
    # source: a named source, a spectrum file or a sample matrix; at most one
    source: Optional[str] = None
    spectrum: Optional[Path] = None
    samples_file: Optional[Path] = None
    dims: Optional[int] = None

    schedule: str = "cosine"
    steps: int = 100
    sigma_grid: Optional[List[float]] = None
    theta_grid: Optional[List[float]] = None
    sigma: Optional[float] = None
    chunk_bits: float = 40.0
    t_stop: Optional[int] = None
    reconstruction: Literal["ancestral", "flow"] = "flow"
    snr_rate_bpd: float = 0.391

    seed: Optional[int] = None
    out: Path
    input: Optional[Path] = None
    bitstream: Optional[Path] = None
    theorem: List[str] = []
    samples: Optional[int] = None

    @model_validator(mode="after")
    def _check_config(self) -> "RunConfig":
        given = [name for name in ("source", "spectrum", "samples_file") if getattr(self, name) is not None]
        if len(given) > 1:
            raise ValueError(f"give exactly one source specification, got {', '.join(given)}")
        if self.subcommand in STOCHASTIC and self.seed is None:
            raise ValueError(f"'{self.subcommand}' is stochastic and needs a seed")
        if self.subcommand == "encode" and self.input is None:
            raise ValueError("encode needs --input")
        if self.subcommand == "decode" and self.bitstream is None:
            raise ValueError("decode needs --bitstream")
        if self.dims is not None and self.dims < 1:
            raise ValueError(f"dims must be positive, got {self.dims}")
        if self.samples is not None and self.samples < 2:
            raise ValueError(f"samples must be at least 2, got {self.samples}")
        return self
