"""
Configuration settings for the DiffC rate-distortion lab
"""

import os
from pathlib import Path
from dotenv import load_dotenv
from pydantic import BaseModel

# Get the directory where config.py is located (package directory)
CURRENT_DIR = Path(__file__).resolve().parent
# Go up one directory to the project root where .env should be
BASE_DIR = CURRENT_DIR.parent

# Load .env file from the project root
load_dotenv(os.path.join(BASE_DIR, '.env'))


class Settings(BaseModel):
    """Lab settings"""

    # Parallelism cap for sweeps and harness grids
    DIFFC_THREADS: int = int(os.getenv("DIFFC_THREADS", str(os.cpu_count() or 1)))

    # Debug mode
    DIFFC_DEBUG: bool = os.getenv("DIFFC_DEBUG", "False").lower() == "true"
    DIFFC_LOG_LEVEL: str = os.getenv("DIFFC_LOG_LEVEL", "INFO")

    # Diffusion schedule
    DIFFC_SCHEDULE_PRESET: str = os.getenv("DIFFC_SCHEDULE_PRESET", "cosine")
    DIFFC_STEPS: int = int(os.getenv("DIFFC_STEPS", "100"))
    DIFFC_ODE_STEPS: int = int(os.getenv("DIFFC_ODE_STEPS", "256"))

    # Reverse channel coding
    DIFFC_CHUNK_BITS: float = float(os.getenv("DIFFC_CHUNK_BITS", "40"))
    DIFFC_CANDIDATE_BUDGET: int = int(os.getenv("DIFFC_CANDIDATE_BUDGET", str(2 ** 30)))
    DIFFC_CANDIDATE_BLOCK: int = int(os.getenv("DIFFC_CANDIDATE_BLOCK", "256"))
    DIFFC_WMIN_PROBE_POINTS: int = int(os.getenv("DIFFC_WMIN_PROBE_POINTS", "100000"))

    # "matched", or "forward_posterior" for dry runs only
    DIFFC_REVERSE_VARIANCE: str = os.getenv("DIFFC_REVERSE_VARIANCE", "matched")

    # Harness
    DIFFC_ROOT_SEED: int = int(os.getenv("DIFFC_ROOT_SEED", "20221206"))
    DIFFC_LAPLACE_SMOOTHING: float = float(os.getenv("DIFFC_LAPLACE_SMOOTHING", "1e-3"))

    # Rate-distortion curves
    DIFFC_GRID_POINTS: int = int(os.getenv("DIFFC_GRID_POINTS", "64"))
    DIFFC_SNR_RATE_BPD: float = float(os.getenv("DIFFC_SNR_RATE_BPD", "0.391"))

    model_config = {
        "case_sensitive": True
    }

# Initialize settings
settings = Settings()
