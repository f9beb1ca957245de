"""
Diffusion schedules, forward corruption and the two reconstructions
"""
import logging
import math
from typing import Optional

import numpy as np

from diffc_lab.config import settings
from diffc_lab.lab.errors import DomainError, NonFiniteScoreError
from diffc_lab.lab.sources import AnalyticSource
from diffc_lab.models.codec import DiffusionSchedule

logger = logging.getLogger("diffc_codec")

PRESET_IDS = {"cosine": 1, "linear": 2}
COSINE_OFFSET = 0.008
SIGNAL_FLOOR = 1e-4


def _from_signal_power(preset: str, signal_power: np.ndarray) -> DiffusionSchedule:
    sigma2 = 1.0 - signal_power
    cumulative = -np.log(signal_power)
    beta = np.diff(np.concatenate([[0.0], cumulative]))
    return DiffusionSchedule(
        preset=preset,
        preset_id=PRESET_IDS[preset],
        steps=signal_power.size,
        sigma=np.sqrt(sigma2).tolist(),
        beta=beta.tolist(),
        eta=np.sqrt(sigma2 / signal_power).tolist(),
    )


def make_schedule(preset: Optional[str] = None, steps: Optional[int] = None) -> DiffusionSchedule:
    """
    Named schedule presets

    cosine: alpha_bar(t) = cos^2(((t/T + s)/(1 + s)) pi/2), normalized and floored at 1e-4
    linear: DDPM betas from 1e-4 to 0.02 at T = 1000, rescaled by 1000/T
    """
    preset = preset or settings.DIFFC_SCHEDULE_PRESET
    steps = steps or settings.DIFFC_STEPS
    if steps < 1:
        raise DomainError(f"a schedule needs at least one step, got {steps}")
    t = np.arange(1, steps + 1, dtype=np.float64)
    if preset == "cosine":
        f = np.cos((t / steps + COSINE_OFFSET) / (1 + COSINE_OFFSET) * math.pi / 2) ** 2
        f0 = math.cos(COSINE_OFFSET / (1 + COSINE_OFFSET) * math.pi / 2) ** 2
        signal_power = SIGNAL_FLOOR + (1.0 - SIGNAL_FLOOR) * f / f0
    elif preset == "linear":
        betas = np.linspace(1e-4, 0.02, steps) * (1000.0 / steps)
        signal_power = np.cumprod(1.0 - np.minimum(betas, 0.999))
    else:
        raise DomainError(f"unknown schedule preset '{preset}' (expected one of {sorted(PRESET_IDS)})")
    return _from_signal_power(preset, signal_power)


def schedule_from_id(preset_id: int, steps: int) -> DiffusionSchedule:
    for name, known in PRESET_IDS.items():
        if known == preset_id:
            return make_schedule(name, steps)
    raise DomainError(f"unknown schedule preset id {preset_id}")


def step_for_sigma(schedule: DiffusionSchedule, sigma: float) -> int:
    """Step whose noise level is closest to sigma"""
    if not 0.0 < sigma < 1.0:
        raise DomainError(f"sigma must lie in (0, 1), got {sigma}")
    return int(np.argmin(np.abs(np.asarray(schedule.sigma) - sigma))) + 1


def forward_corrupt(x: np.ndarray, schedule: DiffusionSchedule, t: int,
                    rng: np.random.Generator) -> np.ndarray:
    """z_t = sqrt(1 - sigma_t^2) x + sigma_t u"""
    if not 1 <= t <= schedule.steps:
        raise DomainError(f"step {t} outside 1..{schedule.steps}")
    x = np.asarray(x, dtype=np.float64)
    return corrupt_at(x, schedule.sigma_at(t), rng)


def corrupt_at(x: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 <= sigma <= 1.0:
        raise DomainError(f"sigma must lie in [0, 1], got {sigma}")
    return math.sqrt(1.0 - sigma ** 2) * x + sigma * rng.standard_normal(x.shape)


def reconstruct_ancestral(z: np.ndarray, source: AnalyticSource, sigma: float,
                          rng: np.random.Generator) -> np.ndarray:
    """Exact draw from p(x | z_t) for each row of z"""
    alpha = math.sqrt(1.0 - sigma ** 2)
    z = np.asarray(z, dtype=np.float64)
    y = (z / alpha).reshape(-1, source.dims)
    return source.sample_posterior(y, sigma / alpha, rng).reshape(z.shape)


def _checked_score(source: AnalyticSource, y: np.ndarray, eta: float) -> np.ndarray:
    score = source.score_ve(y, eta)
    if not np.all(np.isfinite(score)):
        bad = int(np.argmax(~np.all(np.isfinite(np.atleast_2d(score)), axis=-1)))
        raise NonFiniteScoreError(
            f"non-finite score at eta={eta}", z=np.atleast_2d(y)[bad].tolist(), noise_level=eta
        )
    return score


def reconstruct_flow(z: np.ndarray, source: AnalyticSource, sigma: float,
                     ode_steps: Optional[int] = None) -> np.ndarray:
    """
    Integrate the probability-flow ODE from noise level sigma back to 0

    Runs fixed-step RK4 on dy/deta = -eta * score_ve(y, eta) with
    y = z / alpha, uniformly spaced in eta from eta_t to 0.
    """
    ode_steps = ode_steps or settings.DIFFC_ODE_STEPS
    if ode_steps < 1:
        raise DomainError(f"ode_steps must be at least 1, got {ode_steps}")
    alpha = math.sqrt(1.0 - sigma ** 2)
    eta_start = sigma / alpha
    z = np.asarray(z, dtype=np.float64)
    y = (z / alpha).reshape(-1, source.dims)

    def drift(state: np.ndarray, eta: float) -> np.ndarray:
        return -eta * _checked_score(source, state, eta)

    h = -eta_start / ode_steps
    eta = eta_start
    for _ in range(ode_steps):
        k1 = drift(y, eta)
        k2 = drift(y + 0.5 * h * k1, eta + 0.5 * h)
        k3 = drift(y + 0.5 * h * k2, eta + 0.5 * h)
        k4 = drift(y + h * k3, eta + h)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        eta = eta + h
    return y.reshape(z.shape)


def reconstruct_ancestral_at(z: np.ndarray, source: AnalyticSource, schedule: DiffusionSchedule, t: int,
                             rng: np.random.Generator) -> np.ndarray:
    """Ancestral reconstruction of z_t at schedule step t"""
    if not 1 <= t <= schedule.steps:
        raise DomainError(f"step {t} outside 1..{schedule.steps}")
    return reconstruct_ancestral(z, source, schedule.sigma_at(t), rng)


def reconstruct_flow_at(z: np.ndarray, source: AnalyticSource, schedule: DiffusionSchedule, t: int,
                        ode_steps: Optional[int] = None) -> np.ndarray:
    """Flow reconstruction of z_t at schedule step t"""
    if not 1 <= t <= schedule.steps:
        raise DomainError(f"step {t} outside 1..{schedule.steps}")
    return reconstruct_flow(z, source, schedule.sigma_at(t), ode_steps)
