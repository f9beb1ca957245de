"""
Closed-form rate, distortion and SNR of Gaussian sources under every
DiffC variant, the pink-noise baselines and the R*(D), R*(D/2) references.

All channels are written per principal component as Z_i = a_i X_i + n_i U_i
so one set of formulas covers isotropic, water-filled, optimal-flow and
pink noise.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize

from diffc_lab.config import settings
from diffc_lab.lab.errors import DomainError
from diffc_lab.models.gaussian_rd import (
    GaussianSchedule,
    RDCurve,
    RDPoint,
    Reconstruction,
    ScheduleKind,
    Spectrum,
    SpectrumFit,
    Variant,
    WaterfillSolution,
)

logger = logging.getLogger("diffc_rd")

EIGENVALUE_FLOOR = 1e-12
LOG2E = 1.4426950408889634

ReconstructionLike = Union[Reconstruction, str]


def power_law_spectrum(dims: int, exponent: float = 2.0) -> Spectrum:
    """lambda_i proportional to i^-exponent, scaled to unit mean variance"""
    if dims < 1:
        raise DomainError(f"need at least one component, got {dims}")
    lambdas = np.arange(1, dims + 1, dtype=np.float64) ** (-exponent)
    lambdas *= dims / lambdas.sum()
    return Spectrum(lambdas=lambdas.tolist())


def waterfill(spectrum: Spectrum, total_distortion: float) -> WaterfillSolution:
    """
    Reverse water-filling: find theta with sum_i min(lambda_i, theta) = D

    :param spectrum: source eigenvalues
    :param total_distortion: D, in variance units
    :return: threshold and per-component allocation
    """
    lam = spectrum.array
    total = lam.sum()
    if not (total_distortion > 0) or total_distortion > total * (1 + 1e-12):
        raise DomainError(
            f"total distortion must lie in (0, {total}], got {total_distortion}"
        )
    total_distortion = min(total_distortion, total)

    lo, hi = 0.0, float(lam.max())
    # bisection on the monotone map theta -> sum min(lambda_i, theta)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.minimum(lam, mid).sum() < total_distortion:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * hi * 1e-3:
            break
    theta = hi

    # close the remaining gap exactly on the active (clipped) set
    active = lam > theta
    clipped = lam[~active].sum()
    if active.any():
        theta = (total_distortion - clipped) / active.sum()
    per_component = np.minimum(lam, theta)
    return WaterfillSolution(
        theta=float(theta),
        per_component=per_component.tolist(),
        total=float(per_component.sum()),
    )


def gaussian_rdf(spectrum: Spectrum, total_distortion: float) -> float:
    """R*(D) = 1/2 sum log2(lambda_i / D_i) in total bits"""
    solution = waterfill(spectrum, total_distortion)
    lam = spectrum.array
    d_i = np.asarray(solution.per_component)
    rate = 0.5 * np.sum(np.log2(lam / d_i))
    return float(max(rate, 0.0))


def _check_sigma(sigma: float) -> None:
    if not (0.0 < sigma < 1.0):
        raise DomainError(f"sigma must lie in (0, 1), got {sigma}")


def _check_theta(theta: float) -> None:
    if not (theta >= 0.0) or not math.isfinite(theta):
        raise DomainError(f"theta must be a finite nonnegative number, got {theta}")


def schedule_for(spectrum: Spectrum, variant: Variant, control: float) -> GaussianSchedule:
    """Per-component channel coefficients of a variant at the given sigma or theta"""
    variant = Variant(variant)
    lam = spectrum.array
    if variant in (Variant.DIFFC_A, Variant.DIFFC_F):
        _check_sigma(control)
        kind = ScheduleKind.ISOTROPIC
        deficit = np.full_like(lam, control ** 2)
        noise = np.full_like(lam, control)
    elif variant in (Variant.PINK_A, Variant.PINK_F):
        _check_sigma(control)
        kind = ScheduleKind.PINK
        deficit = np.full_like(lam, control ** 2)
        noise = control * np.sqrt(lam)
    elif variant in (Variant.DIFFC_A_STAR, Variant.RD, Variant.RD_HALF):
        _check_theta(control)
        kind = ScheduleKind.WATERFILLED
        deficit = np.minimum(1.0, control / lam)  # gamma_i^2
        noise = np.sqrt(deficit * lam)
    elif variant == Variant.DIFFC_F_STAR:
        _check_theta(control)
        kind = ScheduleKind.OPTIMAL_FLOW
        root = np.sqrt(lam ** 2 + control ** 2)
        deficit = 2.0 * control / (root + control)  # 1 - alpha_i^2
        noise = np.sqrt(deficit * lam)
    else:
        raise DomainError(f"unknown variant {variant}")
    signal = np.sqrt(np.clip(1.0 - deficit, 0.0, 1.0))
    if kind == ScheduleKind.OPTIMAL_FLOW:
        root = np.sqrt(lam ** 2 + control ** 2)
        signal = lam / (root + control)
    return GaussianSchedule(
        kind=kind,
        control=float(control),
        signal_coeff=signal.tolist(),
        noise_std=noise.tolist(),
        signal_deficit=deficit.tolist(),
    )


def _channel_terms(spectrum: Spectrum, schedule: GaussianSchedule) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-component (rate bits, ancestral error, flow error)"""
    if schedule.dims != spectrum.dims:
        raise DomainError(
            f"schedule has {schedule.dims} components but the spectrum has {spectrum.dims}"
        )
    lam = spectrum.array
    a = np.asarray(schedule.signal_coeff)
    n = np.asarray(schedule.noise_std)

    signal_power = a ** 2 * lam
    noise_power = n ** 2
    received = signal_power + noise_power

    with np.errstate(divide="ignore", invalid="ignore"):
        rate = 0.5 * (np.log2(received) - np.log2(noise_power))
        # fraction of the received power that is noise
        e = np.where(received > 0, noise_power / received, 1.0)
    rate = np.where(noise_power == 0, np.inf, rate)
    rate = np.where(signal_power == 0, 0.0, rate)

    ancestral = 2.0 * lam * e
    flow = 2.0 * lam * e / (1.0 + np.sqrt(1.0 - e))
    return rate, ancestral, flow


def _snr_db(total_power: float, distortion: float) -> Optional[float]:
    if distortion <= 0:
        return None
    return 10.0 * math.log10(2.0 * total_power) - 10.0 * math.log10(distortion)


def _make_point(spectrum: Spectrum, rate_bits: float, distortion: float, control: float) -> RDPoint:
    return RDPoint(
        rate_bits=None if math.isinf(rate_bits) else float(rate_bits),
        dims=spectrum.dims,
        distortion=float(distortion),
        snr_db=_snr_db(spectrum.total, distortion),
        control=control,
    )


def _schedule_point(spectrum: Spectrum, schedule: GaussianSchedule,
                    reconstruction: ReconstructionLike) -> RDPoint:
    rate, ancestral, flow = _channel_terms(spectrum, schedule)
    errors = flow if Reconstruction(reconstruction) == Reconstruction.FLOW else ancestral
    return _make_point(spectrum, float(np.sum(rate)), float(np.sum(errors)), schedule.control)


def diffc_a_point(spectrum: Spectrum, sigma: float) -> RDPoint:
    """Isotropic noise, ancestral reconstruction"""
    schedule = schedule_for(spectrum, Variant.DIFFC_A, sigma)
    return _schedule_point(spectrum, schedule, Reconstruction.ANCESTRAL)


def diffc_f_point(spectrum: Spectrum, sigma: float) -> RDPoint:
    """Isotropic noise, probability-flow reconstruction; same rate as DiffC-A"""
    schedule = schedule_for(spectrum, Variant.DIFFC_F, sigma)
    return _schedule_point(spectrum, schedule, Reconstruction.FLOW)


def diffc_a_star_point(spectrum: Spectrum, theta: float) -> RDPoint:
    """Water-filled noise gamma_i^2 = min(1, theta/lambda_i), ancestral reconstruction"""
    schedule = schedule_for(spectrum, Variant.DIFFC_A_STAR, theta)
    return _schedule_point(spectrum, schedule, Reconstruction.ANCESTRAL)


def diffc_f_star_point(spectrum: Spectrum, theta: float) -> RDPoint:
    """Optimal flow noise; the reconstruction is Z itself"""
    schedule = schedule_for(spectrum, Variant.DIFFC_F_STAR, theta)
    return _schedule_point(spectrum, schedule, Reconstruction.FLOW)


def pink_point(spectrum: Spectrum, sigma: float,
               reconstruction: ReconstructionLike = Reconstruction.ANCESTRAL) -> RDPoint:
    """Covariance-matched noise with per-component std sigma * sqrt(lambda_i)"""
    variant = Variant.PINK_F if Reconstruction(reconstruction) == Reconstruction.FLOW else Variant.PINK_A
    schedule = schedule_for(spectrum, variant, sigma)
    return _schedule_point(spectrum, schedule, reconstruction)


def rd_reference_point(spectrum: Spectrum, theta: float, halved: bool = False) -> RDPoint:
    """
    Point on R*(D) (or R*(D/2) when ``halved``) at water level theta

    R*(D/2) is plotted against the doubled distortion 2 * sum min(lambda_i, theta).
    """
    _check_theta(theta)
    lam = spectrum.array
    d_i = np.minimum(lam, theta)
    distortion = float(d_i.sum()) * (2.0 if halved else 1.0)
    if theta == 0:
        return _make_point(spectrum, math.inf, 0.0, theta)
    rate = gaussian_rdf(spectrum, float(d_i.sum()))
    return _make_point(spectrum, rate, distortion, theta)


def variant_point(spectrum: Spectrum, variant: Variant, control: float) -> RDPoint:
    variant = Variant(variant)
    if variant == Variant.DIFFC_A:
        return diffc_a_point(spectrum, control)
    if variant == Variant.DIFFC_F:
        return diffc_f_point(spectrum, control)
    if variant == Variant.DIFFC_A_STAR:
        return diffc_a_star_point(spectrum, control)
    if variant == Variant.DIFFC_F_STAR:
        return diffc_f_star_point(spectrum, control)
    if variant == Variant.PINK_A:
        return pink_point(spectrum, control, Reconstruction.ANCESTRAL)
    if variant == Variant.PINK_F:
        return pink_point(spectrum, control, Reconstruction.FLOW)
    if variant == Variant.RD:
        return rd_reference_point(spectrum, control, halved=False)
    return rd_reference_point(spectrum, control, halved=True)


def per_component_snr(spectrum: Spectrum, schedule: GaussianSchedule,
                      reconstruction: ReconstructionLike) -> List[float]:
    """
    SNR of every principal component in dB

    Components that receive no signal (water-filled with lambda_i <= theta)
    report exactly 0 dB.
    """
    _, ancestral, flow = _channel_terms(spectrum, schedule)
    errors = flow if Reconstruction(reconstruction) == Reconstruction.FLOW else ancestral
    lam = spectrum.array
    signal = np.asarray(schedule.signal_coeff)
    snr = []
    for lam_i, err_i, a_i in zip(lam, errors, signal):
        if a_i == 0.0:
            snr.append(0.0)
        elif err_i <= 0.0:
            snr.append(math.inf)
        else:
            snr.append(10.0 * math.log10(2.0 * lam_i) - 10.0 * math.log10(err_i))
    return snr


def default_grid(spectrum: Spectrum, variant: Variant, points: Optional[int] = None) -> List[float]:
    """Log-spaced control values resolving the knee of the curve"""
    points = points or settings.DIFFC_GRID_POINTS
    variant = Variant(variant)
    lam = spectrum.array
    if variant.control == "sigma":
        grid = np.geomspace(1e-3, 0.999, points)
    elif variant == Variant.DIFFC_F_STAR:
        grid = np.geomspace(1e-4 * lam.min(), 10.0 * lam.max(), points)
    else:
        grid = np.geomspace(1e-4 * lam.min(), lam.max(), points)
    return grid.tolist()


def sweep_curve(spectrum: Spectrum, variant: Variant, grid: Optional[Sequence[float]] = None,
                with_references: bool = False) -> RDCurve:
    """
    Evaluate a variant over a grid of control values

    :param spectrum: source eigenvalues
    :param variant: one of the DiffC, pink or reference variants
    :param grid: sigma or theta values; defaults to ``default_grid``
    :param with_references: attach the R*(D) and R*(D/2) curves
    :return: curve with points sorted by rate ascending
    """
    variant = Variant(variant)
    if grid is None:
        grid = default_grid(spectrum, variant)
    grid = list(grid)
    if not grid:
        raise DomainError("sweep grid is empty")

    logger.info(f"Sweeping {variant.value} over {len(grid)} control values (M={spectrum.dims})")
    with ThreadPoolExecutor(max_workers=max(1, settings.DIFFC_THREADS)) as pool:
        points = list(pool.map(lambda c: variant_point(spectrum, variant, c), grid))

    points.sort(key=lambda p: (p.unbounded, p.rate_bits if p.rate_bits is not None else 0.0,
                               -p.distortion))
    references = {}
    if with_references:
        theta_grid = default_grid(spectrum, Variant.RD, len(grid))
        for ref in (Variant.RD, Variant.RD_HALF):
            references[ref.value] = sweep_curve(spectrum, ref, theta_grid)
    return RDCurve(variant=variant, points=points, references=references)


def snr_at(curve: RDCurve, rate_bpd: float) -> float:
    """SNR of a curve at a rate, by linear interpolation between grid points"""
    rates = curve.rates()
    snrs = curve.snrs()
    if rates.size == 0:
        raise DomainError(f"curve {curve.variant.value} has no bounded points")
    if not (rates[0] <= rate_bpd <= rates[-1]):
        raise DomainError(
            f"rate {rate_bpd} outside the swept range [{rates[0]}, {rates[-1]}]"
        )
    return float(np.interp(rate_bpd, rates, snrs))


def control_for_rate(spectrum: Spectrum, variant: Variant, rate_bpd: float) -> float:
    """Sigma or theta at which the variant runs at the requested bits per dimension"""
    variant = Variant(variant)
    if rate_bpd <= 0:
        raise DomainError(f"rate must be positive, got {rate_bpd}")
    lam = spectrum.array

    def excess(log_control: float) -> float:
        point = variant_point(spectrum, variant, math.exp(log_control))
        if point.unbounded:
            return math.inf
        return point.rate_bpd - rate_bpd

    if variant.control == "sigma":
        lo, hi = math.log(1e-12), math.log(1.0 - 1e-12)
    elif variant == Variant.DIFFC_F_STAR:
        lo, hi = math.log(1e-12 * lam.min()), math.log(1e6 * lam.max())
    else:
        lo, hi = math.log(1e-12 * lam.min()), math.log(lam.max())
    if excess(lo) < 0 or excess(hi) > 0:
        raise DomainError(f"rate {rate_bpd} bpd is not reachable by {variant.value}")
    return math.exp(optimize.brentq(excess, lo, hi, xtol=1e-14, rtol=1e-13))


def fit_spectrum(samples: np.ndarray) -> SpectrumFit:
    """
    Fit a Gaussian to the rows of a sample matrix

    :param samples: n x M matrix
    :return: descending eigenvalues (floored at 1e-12) and the rotation
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    n, dims = samples.shape
    if n < dims + 1:
        raise DomainError(f"need at least {dims + 1} samples for {dims} dimensions, got {n}")
    if not np.all(np.isfinite(samples)):
        raise DomainError("sample matrix contains non-finite values")

    cov = np.atleast_2d(np.cov(samples, rowvar=False))
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]

    rank_deficient = bool(np.any(eigvals < EIGENVALUE_FLOOR))
    if rank_deficient:
        logger.warning(
            f"Sample covariance is rank deficient: {int(np.sum(eigvals < EIGENVALUE_FLOOR))} "
            f"eigenvalues clamped to {EIGENVALUE_FLOOR}"
        )
    eigvals = np.maximum(eigvals, EIGENVALUE_FLOOR)
    return SpectrumFit(
        spectrum=Spectrum(lambdas=eigvals.tolist()),
        rotation=eigvecs.tolist(),
        rank_deficient=rank_deficient,
        n_samples=n,
    )
