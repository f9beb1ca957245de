"""
Goodness-of-fit and two-sample tests plus Monte Carlo summaries
"""
import logging
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist

logger = logging.getLogger("diffc_harness")

# pooled pairwise distances grow quadratically; multi-dimensional tests subsample to this size
ENERGY_SAMPLE_CAP = 1500
DEFAULT_PERMUTATIONS = 199


class MeanEstimate(NamedTuple):
    mean: float
    stderr: float
    n: int


def mean_estimate(values: np.ndarray) -> MeanEstimate:
    """Sample mean with its standard error"""
    values = np.asarray(values, dtype=np.float64).ravel()
    n = values.size
    if n < 2:
        return MeanEstimate(float(values.mean()) if n else float("nan"), float("inf"), n)
    return MeanEstimate(float(values.mean()), float(values.std(ddof=1) / np.sqrt(n)), n)


def ratio_estimate(numerator: np.ndarray, denominator: np.ndarray) -> MeanEstimate:
    """Ratio of two sample means with a delta-method standard error"""
    a = np.asarray(numerator, dtype=np.float64).ravel()
    b = np.asarray(denominator, dtype=np.float64).ravel()
    n = a.size
    ma, mb = a.mean(), b.mean()
    ratio = ma / mb
    cov = np.cov(a, b)
    var = (cov[0, 0] - 2 * ratio * cov[0, 1] + ratio ** 2 * cov[1, 1]) / (n * mb ** 2)
    return MeanEstimate(float(ratio), float(np.sqrt(max(var, 0.0))), n)


def ks_pvalue(samples: np.ndarray, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """One-sample Kolmogorov-Smirnov p-value against an analytic CDF"""
    return float(stats.kstest(np.asarray(samples).ravel(), cdf).pvalue)


def ks_two_sample_pvalue(a: np.ndarray, b: np.ndarray) -> float:
    return float(stats.ks_2samp(np.asarray(a).ravel(), np.asarray(b).ravel()).pvalue)


def energy_test_pvalue(a: np.ndarray, b: np.ndarray, rng: np.random.Generator,
                       n_resamples: int = DEFAULT_PERMUTATIONS) -> float:
    """
    Permutation p-value of the two-sample energy distance

    1-D samples use scipy's energy distance directly; multi-dimensional
    samples are capped at ENERGY_SAMPLE_CAP rows each and tested on the
    pooled distance matrix.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1 or a.shape[1] == 1:
        result = stats.permutation_test(
            (a.ravel(), b.ravel()),
            lambda u, v: stats.energy_distance(u, v),
            permutation_type="independent",
            vectorized=False,
            n_resamples=n_resamples,
            alternative="greater",
            random_state=rng,
        )
        return float(result.pvalue)

    if a.shape[0] > ENERGY_SAMPLE_CAP:
        a = a[rng.choice(a.shape[0], ENERGY_SAMPLE_CAP, replace=False)]
    if b.shape[0] > ENERGY_SAMPLE_CAP:
        b = b[rng.choice(b.shape[0], ENERGY_SAMPLE_CAP, replace=False)]
    pooled = np.vstack([a, b])
    distances = cdist(pooled, pooled)

    def statistic(ia: np.ndarray, ib: np.ndarray) -> float:
        ia = ia.astype(np.intp)
        ib = ib.astype(np.intp)
        cross = distances[np.ix_(ia, ib)].mean()
        within_a = distances[np.ix_(ia, ia)].mean()
        within_b = distances[np.ix_(ib, ib)].mean()
        return 2.0 * cross - within_a - within_b

    index = np.arange(pooled.shape[0], dtype=np.float64)
    result = stats.permutation_test(
        (index[:a.shape[0]], index[a.shape[0]:]),
        statistic,
        permutation_type="independent",
        vectorized=False,
        n_resamples=n_resamples,
        alternative="greater",
        random_state=rng,
    )
    return float(result.pvalue)


def realism_check(reconstructions: np.ndarray, fresh: np.ndarray, rng: np.random.Generator,
                  level: float = 0.01, n_resamples: Optional[int] = None) -> bool:
    """True when the energy test does not reject equality of distributions"""
    pvalue = energy_test_pvalue(reconstructions, fresh, rng, n_resamples or DEFAULT_PERMUTATIONS)
    logger.debug(f"energy test p={pvalue:.4f} at level {level}")
    return pvalue > level
