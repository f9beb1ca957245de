"""
Analytic sources with exact scores, posteriors and samplers

Every noisy quantity is expressed in variance-exploding coordinates
Y = X + eta U. Variance-preserving callers with z = alpha x + sigma u pass
y = z / alpha and eta = sigma / alpha; ``score_vp`` does the conversion.
"""
import hashlib
import json
import logging
import math
from abc import ABC, abstractmethod
from typing import Optional

import numpy as np
from scipy import special

from diffc_lab.config import settings
from diffc_lab.lab.errors import DomainError, UnsupportedSourceError
from diffc_lab.models.codec import SourceKind, SourceSpec
from diffc_lab.models.gaussian_rd import Spectrum

logger = logging.getLogger("diffc_codec")

LOG_2PI = math.log(2.0 * math.pi)


def _as_rows(points: np.ndarray, dims: int) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points.reshape(-1, dims) if dims > 1 else points[:, None]
    if points.shape[-1] != dims:
        raise DomainError(f"expected points with {dims} coordinates, got shape {points.shape}")
    return points


class AnalyticSource(ABC):
    """A source whose noisy marginals have closed-form densities and scores"""

    def __init__(self, spec: SourceSpec):
        self.spec = spec
        self.dims = spec.dims
        self.rotation = None if spec.rotation is None else np.asarray(spec.rotation, dtype=np.float64)

    # frame changes between x and the independent-coordinate frame S
    def _to_s(self, x: np.ndarray) -> np.ndarray:
        return x if self.rotation is None else x @ self.rotation

    def _from_s(self, s: np.ndarray) -> np.ndarray:
        return s if self.rotation is None else s @ self.rotation.T

    def _diag_from_s(self, var_s: np.ndarray) -> np.ndarray:
        """Diagonal of Q diag(var_s) Q^T, row by row"""
        return var_s if self.rotation is None else var_s @ (self.rotation ** 2).T

    @property
    def descriptor_hash(self) -> bytes:
        payload = json.dumps(self.spec.model_dump(mode="json"), sort_keys=True).encode()
        return hashlib.sha256(payload).digest()

    @abstractmethod
    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n draws of X"""

    @abstractmethod
    def noisy_log_density(self, y: np.ndarray, eta: float) -> np.ndarray:
        """log density of Y = X + eta U"""

    @abstractmethod
    def score_ve(self, y: np.ndarray, eta: float) -> np.ndarray:
        """grad_y log density of Y = X + eta U"""

    @abstractmethod
    def mean(self) -> np.ndarray:
        pass

    @abstractmethod
    def covariance(self) -> np.ndarray:
        pass

    def log_density(self, x: np.ndarray) -> np.ndarray:
        return self.noisy_log_density(x, 0.0)

    def score_vp(self, z: np.ndarray, alpha: float, sigma: float) -> np.ndarray:
        """grad_z log p_t(z) for z = alpha x + sigma u"""
        return self.score_ve(np.asarray(z) / alpha, sigma / alpha) / alpha

    def posterior_mean(self, y: np.ndarray, eta: float) -> np.ndarray:
        """E[X | Y = y] by Tweedie's formula"""
        y = _as_rows(y, self.dims)
        return y + eta ** 2 * self.score_ve(y, eta)

    def posterior_var(self, y: np.ndarray, eta: float) -> np.ndarray:
        """Per-coordinate Var[X_i | Y = y]"""
        raise UnsupportedSourceError(f"{self.spec.kind.value} source has no closed-form posterior variance")

    def sample_posterior(self, y: np.ndarray, eta: float, rng: np.random.Generator) -> np.ndarray:
        """One exact draw from p(x | y) per row of y"""
        raise UnsupportedSourceError(f"{self.spec.kind.value} source has no exact posterior sampler")

    def cdf(self, x: np.ndarray, eta: float = 0.0) -> np.ndarray:
        raise UnsupportedSourceError(f"{self.spec.kind.value} source has no closed-form CDF")

    def quantile(self, u: np.ndarray, eta: float = 0.0) -> np.ndarray:
        """Inverse of ``cdf`` by vectorized bisection (1-D only)"""
        u = np.asarray(u, dtype=np.float64)
        if np.any((u <= 0) | (u >= 1)):
            raise DomainError("quantile levels must lie in (0, 1)")
        spread = math.sqrt(float(np.max(np.diag(self.covariance()))) + eta ** 2)
        center = float(self.mean()[0])
        lo = np.full_like(u, center - 40.0 * spread)
        hi = np.full_like(u, center + 40.0 * spread)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid, eta) < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.max(hi - lo) <= 1e-13 * spread:
                break
        return 0.5 * (lo + hi)

    def spectrum(self) -> Spectrum:
        eig = np.linalg.eigvalsh(np.atleast_2d(self.covariance()))[::-1]
        return Spectrum(lambdas=np.maximum(eig, 1e-12).tolist())

    def canonical(self) -> "AnalyticSource":
        """The same source expressed in its S frame (rotation removed)"""
        if self.rotation is None:
            return self
        raise UnsupportedSourceError(f"{self.spec.kind.value} source cannot drop its rotation")

    def _require_1d(self) -> None:
        if self.dims != 1:
            raise UnsupportedSourceError("operation needs a one-dimensional source")


class GaussianSource(AnalyticSource):
    """X = m + Q S with S ~ N(0, diag(lambda))"""

    def __init__(self, spec: SourceSpec):
        super().__init__(spec)
        self.lambdas = np.asarray(spec.lambdas, dtype=np.float64)
        self._mean = np.zeros(self.dims) if spec.mean is None else np.asarray(spec.mean, dtype=np.float64)

    def mean(self) -> np.ndarray:
        return self._mean.copy()

    def covariance(self) -> np.ndarray:
        if self.rotation is None:
            return np.diag(self.lambdas)
        return self.rotation @ np.diag(self.lambdas) @ self.rotation.T

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        s = rng.standard_normal((n, self.dims)) * np.sqrt(self.lambdas)
        return self._mean + self._from_s(s)

    def _centered_s(self, y: np.ndarray) -> np.ndarray:
        return self._to_s(_as_rows(y, self.dims) - self._mean)

    def noisy_log_density(self, y: np.ndarray, eta: float) -> np.ndarray:
        var = self.lambdas + eta ** 2
        s = self._centered_s(y)
        return -0.5 * np.sum(s ** 2 / var + np.log(var) + LOG_2PI, axis=1)

    def score_ve(self, y: np.ndarray, eta: float) -> np.ndarray:
        return self._from_s(-self._centered_s(y) / (self.lambdas + eta ** 2))

    def posterior_mean(self, y: np.ndarray, eta: float) -> np.ndarray:
        shrink = self.lambdas / (self.lambdas + eta ** 2)
        return self._mean + self._from_s(shrink * self._centered_s(y))

    def posterior_var(self, y: np.ndarray, eta: float) -> np.ndarray:
        rows = _as_rows(y, self.dims).shape[0]
        var_s = self.lambdas * eta ** 2 / (self.lambdas + eta ** 2)
        return self._diag_from_s(np.broadcast_to(var_s, (rows, self.dims)))

    def sample_posterior(self, y: np.ndarray, eta: float, rng: np.random.Generator) -> np.ndarray:
        s = self._centered_s(y)
        shrink = self.lambdas / (self.lambdas + eta ** 2)
        var_s = self.lambdas * eta ** 2 / (self.lambdas + eta ** 2)
        draw = shrink * s + np.sqrt(var_s) * rng.standard_normal(s.shape)
        return self._mean + self._from_s(draw)

    def cdf(self, x: np.ndarray, eta: float = 0.0) -> np.ndarray:
        self._require_1d()
        std = math.sqrt(self.lambdas[0] + eta ** 2)
        return special.ndtr((np.asarray(x) - self._mean[0]) / std)

    def quantile(self, u: np.ndarray, eta: float = 0.0) -> np.ndarray:
        self._require_1d()
        std = math.sqrt(self.lambdas[0] + eta ** 2)
        return self._mean[0] + std * special.ndtri(np.asarray(u))

    def canonical(self) -> "GaussianSource":
        if self.rotation is None:
            return self
        return GaussianSource(SourceSpec(
            kind=SourceKind.GAUSSIAN, dims=self.dims, lambdas=self.lambdas.tolist(),
            mean=(self._mean @ self.rotation).tolist(),
        ))


class GaussianMixtureSource(AnalyticSource):
    """X = Q S with S a mixture of axis-aligned Gaussians"""

    def __init__(self, spec: SourceSpec):
        super().__init__(spec)
        self.weights = np.asarray(spec.weights, dtype=np.float64)
        self.means = np.asarray(spec.means, dtype=np.float64)
        self.variances = np.asarray(spec.variances, dtype=np.float64)
        self._log_weights = np.log(self.weights)

    def mean(self) -> np.ndarray:
        return self._from_s(self.weights @ self.means)

    def covariance(self) -> np.ndarray:
        m = self.weights @ self.means
        second = sum(w * (np.diag(v) + np.outer(mu, mu))
                     for w, mu, v in zip(self.weights, self.means, self.variances))
        cov_s = second - np.outer(m, m)
        if self.rotation is None:
            return cov_s
        return self.rotation @ cov_s @ self.rotation.T

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        components = rng.choice(self.weights.size, size=n, p=self.weights)
        s = self.means[components] + np.sqrt(self.variances[components]) * rng.standard_normal((n, self.dims))
        return self._from_s(s)

    def _component_terms(self, y: np.ndarray, eta: float):
        """Per-row, per-component log joint and the S-frame residuals"""
        s = self._to_s(_as_rows(y, self.dims))
        var = self.variances + eta ** 2                      # K x M
        resid = s[:, None, :] - self.means[None, :, :]       # n x K x M
        log_joint = self._log_weights - 0.5 * np.sum(resid ** 2 / var + np.log(var) + LOG_2PI, axis=2)
        return s, var, resid, log_joint

    def responsibilities(self, y: np.ndarray, eta: float) -> np.ndarray:
        _, _, _, log_joint = self._component_terms(y, eta)
        return np.exp(log_joint - special.logsumexp(log_joint, axis=1, keepdims=True))

    def noisy_log_density(self, y: np.ndarray, eta: float) -> np.ndarray:
        _, _, _, log_joint = self._component_terms(y, eta)
        return special.logsumexp(log_joint, axis=1)

    def score_ve(self, y: np.ndarray, eta: float) -> np.ndarray:
        _, var, resid, log_joint = self._component_terms(y, eta)
        resp = np.exp(log_joint - special.logsumexp(log_joint, axis=1, keepdims=True))
        score_s = -np.sum(resp[:, :, None] * resid / var, axis=1)
        return self._from_s(score_s)

    def _component_posteriors(self, y: np.ndarray, eta: float):
        _, var, resid, log_joint = self._component_terms(y, eta)
        resp = np.exp(log_joint - special.logsumexp(log_joint, axis=1, keepdims=True))
        gain = self.variances / var
        post_mean = self.means[None, :, :] + gain * resid    # n x K x M, S frame
        post_var = self.variances * eta ** 2 / var           # K x M
        return resp, post_mean, post_var

    def posterior_mean(self, y: np.ndarray, eta: float) -> np.ndarray:
        resp, post_mean, _ = self._component_posteriors(y, eta)
        return self._from_s(np.sum(resp[:, :, None] * post_mean, axis=1))

    def posterior_var(self, y: np.ndarray, eta: float) -> np.ndarray:
        resp, post_mean, post_var = self._component_posteriors(y, eta)
        mean_x = self._from_s(post_mean)                       # n x K x M
        var_x = self._diag_from_s(post_var)                    # K x M
        total_mean = np.sum(resp[:, :, None] * mean_x, axis=1)
        second = np.sum(resp[:, :, None] * (var_x[None] + mean_x ** 2), axis=1)
        return np.maximum(second - total_mean ** 2, 0.0)

    def sample_posterior(self, y: np.ndarray, eta: float, rng: np.random.Generator) -> np.ndarray:
        resp, post_mean, post_var = self._component_posteriors(y, eta)
        n = resp.shape[0]
        # inverse-CDF choice of component per row
        cumulative = np.cumsum(resp, axis=1)
        u = rng.random(n)[:, None]
        chosen = np.minimum(np.sum(cumulative < u * cumulative[:, -1:], axis=1), self.weights.size - 1)
        rows = np.arange(n)
        draw = post_mean[rows, chosen] + np.sqrt(post_var[chosen]) * rng.standard_normal((n, self.dims))
        return self._from_s(draw)

    def cdf(self, x: np.ndarray, eta: float = 0.0) -> np.ndarray:
        self._require_1d()
        x = np.asarray(x, dtype=np.float64)
        sign = 1.0 if self.rotation is None else float(self.rotation[0, 0])
        std = np.sqrt(self.variances[:, 0] + eta ** 2)
        if sign > 0:
            cdf = special.ndtr((x[..., None] - self.means[:, 0]) / std)
        else:
            cdf = special.ndtr((x[..., None] + self.means[:, 0]) / std)
        return cdf @ self.weights

    def canonical(self) -> "GaussianMixtureSource":
        if self.rotation is None:
            return self
        return GaussianMixtureSource(self.spec.model_copy(update={"rotation": None}))


class SmoothedLaplaceSource(AnalyticSource):
    """
    iid Laplace(scale) coordinates convolved with N(0, smoothing^2)

    Adding VE noise eta only widens the smoothing to sqrt(smoothing^2 + eta^2),
    so every noise level has the same closed form.
    """

    def __init__(self, spec: SourceSpec):
        super().__init__(spec)
        self.scale = float(spec.scale)
        self.smoothing = float(spec.smoothing)

    def mean(self) -> np.ndarray:
        return np.zeros(self.dims)

    def covariance(self) -> np.ndarray:
        return np.eye(self.dims) * (2.0 * self.scale ** 2 + self.smoothing ** 2)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        s = rng.laplace(0.0, self.scale, size=(n, self.dims))
        s = s + self.smoothing * rng.standard_normal((n, self.dims))
        return self._from_s(s)

    def _log_terms(self, s: np.ndarray, eta: float):
        b = self.scale
        w = math.sqrt(self.smoothing ** 2 + eta ** 2)
        a = (w ** 2 / b - s) / (w * math.sqrt(2.0))
        c = (w ** 2 / b + s) / (w * math.sqrt(2.0))
        # log erfc(u) = log 2 + log Phi(-u sqrt 2)
        left = -s / b + math.log(2.0) + special.log_ndtr(-a * math.sqrt(2.0))
        right = s / b + math.log(2.0) + special.log_ndtr(-c * math.sqrt(2.0))
        return left, right, w

    def noisy_log_density(self, y: np.ndarray, eta: float) -> np.ndarray:
        s = self._to_s(_as_rows(y, self.dims))
        left, right, w = self._log_terms(s, eta)
        b = self.scale
        per_coord = -math.log(4.0 * b) + w ** 2 / (2.0 * b ** 2) + np.logaddexp(left, right)
        return np.sum(per_coord, axis=1)

    def score_ve(self, y: np.ndarray, eta: float) -> np.ndarray:
        s = self._to_s(_as_rows(y, self.dims))
        left, right, _ = self._log_terms(s, eta)
        return self._from_s(np.tanh(0.5 * (right - left)) / self.scale)


def build_source(spec: SourceSpec) -> AnalyticSource:
    if spec.kind == SourceKind.GAUSSIAN:
        return GaussianSource(spec)
    if spec.kind == SourceKind.GMM:
        return GaussianMixtureSource(spec)
    return SmoothedLaplaceSource(spec)


def standard_normal(dims: int = 1) -> GaussianSource:
    return GaussianSource(SourceSpec(kind=SourceKind.GAUSSIAN, dims=dims, lambdas=[1.0] * dims))


def gaussian_from_spectrum(spectrum: Spectrum, rotation: Optional[np.ndarray] = None) -> GaussianSource:
    return GaussianSource(SourceSpec(
        kind=SourceKind.GAUSSIAN, dims=spectrum.dims, lambdas=list(spectrum.lambdas),
        rotation=None if rotation is None else np.asarray(rotation).tolist(),
    ))


def two_mode_gmm(separation: float = 2.0, variance: float = 0.25) -> GaussianMixtureSource:
    """1-D mixture 0.5 N(-separation, variance) + 0.5 N(separation, variance)"""
    return GaussianMixtureSource(SourceSpec(
        kind=SourceKind.GMM, dims=1, weights=[0.5, 0.5],
        means=[[-separation], [separation]], variances=[[variance], [variance]],
    ))


def smoothed_laplace(dims: int = 1, smoothing: Optional[float] = None) -> SmoothedLaplaceSource:
    """Unit-variance Laplace (scale 1/sqrt 2) with a small Gaussian smoothing"""
    smoothing = settings.DIFFC_LAPLACE_SMOOTHING if smoothing is None else smoothing
    return SmoothedLaplaceSource(SourceSpec(
        kind=SourceKind.LAPLACE, dims=dims, scale=1.0 / math.sqrt(2.0), smoothing=smoothing,
    ))
