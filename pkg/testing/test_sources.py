import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import special

from diffc_lab.lab.errors import DomainError, UnsupportedSourceError
from diffc_lab.lab.sources import (
    AnalyticSource,
    GaussianMixtureSource,
    GaussianSource,
    build_source,
    smoothed_laplace,
    standard_normal,
    two_mode_gmm,
)
from diffc_lab.models.codec import SourceKind, SourceSpec

ANGLE = 0.6
ROTATION = [[math.cos(ANGLE), -math.sin(ANGLE)], [math.sin(ANGLE), math.cos(ANGLE)]]


def _rotated_gaussian():
    return GaussianSource(SourceSpec(
        kind=SourceKind.GAUSSIAN, dims=2, lambdas=[3.0, 0.5], mean=[0.4, -0.2], rotation=ROTATION,
    ))


def _rotated_gmm():
    return GaussianMixtureSource(SourceSpec(
        kind=SourceKind.GMM, dims=2, weights=[0.3, 0.7],
        means=[[-1.0, 0.5], [1.5, 0.0]], variances=[[0.2, 0.4], [0.5, 0.1]], rotation=ROTATION,
    ))


def _numeric_gradient(source, y, eta, h=1e-5):
    grad = np.zeros_like(y)
    for i in range(y.shape[1]):
        step = np.zeros(y.shape[1])
        step[i] = h
        grad[:, i] = (source.noisy_log_density(y + step, eta) - source.noisy_log_density(y - step, eta)) / (2 * h)
    return grad


@pytest.mark.parametrize("make", [_rotated_gaussian, _rotated_gmm, lambda: smoothed_laplace(2)])
@pytest.mark.parametrize("eta", [0.1, 0.7, 2.0])
def test_score_is_gradient_of_log_density(make, eta):
    source = make()
    y = np.random.default_rng(0).standard_normal((20, 2)) * 1.5
    np.testing.assert_allclose(source.score_ve(y, eta), _numeric_gradient(source, y, eta), rtol=1e-5, atol=1e-6)


def test_vp_score_matches_ve_conversion():
    source = two_mode_gmm()
    alpha, sigma = 0.8, 0.6
    z = np.linspace(-3, 3, 11)[:, None]
    np.testing.assert_allclose(
        source.score_vp(z, alpha, sigma), source.score_ve(z / alpha, sigma / alpha) / alpha, rtol=1e-12
    )


@pytest.mark.parametrize("make", [_rotated_gaussian, _rotated_gmm])
def test_closed_form_posterior_mean_agrees_with_tweedie(make):
    source = make()
    y = np.random.default_rng(1).standard_normal((50, 2))
    for eta in (0.05, 0.5, 3.0):
        np.testing.assert_allclose(
            source.posterior_mean(y, eta), AnalyticSource.posterior_mean(source, y, eta), rtol=1e-9, atol=1e-10
        )


def test_posterior_sampler_moments():
    source = _rotated_gmm()
    eta = 0.8
    y = np.tile([[0.3, 0.9]], (200_000, 1))
    draws = source.sample_posterior(y, eta, np.random.default_rng(2))
    mean = source.posterior_mean(y[:1], eta)[0]
    var = source.posterior_var(y[:1], eta)[0]
    se = np.sqrt(var / draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 4 * se)
    np.testing.assert_allclose(draws.var(axis=0), var, rtol=0.02)


def test_gaussian_posterior_variance_closed_form():
    source = standard_normal()
    var = source.posterior_var(np.zeros((3, 1)), 0.5)
    np.testing.assert_allclose(var, 0.25 / 1.25)


def test_sample_covariance_follows_rotation():
    source = _rotated_gaussian()
    x = source.sample(200_000, np.random.default_rng(3))
    np.testing.assert_allclose(np.cov(x.T), source.covariance(), atol=0.05)
    np.testing.assert_allclose(x.mean(axis=0), source.mean(), atol=0.02)
    assert source.spectrum().lambdas == pytest.approx([3.0, 0.5])


def test_canonical_frame_preserves_densities():
    for source in (_rotated_gaussian(), _rotated_gmm()):
        canonical = source.canonical()
        assert canonical.rotation is None
        y = np.random.default_rng(4).standard_normal((10, 2))
        q = np.asarray(ROTATION)
        np.testing.assert_allclose(
            source.noisy_log_density(y, 0.3), canonical.noisy_log_density(y @ q, 0.3), rtol=1e-12
        )


@pytest.mark.parametrize("eta", [0.0, 0.4])
def test_quantile_inverts_cdf(eta):
    gmm = two_mode_gmm()
    u = np.linspace(0.001, 0.999, 101)
    np.testing.assert_allclose(gmm.cdf(gmm.quantile(u, eta), eta), u, atol=1e-10)
    normal = standard_normal()
    np.testing.assert_allclose(normal.quantile(u, eta), math.sqrt(1 + eta ** 2) * special.ndtri(u), rtol=1e-12)
    with pytest.raises(DomainError):
        gmm.quantile(np.array([0.0, 0.5]))


def test_reflected_mixture_cdf():
    spec = two_mode_gmm(1.0, 0.3).spec.model_copy(update={"weights": [0.2, 0.8], "rotation": [[-1.0]]})
    reflected = GaussianMixtureSource(spec)
    plain = GaussianMixtureSource(spec.model_copy(update={"rotation": None}))
    x = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(reflected.cdf(x), 1.0 - plain.cdf(-x), atol=1e-12)


def test_laplace_density_approaches_unsmoothed_limit():
    source = smoothed_laplace()
    b = 1.0 / math.sqrt(2.0)
    y = np.array([[-2.0], [-0.7], [0.7], [1.9]])
    exact = -math.log(2 * b) - np.abs(y[:, 0]) / b
    np.testing.assert_allclose(source.noisy_log_density(y, 0.0), exact, atol=1e-4)
    assert source.covariance()[0, 0] == pytest.approx(1.0, abs=1e-5)


def test_laplace_has_no_exact_posterior_or_cdf():
    source = smoothed_laplace()
    rng = np.random.default_rng(5)
    with pytest.raises(UnsupportedSourceError):
        source.sample_posterior(np.zeros((2, 1)), 0.3, rng)
    with pytest.raises(UnsupportedSourceError):
        source.posterior_var(np.zeros((2, 1)), 0.3)
    with pytest.raises(UnsupportedSourceError):
        source.cdf(np.zeros(2))
    with pytest.raises(UnsupportedSourceError):
        standard_normal(2).cdf(np.zeros(2))


def test_points_with_wrong_width_are_rejected():
    with pytest.raises(DomainError):
        _rotated_gaussian().score_ve(np.zeros((4, 3)), 0.5)


def test_source_spec_validation():
    with pytest.raises(ValidationError):
        SourceSpec(kind=SourceKind.GAUSSIAN, dims=2, lambdas=[1.0])
    with pytest.raises(ValidationError):
        SourceSpec(kind=SourceKind.GAUSSIAN, dims=2, lambdas=[1.0, 1.0], rotation=[[1.0, 0.1], [0.0, 1.0]])
    with pytest.raises(ValidationError):
        SourceSpec(kind=SourceKind.GMM, dims=1, weights=[0.5, 0.6], means=[[0.0], [1.0]],
                   variances=[[1.0], [1.0]])
    with pytest.raises(ValidationError):
        SourceSpec(kind=SourceKind.LAPLACE, dims=1, scale=1.0, smoothing=0.0)


def test_descriptor_hash_identifies_the_source():
    a = build_source(standard_normal().spec)
    assert len(a.descriptor_hash) == 32
    assert a.descriptor_hash == standard_normal().descriptor_hash
    assert a.descriptor_hash != two_mode_gmm().descriptor_hash
