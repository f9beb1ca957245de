import math

import numpy as np
import pytest

from diffc_lab.lab.diffusion import (
    corrupt_at,
    forward_corrupt,
    make_schedule,
    reconstruct_ancestral,
    reconstruct_ancestral_at,
    reconstruct_flow,
    reconstruct_flow_at,
    schedule_from_id,
    step_for_sigma,
)
from diffc_lab.lab.errors import DomainError, NonFiniteScoreError
from diffc_lab.lab.sources import GaussianSource, standard_normal, two_mode_gmm
from diffc_lab.models.codec import SourceKind, SourceSpec


@pytest.mark.parametrize("preset,steps", [("cosine", 100), ("cosine", 7), ("linear", 1000), ("linear", 50)])
def test_presets_are_valid_schedules(preset, steps):
    schedule = make_schedule(preset, steps)
    sigma = np.asarray(schedule.sigma)
    assert schedule.steps == steps
    assert np.all(np.diff(sigma) > 0)
    assert 0 < sigma[0] and sigma[-1] < 1
    alpha = np.sqrt(1 - sigma ** 2)
    np.testing.assert_allclose(schedule.eta, sigma / alpha, rtol=1e-12)
    assert sum(schedule.beta) == pytest.approx(-math.log(1 - sigma[-1] ** 2), rel=1e-10)


def test_cosine_schedule_ends_at_the_signal_floor():
    schedule = make_schedule("cosine", 100)
    assert 1 - schedule.sigma[-1] ** 2 == pytest.approx(1e-4, rel=1e-9)


def test_schedule_lookup():
    schedule = make_schedule("cosine", 100)
    assert step_for_sigma(schedule, schedule.sigma[9]) == 10
    assert schedule_from_id(schedule.preset_id, 100).sigma == schedule.sigma
    assert schedule_from_id(2, 50).preset == "linear"
    with pytest.raises(DomainError):
        schedule_from_id(9, 50)
    with pytest.raises(DomainError):
        make_schedule("sigmoid", 50)
    with pytest.raises(DomainError):
        step_for_sigma(schedule, 1.0)
    with pytest.raises(ValueError):
        schedule.sigma_at(0)


def test_forward_corruption_noise_level():
    schedule = make_schedule("cosine", 20)
    rng = np.random.default_rng(0)
    z = forward_corrupt(np.zeros(100_000), schedule, 10, rng)
    assert z.std() == pytest.approx(schedule.sigma_at(10), rel=0.02)
    with pytest.raises(DomainError):
        forward_corrupt(np.zeros(3), schedule, 21, rng)
    with pytest.raises(DomainError):
        corrupt_at(np.zeros(3), 1.5, rng)


@pytest.mark.parametrize("sigma", [0.05, 0.5, 0.95])
def test_flow_on_standard_normal_is_the_identity(sigma):
    z = np.linspace(-3, 3, 25)[:, None]
    np.testing.assert_allclose(reconstruct_flow(z, standard_normal(), sigma), z, atol=1e-9)


def test_flow_on_scaled_gaussian_matches_closed_form():
    source = GaussianSource(SourceSpec(kind=SourceKind.GAUSSIAN, dims=1, lambdas=[4.0]))
    sigma = 0.6
    alpha = math.sqrt(1 - sigma ** 2)
    eta = sigma / alpha
    z = np.linspace(-2, 2, 9)[:, None]
    expected = z / alpha * 2.0 / math.sqrt(4.0 + eta ** 2)
    np.testing.assert_allclose(reconstruct_flow(z, source, sigma), expected, rtol=1e-8)


def test_flow_is_deterministic_and_monotone():
    source = two_mode_gmm()
    z = np.linspace(-2, 2, 41)[:, None]
    first = reconstruct_flow(z, source, 0.7)
    np.testing.assert_array_equal(first, reconstruct_flow(z, source, 0.7))
    assert np.all(np.diff(first[:, 0]) > 0)


@pytest.mark.parametrize("sigma", [0.3, 0.9])
def test_flow_converges_under_step_doubling(sigma):
    z = np.linspace(-3, 3, 31)[:, None]
    source = two_mode_gmm(1.0, 0.5)
    coarse = reconstruct_flow(z, source, sigma, ode_steps=256)
    fine = reconstruct_flow(z, source, sigma, ode_steps=512)
    assert np.max(np.abs(coarse - fine)) < 1e-6


def test_reconstructions_by_schedule_step():
    schedule = make_schedule("cosine", 20)
    source = two_mode_gmm()
    z = np.linspace(-1, 1, 5)[:, None]
    sigma = schedule.sigma_at(12)
    np.testing.assert_array_equal(reconstruct_flow_at(z, source, schedule, 12, 64),
                                  reconstruct_flow(z, source, sigma, 64))
    np.testing.assert_array_equal(
        reconstruct_ancestral_at(z, source, schedule, 12, np.random.default_rng(3)),
        reconstruct_ancestral(z, source, sigma, np.random.default_rng(3)),
    )
    with pytest.raises(DomainError):
        reconstruct_flow_at(z, source, schedule, 21)
    with pytest.raises(DomainError):
        reconstruct_ancestral_at(z, source, schedule, 0, np.random.default_rng(3))


def test_ancestral_draws_match_the_posterior():
    sigma = 0.4
    alpha = math.sqrt(1 - sigma ** 2)
    z = np.full((200_000, 1), 0.8)
    x = reconstruct_ancestral(z, standard_normal(), sigma, np.random.default_rng(1))
    assert x.mean() == pytest.approx(alpha * 0.8, abs=4 * sigma / math.sqrt(z.size))
    assert x.var() == pytest.approx(sigma ** 2, rel=0.02)


class _BrokenSource(GaussianSource):
    def score_ve(self, y, eta):
        score = super().score_ve(y, eta)
        score[0] = np.nan
        return score


def test_non_finite_score_is_reported():
    broken = _BrokenSource(standard_normal().spec)
    with pytest.raises(NonFiniteScoreError) as info:
        reconstruct_flow(np.zeros((3, 1)), broken, 0.5, ode_steps=4)
    assert info.value.noise_level == pytest.approx(0.5 / math.sqrt(0.75))
    with pytest.raises(DomainError):
        reconstruct_flow(np.zeros((3, 1)), standard_normal(), 0.5, ode_steps=0)
