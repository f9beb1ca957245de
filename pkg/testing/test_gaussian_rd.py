import logging
import math

import numpy as np
import pytest

from diffc_lab.lab.errors import DomainError
from diffc_lab.lab.gaussian_rd import (
    control_for_rate,
    diffc_a_point,
    diffc_a_star_point,
    diffc_f_point,
    diffc_f_star_point,
    fit_spectrum,
    gaussian_rdf,
    per_component_snr,
    pink_point,
    power_law_spectrum,
    rd_reference_point,
    schedule_for,
    snr_at,
    sweep_curve,
    variant_point,
    waterfill,
)
from diffc_lab.models.gaussian_rd import Reconstruction, Spectrum, Variant

UNIT = Spectrum(lambdas=[1.0])
WHITE = Spectrum(lambdas=[1.0] * 8)
POWER_LAW = power_law_spectrum(256)
TEN_LOG_TWO = 10.0 * math.log10(2.0)


@pytest.mark.parametrize("sigma", [1e-3, 0.1, 0.5, 0.9, 0.999])
def test_standard_normal_ancestral_point(sigma):
    point = diffc_a_point(UNIT, sigma)
    assert point.distortion == pytest.approx(2 * sigma ** 2, rel=1e-12, abs=1e-12)
    assert point.rate_bits == pytest.approx(-math.log2(sigma), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("sigma", [1e-3, 0.1, 0.5, 0.9, 0.999])
def test_standard_normal_flow_point(sigma):
    point = diffc_f_point(UNIT, sigma)
    assert point.distortion == pytest.approx(2 - 2 * math.sqrt(1 - sigma ** 2), rel=1e-12, abs=1e-12)
    assert point.rate_bits == diffc_a_point(UNIT, sigma).rate_bits


def test_flow_halves_ancestral_error_at_low_noise():
    ratio = diffc_f_point(UNIT, 1e-3).distortion / diffc_a_point(UNIT, 1e-3).distortion
    assert ratio == pytest.approx(0.5, abs=1e-6)
    assert diffc_f_point(UNIT, 0.02).distortion / diffc_a_point(UNIT, 0.02).distortion == pytest.approx(
        0.50005, abs=1e-5
    )


def test_waterfill_allocation():
    spectrum = Spectrum(lambdas=[4.0, 2.0, 1.0, 0.25])
    solution = waterfill(spectrum, 2.0)
    assert solution.total == pytest.approx(2.0, rel=1e-12)
    assert solution.per_component == pytest.approx(np.minimum(spectrum.array, solution.theta).tolist())
    assert solution.theta == pytest.approx((2.0 - 0.25) / 3)


def test_waterfill_rejects_out_of_range_distortion():
    with pytest.raises(DomainError):
        waterfill(UNIT, 0.0)
    with pytest.raises(DomainError):
        waterfill(UNIT, 1.5)


def test_gaussian_rdf_scalar():
    assert gaussian_rdf(UNIT, 0.25) == pytest.approx(1.0, rel=1e-12)
    assert gaussian_rdf(UNIT, 1.0) == 0.0


@pytest.mark.parametrize("theta", [1e-4, 1e-2, 0.05, 0.3])
def test_water_filled_ancestral_equals_half_distortion_bound(theta):
    star = diffc_a_star_point(POWER_LAW, theta)
    reference = rd_reference_point(POWER_LAW, theta, halved=True)
    assert star.distortion == pytest.approx(reference.distortion, rel=1e-12)
    assert star.rate_bits == pytest.approx(reference.rate_bits, rel=1e-9, abs=1e-9)


def test_white_spectrum_variants_coincide():
    for sigma in (0.05, 0.4, 0.8):
        iso = diffc_a_point(WHITE, sigma)
        star = diffc_a_star_point(WHITE, sigma ** 2)
        assert star.rate_bits == pytest.approx(iso.rate_bits, rel=1e-12)
        assert star.distortion == pytest.approx(iso.distortion, rel=1e-12)
        assert pink_point(WHITE, sigma).distortion == pytest.approx(iso.distortion, rel=1e-12)

    for theta in (0.01, 0.3, 2.0):
        optimal = diffc_f_star_point(WHITE, theta)
        sigma = math.sqrt(schedule_for(WHITE, Variant.DIFFC_F_STAR, theta).signal_deficit[0])
        flow = diffc_f_point(WHITE, sigma)
        assert flow.rate_bits == pytest.approx(optimal.rate_bits, rel=1e-10)
        assert flow.distortion == pytest.approx(optimal.distortion, rel=1e-10)


@pytest.mark.parametrize("rate_bpd", [0.05, 0.2, 0.391, 1.0, 2.0])
def test_optimal_flow_gain_over_water_filled_is_at_most_three_db(rate_bpd):
    theta_a = control_for_rate(POWER_LAW, Variant.DIFFC_A_STAR, rate_bpd)
    theta_f = control_for_rate(POWER_LAW, Variant.DIFFC_F_STAR, rate_bpd)
    gap = diffc_f_star_point(POWER_LAW, theta_f).snr_db - diffc_a_star_point(POWER_LAW, theta_a).snr_db
    assert -1e-9 <= gap <= TEN_LOG_TWO + 0.01


def test_control_for_rate_hits_requested_rate():
    for variant in (Variant.DIFFC_A, Variant.DIFFC_F_STAR, Variant.PINK_F):
        control = control_for_rate(POWER_LAW, variant, 0.391)
        sched = schedule_for(POWER_LAW, variant, control)
        assert sched.control == pytest.approx(control)
    sigma = control_for_rate(POWER_LAW, Variant.DIFFC_A, 0.391)
    assert diffc_a_point(POWER_LAW, sigma).rate_bpd == pytest.approx(0.391, rel=1e-8)


@pytest.mark.parametrize("variant", [Variant.DIFFC_A, Variant.DIFFC_F, Variant.DIFFC_A_STAR,
                                     Variant.PINK_A, Variant.RD])
def test_curves_are_monotone(variant):
    curve = sweep_curve(power_law_spectrum(16), variant)
    assert curve.is_monotone()
    assert len(curve.points) == 64


def test_sweep_attaches_references_and_interpolates():
    curve = sweep_curve(POWER_LAW, Variant.DIFFC_A, with_references=True)
    assert set(curve.references) == {Variant.RD.value, Variant.RD_HALF.value}
    sigma = control_for_rate(POWER_LAW, Variant.DIFFC_A, 0.391)
    exact = diffc_a_point(POWER_LAW, sigma).snr_db
    assert snr_at(curve, 0.391) == pytest.approx(exact, abs=0.2)
    with pytest.raises(DomainError):
        snr_at(curve, 1e6)


def test_unreceived_components_report_zero_snr():
    theta = 0.01
    sched = schedule_for(POWER_LAW, Variant.DIFFC_A_STAR, theta)
    snrs = per_component_snr(POWER_LAW, sched, Reconstruction.ANCESTRAL)
    for lam, snr in zip(POWER_LAW.lambdas, snrs):
        if lam <= theta:
            assert snr == 0.0
        else:
            assert snr > 0.0


def test_zero_water_level_is_unbounded():
    point = rd_reference_point(UNIT, 0.0)
    assert point.unbounded
    assert point.rate_bpd is None


def test_control_validation():
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(DomainError):
            diffc_a_point(UNIT, bad)
    with pytest.raises(DomainError):
        diffc_a_star_point(UNIT, -1.0)


def test_power_law_spectrum_has_unit_mean():
    spectrum = power_law_spectrum(64)
    assert np.mean(spectrum.array) == pytest.approx(1.0)
    assert spectrum.lambdas == sorted(spectrum.lambdas, reverse=True)


def test_fit_spectrum_recovers_eigenvalues():
    rng = np.random.default_rng(3)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    samples = (rng.standard_normal((200_000, 3)) * np.sqrt([4.0, 1.0, 0.25])) @ q.T
    fit = fit_spectrum(samples)
    assert fit.spectrum.lambdas == pytest.approx([4.0, 1.0, 0.25], rel=0.02)
    assert not fit.rank_deficient


def test_fit_spectrum_warns_on_rank_deficiency(caplog):
    rng = np.random.default_rng(4)
    column = rng.standard_normal((50, 1))
    with caplog.at_level(logging.WARNING, logger="diffc_rd"):
        fit = fit_spectrum(np.hstack([column, column]))
    assert fit.rank_deficient
    assert "rank deficient" in caplog.text
    with pytest.raises(DomainError):
        fit_spectrum(rng.standard_normal((2, 3)))


def _snr_at_rate(variant, rate_bpd):
    return variant_point(POWER_LAW, variant, control_for_rate(POWER_LAW, variant, rate_bpd)).snr_db


@pytest.mark.parametrize("rate_bpd", np.linspace(0.05, 2.5, 12).tolist())
def test_variant_ordering_on_power_law_spectrum(rate_bpd):
    f_star = _snr_at_rate(Variant.DIFFC_F_STAR, rate_bpd)
    f = _snr_at_rate(Variant.DIFFC_F, rate_bpd)
    a_star = _snr_at_rate(Variant.DIFFC_A_STAR, rate_bpd)
    a = _snr_at_rate(Variant.DIFFC_A, rate_bpd)
    assert f_star >= f - 1e-9
    assert f >= a_star - 1e-9
    assert a_star >= a - 1e-9
    if rate_bpd >= 1.5:
        assert 2.0 <= f - a <= 3.02


@pytest.mark.parametrize("reconstruction,variant", [(Reconstruction.ANCESTRAL, Variant.PINK_A),
                                                    (Reconstruction.FLOW, Variant.PINK_F)])
def test_pink_noise_snr_is_flat_across_components(reconstruction, variant):
    sigma = control_for_rate(POWER_LAW, variant, 0.391)
    snrs = per_component_snr(POWER_LAW, schedule_for(POWER_LAW, variant, sigma), reconstruction)
    assert np.ptp(snrs) <= 1e-9


def test_waterfill_beats_random_feasible_allocations():
    spectrum = Spectrum(lambdas=[4.0, 2.0, 1.0, 0.25, 0.1])
    lam = spectrum.array
    distortion = 2.0
    best = gaussian_rdf(spectrum, distortion)
    rng = np.random.default_rng(6)
    tried = 0
    while tried < 1000:
        allocation = rng.uniform(0.01, 1.0, lam.size) * lam
        allocation *= distortion / allocation.sum()
        if np.any(allocation > lam):
            continue
        tried += 1
        assert best <= 0.5 * np.sum(np.log2(lam / allocation)) + 1e-12


@pytest.mark.parametrize("sigma", [0.05, 0.3, 0.7, 0.95])
def test_isotropic_ancestral_is_never_below_half_distortion_bound(sigma):
    point = diffc_a_point(POWER_LAW, sigma)
    bound = gaussian_rdf(POWER_LAW, point.distortion / 2.0)
    assert point.rate_bits > bound + 1e-6

    white = diffc_a_point(WHITE, sigma)
    assert white.rate_bits == pytest.approx(gaussian_rdf(WHITE, white.distortion / 2.0), rel=1e-9)


@pytest.mark.parametrize("variant,control", [(Variant.DIFFC_A_STAR, 0.02), (Variant.DIFFC_F_STAR, 0.02),
                                             (Variant.PINK_A, 0.4), (Variant.PINK_F, 0.4)])
def test_scaling_the_spectrum_scales_distortion_only(variant, control):
    spectrum = power_law_spectrum(32)
    factor = 7.5
    scaled_control = control * factor if variant.control == "theta" else control
    base = variant_point(spectrum, variant, control)
    scaled = variant_point(spectrum.scaled(factor), variant, scaled_control)
    assert scaled.rate_bits == pytest.approx(base.rate_bits, rel=1e-10)
    assert scaled.distortion == pytest.approx(factor * base.distortion, rel=1e-10)
    assert scaled.snr_db == pytest.approx(base.snr_db, abs=1e-9)
