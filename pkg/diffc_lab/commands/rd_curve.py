"""
rd-curve: analytic rate-distortion curves of a Gaussian source
"""
import logging
from pathlib import Path
from typing import Dict, List

from diffc_lab.commands.files import load_spectrum, write_component_snr, write_curve
from diffc_lab.lab.gaussian_rd import control_for_rate, per_component_snr, schedule_for, sweep_curve
from diffc_lab.models.cli import RunConfig
from diffc_lab.models.gaussian_rd import Reconstruction, Variant

logger = logging.getLogger("diffc_cli")

# variants compared component by component at a common rate
SNR_VARIANTS = {
    Variant.DIFFC_A: Reconstruction.ANCESTRAL,
    Variant.DIFFC_F: Reconstruction.FLOW,
    Variant.DIFFC_A_STAR: Reconstruction.ANCESTRAL,
    Variant.DIFFC_F_STAR: Reconstruction.FLOW,
    Variant.PINK_A: Reconstruction.ANCESTRAL,
    Variant.PINK_F: Reconstruction.FLOW,
}


def cmd_rd_curve(config: RunConfig) -> List[Path]:
    """
    Write one CSV per variant plus the per-component SNR at a named rate

    :param config: resolved run configuration; ``out`` is a directory
    :return: paths written
    """
    spectrum = load_spectrum(config)
    logger.info(f"Computing RD curves for a {spectrum.dims}-component spectrum")
    written = []
    for variant in Variant:
        grid = config.sigma_grid if variant.control == "sigma" else config.theta_grid
        curve = sweep_curve(spectrum, variant, grid)
        written.append(write_curve(config.out / f"rd_{variant.slug}.csv", curve))

    controls: Dict[str, float] = {}
    snrs: Dict[str, List[float]] = {}
    for variant, reconstruction in SNR_VARIANTS.items():
        control = control_for_rate(spectrum, variant, config.snr_rate_bpd)
        controls[variant.value] = control
        snrs[variant.value] = per_component_snr(spectrum, schedule_for(spectrum, variant, control), reconstruction)
    written.append(write_component_snr(config.out / "component_snr.csv", config.snr_rate_bpd, controls, snrs))
    logger.info(f"Wrote {len(written)} files to {config.out}")
    return written
