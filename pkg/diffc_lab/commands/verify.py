"""
verify / g-curve: Monte Carlo reports
"""
import logging
from pathlib import Path
from typing import List, Tuple

from diffc_lab.commands.files import load_source, write_g_curve, write_report
from diffc_lab.lab.diffusion import make_schedule
from diffc_lab.lab.harness import g_curve, run_suite
from diffc_lab.models.cli import RunConfig

logger = logging.getLogger("diffc_cli")

G_CURVE_SAMPLES = 10 ** 4


def _has_source(config: RunConfig) -> bool:
    return any(v is not None for v in (config.source, config.spectrum, config.samples_file))


def cmd_verify(config: RunConfig) -> Tuple[List[Path], bool]:
    """
    Run the requested checks and write one report per check

    :return: paths written and whether every asserted row passed
    """
    source = load_source(config) if _has_source(config) else None
    reports = run_suite(
        theorem_ids=config.theorem or None,
        n_samples=config.samples,
        seed=config.seed,
        sigma=config.sigma,
        source=source,
        schedule=make_schedule(config.schedule, config.steps),
        sigma_grid=config.sigma_grid,
    )
    written = [write_report(config.out / f"report_{r.report_id}.csv", r) for r in reports]
    passed = all(r.passed for r in reports)
    for report in reports:
        for failure in report.failures:
            logger.error(
                f"[{report.report_id}] {failure.condition}: estimate {failure.estimate:.6g} "
                f"(s.e. {failure.stderr:.3g}) against bound {failure.bound:.6g}"
            )
        for note in report.notes:
            logger.warning(f"[{report.report_id}] {note}")
    return written, passed


def cmd_g_curve(config: RunConfig) -> List[Path]:
    """G_t / M at every schedule step, for the named source (standard normal by default)"""
    source = load_source(config)
    schedule = make_schedule(config.schedule, config.steps)
    estimates = g_curve(source, schedule, config.samples or G_CURVE_SAMPLES, config.seed)
    return [write_g_curve(config.out / "g_curve.csv", estimates)]
