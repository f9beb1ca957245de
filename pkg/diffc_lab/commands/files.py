"""
Reading inputs and writing result files

Every output goes to a temporary file in the destination directory and is
renamed into place, so readers never see a partial file.
"""
import csv
import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from diffc_lab.lab.errors import FormatError
from diffc_lab.lab.gaussian_rd import fit_spectrum, power_law_spectrum
from diffc_lab.lab.sources import (
    AnalyticSource,
    GaussianSource,
    build_source,
    gaussian_from_spectrum,
    smoothed_laplace,
    standard_normal,
    two_mode_gmm,
)
from diffc_lab.models.cli import RunConfig
from diffc_lab.models.codec import RateLedger, SourceSpec
from diffc_lab.models.gaussian_rd import RDCurve, Spectrum
from diffc_lab.models.harness import GEstimate, TheoremReport

logger = logging.getLogger("diffc_cli")

POWERLAW_DIMS = 256
CURVE_HEADER = ["variant", "rate_bpd", "distortion", "snr_db"]
# written in place of a rate or SNR that has no finite value
UNBOUNDED = "unbounded"
REPORT_HEADER = ["theorem", "condition", "n", "estimate", "stderr", "bound", "pass"]


def atomic_write_bytes(path: Path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug(f"Wrote {len(data)} bytes to {path}")
    return path


def atomic_write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return atomic_write_bytes(path, buffer.getvalue().encode("utf-8"))


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and not np.isfinite(value)):
        return UNBOUNDED
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


# ---------------------------------------------------------------------------
# inputs
# ---------------------------------------------------------------------------

def read_bytes(path: Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e}") from e


def read_matrix(path: Path) -> np.ndarray:
    """Rows of numbers from a .npy file or a comma/whitespace separated text file"""
    path = Path(path)
    try:
        if path.suffix == ".npy":
            data = np.load(path, allow_pickle=False)
        else:
            text = path.read_text().replace(",", " ")
            rows = [line.split() for line in text.splitlines() if line.strip() and not line.startswith("#")]
            data = np.array([[float(v) for v in row] for row in rows], dtype=np.float64)
    except (OSError, ValueError) as e:
        raise FormatError(f"cannot read numbers from {path}: {e}") from e
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.size == 0 or not np.all(np.isfinite(data)):
        raise FormatError(f"{path} holds no finite numbers")
    return data


def read_vector(path: Path) -> np.ndarray:
    return read_matrix(path).ravel()


def read_spectrum(path: Path) -> Spectrum:
    """One eigenvalue per number; layout of the file does not matter"""
    values = read_vector(path)
    try:
        return Spectrum(lambdas=values.tolist())
    except ValidationError as e:
        raise FormatError(f"invalid spectrum in {path}: {e}") from e


def read_source_spec(path: Path) -> SourceSpec:
    try:
        return SourceSpec.model_validate(json.loads(Path(path).read_text()))
    except (OSError, ValueError) as e:
        raise FormatError(f"invalid source description in {path}: {e}") from e


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------

def write_curve(path: Path, curve: RDCurve) -> Path:
    rows = [[curve.variant.value, _fmt(p.rate_bpd), _fmt(p.distortion), _fmt(p.snr_db)] for p in curve.points]
    unbounded = sum(p.unbounded for p in curve.points)
    if unbounded:
        logger.info(f"{curve.variant.value}: {unbounded} point(s) at unbounded rate written as '{UNBOUNDED}'")
    return atomic_write_csv(path, CURVE_HEADER, rows)


def write_component_snr(path: Path, rate_bpd: float, controls: dict, snrs: dict) -> Path:
    """One row per principal component, one column per variant"""
    names = list(snrs)
    header = ["component"] + [f"{name} snr_db" for name in names]
    dims = len(next(iter(snrs.values())))
    rows = [[i] + [_fmt(snrs[name][i]) for name in names] for i in range(dims)]
    rows.append(["control"] + [_fmt(controls[name]) for name in names])
    rows.append(["rate_bpd"] + [_fmt(rate_bpd)] * len(names))
    return atomic_write_csv(path, header, rows)


def write_ledger(path: Path, ledger: RateLedger) -> Path:
    rows: List[List[str]] = [
        ["prior_term_bits", _fmt(ledger.prior_term_bits)],
        ["total_kl_bits", _fmt(ledger.total_kl_bits)],
        ["bound_bits", _fmt(ledger.bound_bits)],
        ["chunk_model_bits", _fmt(ledger.chunk_model_bits)],
        ["chunk_bits", _fmt(ledger.chunk_bits)],
        ["chunks", str(len(ledger.chunks))],
        ["ideal_codelength_bits", _fmt(ledger.ideal_codelength_bits)],
        ["realized_bits", str(ledger.realized_bits)],
        ["candidates_examined", str(ledger.candidates_examined)],
    ]
    rows += [[f"step_kl_bits[{i}]", _fmt(kl)] for i, kl in enumerate(ledger.per_step_kl_bits)]
    return atomic_write_csv(path, ["quantity", "value"], rows)


def write_report(path: Path, report: TheoremReport) -> Path:
    return atomic_write_csv(path, REPORT_HEADER, (a.csv_row() for a in report.assertions))


def write_g_curve(path: Path, estimates: List[GEstimate]) -> Path:
    rows = [
        [e.t, _fmt(e.sigma), _fmt(e.g_value), _fmt(e.g_tilde), _fmt(e.std_error),
         _fmt(e.per_dim), _fmt(e.per_dim_std_error), e.n_samples]
        for e in estimates
    ]
    header = ["t", "sigma", "g", "g_tilde", "stderr", "g_per_dim", "g_per_dim_stderr", "n"]
    return atomic_write_csv(path, header, rows)


def write_vector(path: Path, values: np.ndarray) -> Path:
    values = np.asarray(values, dtype=np.float64).ravel()
    text = "\n".join(repr(float(v)) for v in values) + "\n"
    return atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# source resolution
# ---------------------------------------------------------------------------

def _named_source(name: str, dims: Optional[int]) -> AnalyticSource:
    """normal, laplace, powerlaw, gmm or gmm:<separation>,<variance>"""
    kind, _, params = name.partition(":")
    if kind == "normal":
        return standard_normal(dims or 1)
    if kind == "laplace":
        return smoothed_laplace(dims or 1)
    if kind == "powerlaw":
        return gaussian_from_spectrum(power_law_spectrum(dims or POWERLAW_DIMS))
    if kind == "gmm":
        if not params:
            return two_mode_gmm()
        try:
            separation, variance = (float(v) for v in params.split(","))
        except ValueError as e:
            raise FormatError(f"expected gmm:<separation>,<variance>, got '{name}'") from e
        return two_mode_gmm(separation, variance)
    if name.endswith(".json"):
        return build_source(read_source_spec(Path(name)))
    raise FormatError(
        f"unknown source '{name}' (expected normal, laplace, powerlaw, gmm[:sep,var] or a .json file)"
    )


def load_source(config: RunConfig, default: str = "normal") -> AnalyticSource:
    """The analytic source named by exactly one of --source, --spectrum, --samples-file"""
    if config.spectrum is not None:
        return gaussian_from_spectrum(read_spectrum(config.spectrum))
    if config.samples_file is not None:
        fit = fit_spectrum(read_matrix(config.samples_file))
        return gaussian_from_spectrum(fit.spectrum, np.asarray(fit.rotation))
    return _named_source(config.source or default, config.dims)


def load_spectrum(config: RunConfig) -> Spectrum:
    """Eigenvalues for the Gaussian curves; defaults to the power-law spectrum"""
    if config.spectrum is not None:
        return read_spectrum(config.spectrum)
    if config.samples_file is not None:
        return fit_spectrum(read_matrix(config.samples_file)).spectrum
    source = _named_source(config.source or "powerlaw", config.dims)
    if not isinstance(source, GaussianSource):
        logger.info(f"Using the second moments of the {source.spec.kind.value} source as a Gaussian spectrum")
    return source.spectrum()
