"""
DiffC lab - command-line entry point

    python -m diffc_lab.main rd-curve --spectrum eig.txt --out results/
    python -m diffc_lab.main encode --source normal --input x.txt --t-stop 10 --out x.difc
    python -m diffc_lab.main decode --source normal --bitstream x.difc --out x_hat.txt
    python -m diffc_lab.main verify --theorem 2 --sigma 0.02
    python -m diffc_lab.main g-curve --source laplace --out results/

Options resolve as flags > --config file > settings (.env / environment).
Exit codes: 0 success, 1 a verified assertion failed, 2 bad input or format.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import dotenv_values
from pydantic import ValidationError

from diffc_lab import __version__
from diffc_lab.commands.codec import cmd_decode, cmd_encode
from diffc_lab.commands.rd_curve import cmd_rd_curve
from diffc_lab.commands.verify import cmd_g_curve, cmd_verify
from diffc_lab.config import settings
from diffc_lab.lab.errors import DiffCError
from diffc_lab.models.cli import RunConfig

logger = logging.getLogger("diffc_cli")

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_INPUT = 2

DEFAULT_OUT = {
    "rd-curve": "results",
    "verify": "results",
    "g-curve": "results",
    "encode": "encoded.difc",
    "decode": "decoded.txt",
}

# config-file keys; the Settings names are accepted for the knobs they share
CONFIG_KEYS = {
    "DIFFC_SOURCE": "source",
    "DIFFC_SPECTRUM": "spectrum",
    "DIFFC_SAMPLES_FILE": "samples_file",
    "DIFFC_DIMS": "dims",
    "DIFFC_SCHEDULE": "schedule",
    "DIFFC_SCHEDULE_PRESET": "schedule",
    "DIFFC_STEPS": "steps",
    "DIFFC_SIGMA_GRID": "sigma_grid",
    "DIFFC_THETA_GRID": "theta_grid",
    "DIFFC_SIGMA": "sigma",
    "DIFFC_CHUNK_BITS": "chunk_bits",
    "DIFFC_T_STOP": "t_stop",
    "DIFFC_RECONSTRUCTION": "reconstruction",
    "DIFFC_SNR_RATE_BPD": "snr_rate_bpd",
    "DIFFC_SEED": "seed",
    "DIFFC_ROOT_SEED": "seed",
    "DIFFC_OUT": "out",
    "DIFFC_INPUT": "input",
    "DIFFC_BITSTREAM": "bitstream",
    "DIFFC_THEOREM": "theorem",
    "DIFFC_SAMPLES": "samples",
}
LIST_FIELDS = ("sigma_grid", "theta_grid", "theorem")


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from e


def _id_list(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="dotenv file with DIFFC_* option values")
    common.add_argument("--source", help="normal | laplace | powerlaw | gmm[:sep,var] | source .json")
    common.add_argument("--spectrum", type=Path, help="file of eigenvalues")
    common.add_argument("--samples-file", dest="samples_file", type=Path,
                        help="sample matrix, one row per draw")
    common.add_argument("--dims", type=int)
    common.add_argument("--schedule", choices=["cosine", "linear"])
    common.add_argument("--steps", type=int)
    common.add_argument("--sigma-grid", dest="sigma_grid", type=_float_list)
    common.add_argument("--theta-grid", dest="theta_grid", type=_float_list)
    common.add_argument("--sigma", type=float)
    common.add_argument("--chunk-bits", dest="chunk_bits", type=float)
    common.add_argument("--t-stop", dest="t_stop", type=int)
    common.add_argument("--reconstruction", choices=["ancestral", "flow"])
    common.add_argument("--snr-rate", dest="snr_rate_bpd", type=float, help="bits per dimension")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path)
    common.add_argument("--input", type=Path)
    common.add_argument("--bitstream", type=Path)
    common.add_argument("--theorem", type=_id_list, action="extend",
                        help="check ids: 1, 2, 3, lemma1, g, errors, realism")
    common.add_argument("--samples", type=int)

    parser = argparse.ArgumentParser(prog="diffc_lab", description="DiffC rate-distortion lab")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    sub.add_parser("rd-curve", parents=[common], help="analytic Gaussian RD curves")
    sub.add_parser("encode", parents=[common], help="encode a vector to a bitstream")
    sub.add_parser("decode", parents=[common], help="decode a bitstream")
    sub.add_parser("verify", parents=[common], help="Monte Carlo theorem checks")
    sub.add_parser("g-curve", parents=[common], help="G_t / M along the schedule")
    return parser


def _settings_defaults() -> Dict[str, Any]:
    return {
        "schedule": settings.DIFFC_SCHEDULE_PRESET,
        "steps": settings.DIFFC_STEPS,
        "chunk_bits": settings.DIFFC_CHUNK_BITS,
        "snr_rate_bpd": settings.DIFFC_SNR_RATE_BPD,
        "seed": settings.DIFFC_ROOT_SEED,
    }


def _config_file_values(path: Optional[Path]) -> Dict[str, Any]:
    if path is None:
        return {}
    if not path.is_file():
        raise ValueError(f"config file {path} not found")
    values: Dict[str, Any] = {}
    for key, raw in dotenv_values(path).items():
        if key not in CONFIG_KEYS:
            logger.warning(f"Ignoring unknown config key {key} in {path}")
            continue
        if raw is None or raw == "":
            continue
        field = CONFIG_KEYS[key]
        values[field] = [v.strip() for v in raw.split(",") if v.strip()] if field in LIST_FIELDS else raw
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge flags over the config file over settings"""
    values = _settings_defaults()
    values.update(_config_file_values(args.config))
    flags = {k: v for k, v in vars(args).items() if k != "config" and v is not None}
    values.update(flags)
    values.setdefault("out", DEFAULT_OUT[args.subcommand])
    return RunConfig(**values)


def run(config: RunConfig) -> int:
    if config.subcommand == "rd-curve":
        cmd_rd_curve(config)
    elif config.subcommand == "encode":
        cmd_encode(config)
    elif config.subcommand == "decode":
        cmd_decode(config)
    elif config.subcommand == "g-curve":
        cmd_g_curve(config)
    else:
        _, passed = cmd_verify(config)
        if not passed:
            logger.error("Verification failed")
            return EXIT_ASSERTION
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    level = getattr(logging, settings.DIFFC_LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(
        level=logging.DEBUG if settings.DIFFC_DEBUG else level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        return run(config)
    except ValidationError as e:
        logger.error(f"Invalid options: {e}")
        return EXIT_INPUT
    except (DiffCError, ValueError, OSError) as e:
        logger.error(f"Error in {args.subcommand}: {e}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
