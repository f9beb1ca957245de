"""
encode / decode: DiffC bitstreams on disk
"""
import logging
from pathlib import Path
from typing import List

from diffc_lab.commands.files import (
    atomic_write_bytes,
    load_source,
    read_bytes,
    read_vector,
    write_ledger,
    write_vector,
)
from diffc_lab.lab.codec import DiffCCodec, read_bitstream, stream_key_from_seed, write_bitstream
from diffc_lab.lab.diffusion import make_schedule, reconstruct_ancestral_at, reconstruct_flow_at, schedule_from_id
from diffc_lab.lab.errors import DomainError
from diffc_lab.lab.harness import report_rng
from diffc_lab.models.cli import RunConfig

logger = logging.getLogger("diffc_cli")


def ledger_path(bitstream_path: Path) -> Path:
    return bitstream_path.with_name(bitstream_path.name + ".ledger.csv")


def cmd_encode(config: RunConfig) -> List[Path]:
    """
    Encode the vector in ``--input`` and write the bitstream and its rate ledger

    :param config: ``out`` is the bitstream path; the ledger goes next to it
    :return: paths written
    """
    source = load_source(config)
    schedule = make_schedule(config.schedule, config.steps)
    x = read_vector(config.input)
    if x.size != source.dims:
        raise DomainError(f"input has {x.size} values, the source has {source.dims} dimensions")
    t_stop = config.t_stop or 1

    codec = DiffCCodec(source, schedule)
    result = codec.encode(x, t_stop, stream_key_from_seed(config.seed), config.chunk_bits)
    written = [
        atomic_write_bytes(config.out, write_bitstream(result.bitstream)),
        write_ledger(ledger_path(config.out), result.ledger),
    ]
    logger.info(
        f"Encoded {config.input} to {config.out}: {result.ledger.realized_bits} bits "
        f"(ledger KL {result.ledger.total_kl_bits:.2f} bits)"
    )
    return written


def cmd_decode(config: RunConfig) -> List[Path]:
    """
    Decode ``--bitstream`` and write the reconstruction chosen by ``--reconstruction``

    The schedule comes from the bitstream header. Ancestral reconstruction
    draws from the posterior with a generator derived from the seed.
    """
    source = load_source(config)
    bitstream = read_bitstream(read_bytes(config.bitstream))
    header = bitstream.header
    schedule = schedule_from_id(header.preset_id, header.steps)
    z = DiffCCodec(source, schedule).decode_to_z(bitstream)

    if config.reconstruction == "flow":
        x_hat = reconstruct_flow_at(z, source, schedule, header.t_stop)
    else:
        x_hat = reconstruct_ancestral_at(z, source, schedule, header.t_stop, report_rng("decode", config.seed))
    written = [write_vector(config.out, x_hat)]
    logger.info(f"Decoded {config.bitstream} ({config.reconstruction} reconstruction at t={header.t_stop})")
    return written
