"""Zero-shot guitar tone modelling: hypernetwork-conditioned gated convolutional
networks with a streaming real-time engine."""

from ._hypertone import (
    SAMPLE_RATE,
    ContractError,
    Error,
    FormatError,
    IntegrityError,
    IoError,
    Model,
    NumericError,
    Stream,
    VersionError,
    esr,
    gradcheck,
    log_mel_stats,
    pre_emphasis,
    read_wav,
    receptive_field,
    synthesize_performance,
    write_wav,
)

__all__ = [
    "SAMPLE_RATE",
    "ContractError",
    "Error",
    "FormatError",
    "IntegrityError",
    "IoError",
    "Model",
    "NumericError",
    "Stream",
    "VersionError",
    "esr",
    "gradcheck",
    "log_mel_stats",
    "pre_emphasis",
    "read_wav",
    "receptive_field",
    "synthesize_performance",
    "write_wav",
]
