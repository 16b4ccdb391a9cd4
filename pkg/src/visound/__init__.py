"""visound: video-conditioned sample-level waveform generation.

A desk-scale, fully verifiable pipeline: a 3-tier hierarchical recurrent
waveform generator with three visual-conditioning variants, trained by
teacher forcing with truncated backpropagation through time, evaluated by
conditional likelihood (loss tables and cross-modal retrieval), plus the
crowd-annotation curation logic that produces training corpora.
"""

__version__ = "0.1.0"

from . import audio, curation, data, evaluation, generator, numerics, training
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    FormatError,
    VisoundError,
)

__all__ = [
    "audio",
    "curation",
    "data",
    "evaluation",
    "generator",
    "numerics",
    "training",
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DataError",
    "DimensionError",
    "FormatError",
    "VisoundError",
]
