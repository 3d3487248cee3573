"""Hierarchical refinement quantization and a dual-branch generative model built on it."""

from .exceptions import (
    ConfigError,
    DataError,
    FormatError,
    HRQError,
    InputError,
    NumericFault,
    ShapeError,
    UsageError,
)
from .quantizer import (
    Codebook,
    DepthMask,
    GumbelSchedule,
    HierarchicalQuantizer,
    HrqPath,
    QuantizationTrace,
    ScheduleMode,
    compose,
    compose_with_dropout,
    init_codebook,
    level_scores,
    quantize_hard,
    quantize_soft,
    sample_depth_mask,
    tau_at,
)

__version__ = "0.1.0"
