"""Foreground segmentation by inverting a background-only DCGAN.

A generator trained on background frames can reproduce a scene's background
but not objects that never appeared in training. Searching the latent code
that best explains a test frame therefore yields a background estimate, and
the thresholded residual marks the foreground.
"""

from .errors import (ContractError, DimensionError, FormatError, ForeganError,
                     NumericError, TapeError)
from .gan import GanModel, TrainConfig, generate, init_model, train
from .inversion import InversionConfig, InversionResult, invert, invert_many
from .metrics import ConfusionCounts, MetricReport, aggregate, compute_metrics, confusion
from .segmentation import SegConfig, segment_frame, segment_many
from .dataio import Sequence, SynthConfig, load_model, load_sequence, save_model, synth_generate

__all__ = [
    "ContractError", "DimensionError", "FormatError", "ForeganError", "NumericError", "TapeError",
    "GanModel", "TrainConfig", "generate", "init_model", "train",
    "InversionConfig", "InversionResult", "invert", "invert_many",
    "ConfusionCounts", "MetricReport", "aggregate", "compute_metrics", "confusion",
    "SegConfig", "segment_frame", "segment_many",
    "Sequence", "SynthConfig", "load_model", "load_sequence", "save_model", "synth_generate",
]
__version__ = "0.1.0"
