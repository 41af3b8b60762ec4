"""Streaming LSTM disruption prediction for small-tokamak diagnostics."""

__version__ = "0.1.0"

from .evaluation import AlarmClass, classify_alarm, evaluate
from .labeling import find_disruption, label_shot, make_label
from .nn_core import ModelParams, forward_sequence, init_params, load_params, save_params
from .preprocess import DecimationMethod, NormStats, align_shot, apply_norm, decimate, fit_norm
from .signal_model import AlignedShot, ChannelId, ChannelSeries, RawShot, validate_raw_shot
from .stream_engine import replay_shot, stream_reset, stream_step
from .synth import SynthConfig, generate_corpus, generate_shot
from .training import TrainConfig, split_corpus, train

__all__ = [
    "AlarmClass", "AlignedShot", "ChannelId", "ChannelSeries", "DecimationMethod",
    "ModelParams", "NormStats", "RawShot", "SynthConfig", "TrainConfig",
    "align_shot", "apply_norm", "classify_alarm", "decimate", "evaluate", "find_disruption",
    "fit_norm", "forward_sequence", "generate_corpus", "generate_shot", "init_params",
    "label_shot", "load_params", "make_label", "replay_shot", "save_params", "split_corpus",
    "stream_reset", "stream_step", "train", "validate_raw_shot",
]
