"""Sleep-stage classification from 8-channel deep-brain local field potentials."""

from .dataset_io import (
    Hypnogram,
    Recording,
    RecordingHeader,
    Segment,
    SplitSpec,
    load_hypnogram,
    load_recording,
    merge_stages,
    save_recording,
    segment_recording,
    split_chronological,
    split_random,
)
from .dsp import design_highpass, filter_channel, reinterpret_rate
from .evaluation import confusion_matrix, epoch_vote, metrics
from .features import BackendConfig, FeatureTensor, LayerCombiner, combine_layers, extract_features
from .loss import FocalLossConfig, class_weights, focal_loss
from .model import ModelDims, ModelParams, forward, init_params
from .pipeline import preprocess
from .synth import SynthConfig, generate
from .training import TrainConfig, fit, grad_check

__all__ = [
    "BackendConfig",
    "FeatureTensor",
    "FocalLossConfig",
    "Hypnogram",
    "LayerCombiner",
    "ModelDims",
    "ModelParams",
    "Recording",
    "RecordingHeader",
    "Segment",
    "SplitSpec",
    "SynthConfig",
    "TrainConfig",
    "class_weights",
    "combine_layers",
    "confusion_matrix",
    "design_highpass",
    "epoch_vote",
    "extract_features",
    "filter_channel",
    "fit",
    "focal_loss",
    "forward",
    "generate",
    "grad_check",
    "init_params",
    "load_hypnogram",
    "load_recording",
    "merge_stages",
    "metrics",
    "preprocess",
    "reinterpret_rate",
    "save_recording",
    "segment_recording",
    "split_chronological",
    "split_random",
]

__version__ = "0.1.0"
