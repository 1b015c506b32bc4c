from .data import (
    AttributeProfile,
    ContentSpec,
    Dataset,
    frequency_table,
    generate_dataset,
    generate_sentences,
    midpoint_profile,
    profile_separation,
    synth_frames,
)
from .estimator import ToySynthesizer
from .model import ToyModelConfig, TrainingRun, forward, forward_batch, init_model, mse, train

__all__ = [
    "AttributeProfile",
    "ContentSpec",
    "Dataset",
    "ToyModelConfig",
    "ToySynthesizer",
    "TrainingRun",
    "forward",
    "forward_batch",
    "frequency_table",
    "generate_dataset",
    "generate_sentences",
    "init_model",
    "midpoint_profile",
    "mse",
    "profile_separation",
    "synth_frames",
    "train",
]
