"""EEG-guided target speaker extraction on a small numpy autodiff core."""

from .model import ModelConfig, TargetSpeakerExtractor
from .training import Checkpoint, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = ["Checkpoint", "ModelConfig", "TargetSpeakerExtractor", "TrainConfig", "evaluate", "train"]
