"""Two-step hidden-space interpolation for text classifiers, on a small numpy autodiff core."""

from .encoder import EncoderConfig, EncoderModel, init_model
from .mixer import MixConfig, doublemix_forward
from .objective import combined_loss
from .trainer import ABLATION_MODES, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ABLATION_MODES",
    "EncoderConfig",
    "EncoderModel",
    "MixConfig",
    "TrainConfig",
    "combined_loss",
    "doublemix_forward",
    "evaluate",
    "init_model",
    "train",
]
