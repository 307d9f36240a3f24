"""Encoder-decoder pixel labelling with pooling-index unpooling, trained
stage-wise with L-BFGS."""

from .model import (
    NetworkConfig,
    SegNet,
    attach_head,
    backward,
    conv_weight_count,
    forward,
    init,
    load_checkpoint,
    predict,
    receptive_field,
    save_checkpoint,
    set_freeze,
)
from .training import TrainSchedule, evaluate, train_modular, train_variant

__version__ = "0.1.0"
