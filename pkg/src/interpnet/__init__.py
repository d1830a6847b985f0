"""Feed-forward classifiers that explain their predictions.

A ReLU classifier's internal activations condition a two-layer LSTM that
writes an English explanation for each prediction. Everything runs on numpy
with a small reverse-mode autodiff tape (``interpnet.autodiff``).
"""
from interpnet.checkpoint import load_checkpoint, save_checkpoint
from interpnet.classifier import RepresentationVariant
from interpnet.dataset import SyntheticSpec, generate_synthetic, load_dataset, split
from interpnet.metrics import MetricReport, bleu, cider, evaluate, meteor_lite
from interpnet.model import InterpNet
from interpnet.training import ModelConfig, TrainConfig, train_full

__version__ = "0.1.0"

__all__ = [
    "InterpNet", "MetricReport", "ModelConfig", "RepresentationVariant", "SyntheticSpec", "TrainConfig",
    "bleu", "cider", "evaluate", "generate_synthetic", "load_checkpoint", "load_dataset", "meteor_lite",
    "save_checkpoint", "split", "train_full",
]
