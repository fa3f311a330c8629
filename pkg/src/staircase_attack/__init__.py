"""Staircase Sign Method attacks on small self-contained classifiers."""

from .attacks import AttackConfig, AttackTrace, Composers, run_attack
from .data import LabeledDataset, load_idx, synth_dataset
from .models import Ensemble, Model, convnet, mlp, train_sgd
from .staircase import StaircaseConfig, sign_method, staircase_sign, staircase_weights

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttackTrace", "Composers", "run_attack",
    "LabeledDataset", "load_idx", "synth_dataset",
    "Ensemble", "Model", "convnet", "mlp", "train_sgd",
    "StaircaseConfig", "sign_method", "staircase_sign", "staircase_weights",
]
