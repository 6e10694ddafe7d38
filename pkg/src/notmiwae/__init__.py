"""Deep latent variable models trained jointly with an explicit missing-data mechanism."""

from .config import ExperimentConfig, preset
from .imputation import impute, multiple_impute
from .missingness import MaskedDataset, simulate
from .model import DecoderConfig, EncoderConfig, MissingModelSpec, Model, init_model
from .objective import TrainConfig, log_weights, train

__all__ = [
    "DecoderConfig",
    "EncoderConfig",
    "ExperimentConfig",
    "MaskedDataset",
    "MissingModelSpec",
    "Model",
    "TrainConfig",
    "impute",
    "init_model",
    "log_weights",
    "multiple_impute",
    "preset",
    "simulate",
    "train",
]
