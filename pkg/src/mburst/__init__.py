"""Burst-dependent plasticity for audio-visual mask reconstruction."""

from .burst import BurstConfig, BurstConv2dLayer, BurstDenseLayer
from .data import Dataset, IbmParams, SyntheticConfig, generate_dataset, ibm
from .loss_opt import Adam, AdamConfig, WeightedBceConfig
from .model import VARIANTS, ArchitectureConfig, ModelGraph
from .training import TrainConfig, train_variant

__all__ = [
    "Adam",
    "AdamConfig",
    "ArchitectureConfig",
    "BurstConfig",
    "BurstConv2dLayer",
    "BurstDenseLayer",
    "Dataset",
    "IbmParams",
    "ModelGraph",
    "SyntheticConfig",
    "TrainConfig",
    "VARIANTS",
    "WeightedBceConfig",
    "generate_dataset",
    "ibm",
    "train_variant",
]
