"""Diffusion models trained from noisy samples, checked against Gaussian-mixture oracles."""
from .errors import (AmbientError, BadMagic, ChecksumMismatch, ConfigError, DomainError,
                     FormatError, NumericalError, TrainingDiverged, TruncatedPayload,
                     VersionMismatch)
from .net import DenoiserNet
from .oracle import GaussianMixture, OracleDenoiser
from .sampler import SamplerConfig
from .schedule import NoiseSchedule, anchor_vp, ve_identity
from .trainer import Checkpoint, NoisyDataset, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "AmbientError", "BadMagic", "ChecksumMismatch", "ConfigError", "DomainError",
    "FormatError", "NumericalError", "TrainingDiverged", "TruncatedPayload", "VersionMismatch",
    "DenoiserNet", "GaussianMixture", "OracleDenoiser", "SamplerConfig", "NoiseSchedule",
    "anchor_vp", "ve_identity", "Checkpoint", "NoisyDataset", "TrainConfig",
]
