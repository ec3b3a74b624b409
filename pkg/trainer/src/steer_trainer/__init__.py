"""Steering regression training harness for exported DVS/APS datasets."""

from .dataset_io import SampleFile, open_samples
from .models import build_model, channels_for_mode, parameter_count
from .training import TrainConfig, TrainResult, parse_config, train
from .evaluation import evaluate, explained_variance, predict, rmse_deg

__version__ = "0.1.0"
