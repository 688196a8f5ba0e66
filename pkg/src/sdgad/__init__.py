"""Anomaly detection on continuous-time dynamic graph event streams.

Residual event representations are projected, kept inside a two-sphere shell,
and scored by a normalizing flow trained with a two-sided likelihood boundary.
"""

from .config import RunConfig, toy_config
from .events import EventStream, SplitSpec, chronological_split, load_stream
from .injection import InjectionPlan, apply_plan
from .pipeline import prepare_data, run_once
from .trainer import ModelConfig, SDGADModel, TrainingConfig

__version__ = "0.1.0"

__all__ = [
    "EventStream", "InjectionPlan", "ModelConfig", "RunConfig", "SDGADModel", "SplitSpec", "TrainingConfig",
    "apply_plan", "chronological_split", "load_stream", "prepare_data", "run_once", "toy_config",
]
