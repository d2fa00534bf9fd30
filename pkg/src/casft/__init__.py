"""Information-cascade popularity prediction: structural and temporal features,
a jump-ODE growth-rate model, and a conditional diffusion trend generator."""

from .config import ExperimentConfig, load_config
from .data import Cascade, RetweetEvent, label_sample, load_cascades, parse_cascades
from .model import CasFT
from .predictor import mape, msle
from .simulate import simulate_hawkes_cascades

__all__ = ["Cascade", "CasFT", "ExperimentConfig", "RetweetEvent", "label_sample", "load_cascades",
           "load_config", "mape", "msle", "parse_cascades", "simulate_hawkes_cascades"]
__version__ = "0.1.0"
