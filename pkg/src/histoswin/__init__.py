"""Hybrid residual-CNN / shifted-window-attention image classifier on a small numpy autodiff core.

Also provides contour feature profiling and occlusion, LIME and Kernel SHAP
explanations.
"""
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    BudgetError,
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    HistoSwinError,
    ImageReadError,
    NumericError,
    ShapeError,
)
from .model import HybridModelConfig, Prediction, classify_batch, forward, forward_batch, model_init, predict_proba
from .train import TrainConfig, TrainRecord, evaluate, multi_run, train_loop

__version__ = "0.1.0"
