"""Extendable neural matrix completion with two embedding branches and a cosine head."""
from .baselines import bias_baseline, mean_baseline, mf_train
from .data import (
    AREAS,
    AreaSplit,
    InputBuilder,
    SparseRatings,
    SplitSpec,
    col_input,
    load_ratings,
    load_split,
    make_split,
    row_input,
    save_split,
    scale,
    synthetic_low_rank,
    unscale,
)
from .evaluate import AreaMetrics, evaluate, mae, rmse
from .model import BranchConfig, NmcModel, build_model, load_model, ml1m_config, netflix_config, save_model
from .train import TrainConfig, TrainHistory, train

__all__ = [
    "AREAS", "AreaMetrics", "AreaSplit", "BranchConfig", "InputBuilder", "NmcModel",
    "SparseRatings", "SplitSpec", "TrainConfig", "TrainHistory", "bias_baseline", "build_model",
    "col_input", "evaluate", "load_model", "load_ratings", "load_split", "mae", "make_split",
    "mean_baseline", "mf_train", "ml1m_config", "netflix_config", "rmse", "row_input",
    "save_model", "save_split", "scale", "synthetic_low_rank", "train", "unscale",
]
__version__ = "0.1.0"
