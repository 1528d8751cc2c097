from .baselines import (
    LinearRegressionModel,
    PersistenceModel,
    linreg_fit,
    linreg_predict,
    persistence_forecast,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .neural import LSTM, MLP, NeuralModel, Transformer, build_model
from .spec import DEFAULT_LOOKBACK, Family, ModelSpec, default_persistence_lag

__all__ = [
    "DEFAULT_LOOKBACK",
    "Family",
    "LSTM",
    "LinearRegressionModel",
    "MLP",
    "ModelSpec",
    "NeuralModel",
    "PersistenceModel",
    "Transformer",
    "build_model",
    "default_persistence_lag",
    "linreg_fit",
    "linreg_predict",
    "load_checkpoint",
    "persistence_forecast",
    "save_checkpoint",
]
