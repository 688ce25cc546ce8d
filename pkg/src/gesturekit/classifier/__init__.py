"""Desk-scale gesture classifiers trained from scratch in numpy."""

from .models import (
    Classifier,
    ClassifierConfig,
    GesturePrediction,
    load_model,
    predict,
    save_model,
)
from .ops import NumericError, ShapeError
from .training import EpochRecord, history_csv, train

__all__ = [
    "Classifier", "ClassifierConfig", "EpochRecord", "GesturePrediction", "NumericError",
    "ShapeError", "history_csv", "load_model", "predict", "save_model", "train",
]
