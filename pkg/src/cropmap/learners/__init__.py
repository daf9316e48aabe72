"""Probabilistic multiclass classifier heads: LR, MLP, RF, GBT."""

from .base import (
    LEARNERS,
    TrainConfig,
    TrainedModel,
    class_weights_from_counts,
    class_weights_inverse_frequency,
    derive_seed,
    deserialize_model,
    predict_proba,
    serialize_model,
    train,
)
from .focal import focal_loss, focal_loss_logits, softmax

__all__ = [
    "LEARNERS",
    "TrainConfig",
    "TrainedModel",
    "class_weights_from_counts",
    "class_weights_inverse_frequency",
    "derive_seed",
    "deserialize_model",
    "focal_loss",
    "focal_loss_logits",
    "predict_proba",
    "serialize_model",
    "softmax",
    "train",
]
