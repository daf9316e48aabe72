"""Focal loss on softmax outputs, with its gradient with respect to the logits."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError

P_FLOOR = 1e-12
LOG_P_FLOOR = np.log(P_FLOOR)


def focal_loss(probs, true_class: int, gamma: float = 2.0, alpha: float = 1.0, class_weight: float = 1.0) -> float:
    """``w * alpha * (1 - p_t)**gamma * -ln(p_t)`` for a single probability vector."""
    probs = np.asarray(probs, dtype=np.float64)
    if abs(probs.sum() - 1.0) > 1e-6:
        raise ContractError(f"probabilities sum to {probs.sum()}, not 1")
    p_t = min(max(float(probs[true_class]), P_FLOOR), 1.0)
    return float(class_weight * alpha * (1.0 - p_t) ** gamma * -np.log(p_t))


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(np.asarray(z, dtype=np.float64)))


def focal_loss_logits(z: np.ndarray, y: np.ndarray, gamma: float, alpha, weight) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample focal loss and its gradient w.r.t. logits ``z`` of shape (n, K).

    ``y`` holds class column indices; ``alpha`` and ``weight`` broadcast per sample.
    With p = softmax(z) the gradient is ``g * (onehot - p)`` where
    ``g = w*alpha*(gamma*(1-p_t)**(gamma-1)*p_t*ln p_t - (1-p_t)**gamma)``.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    logp = log_softmax(z)
    p = np.exp(logp)
    rows = np.arange(n)
    logp_t = logp[rows, y]
    clamped = logp_t < LOG_P_FLOOR
    logp_t = np.maximum(logp_t, LOG_P_FLOOR)
    u = -np.expm1(logp_t)  # 1 - p_t without cancellation
    scale = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (n,)) * np.broadcast_to(
        np.asarray(weight, dtype=np.float64), (n,)
    )
    mod = u**gamma if gamma else np.ones(n)
    loss = scale * mod * -logp_t
    if gamma:
        safe_u = np.where(u > 0, u, 1.0)
        ratio = np.where(u > 0, logp_t / safe_u, -1.0)  # ln(p_t) / (1 - p_t) -> -1 as p_t -> 1
        term = gamma * mod * np.exp(logp_t) * ratio
    else:
        term = 0.0
    g = scale * (term - mod)
    g = np.where(clamped, 0.0, g)
    onehot = np.zeros_like(p)
    onehot[rows, y] = 1.0
    return loss, g[:, None] * (onehot - p)
