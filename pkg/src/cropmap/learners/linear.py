"""Multinomial logistic regression trained on the focal objective with L-BFGS."""

from __future__ import annotations

import logging

import numpy as np
from scipy.optimize import minimize

from .base import TrainConfig, TrainedModel, sample_alphas
from .focal import focal_loss_logits, softmax

LOGGER = logging.getLogger(__name__)


def objective(theta: np.ndarray, x: np.ndarray, yi: np.ndarray, k: int, gamma: float,
              alpha: np.ndarray, w: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
    """Mean focal loss plus ``l2/2 * ||W||^2`` (bias unpenalized) and its gradient."""
    n, d = x.shape
    W = theta[: d * k].reshape(d, k)
    b = theta[d * k :]
    loss, dz = focal_loss_logits(x @ W + b, yi, gamma, alpha, w)
    gW = x.T @ dz / n + l2 * W
    gb = dz.sum(axis=0) / n
    value = loss.mean() + 0.5 * l2 * float((W * W).sum())
    return value, np.concatenate([gW.ravel(), gb])


def fit(x, y, classes, w, cfg: TrainConfig) -> TrainedModel:
    p = cfg.params
    k = len(classes)
    d = x.shape[1]
    yi = np.searchsorted(classes, y)
    alpha = sample_alphas(y, cfg)
    res = minimize(
        objective, np.zeros(d * k + k), args=(x, yi, k, cfg.focal_gamma, alpha, w, p["l2"]),
        jac=True, method="L-BFGS-B",
        options={"maxiter": p["max_iter"], "gtol": p["tol"], "ftol": p["tol"] * 1e-4},
    )
    if not res.success:
        LOGGER.info("LR optimizer stopped: %s", res.message)
    params = {"W": res.x[: d * k].reshape(d, k).copy(), "b": res.x[d * k :].copy()}
    return TrainedModel("LR", tuple(classes), d, cfg.seed, params,
                        metadata={"iterations": int(res.nit), "objective": float(res.fun)})


def predict_proba(model: TrainedModel, x: np.ndarray) -> np.ndarray:
    return softmax(x @ model.params["W"] + model.params["b"])
