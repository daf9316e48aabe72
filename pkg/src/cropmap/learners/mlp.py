"""Two-hidden-layer ReLU perceptron trained with Adam on the focal objective.

Early stopping watches validation macro-F1 and restores the best epoch.
"""

from __future__ import annotations

import numpy as np

from .base import TrainConfig, TrainedModel, derive_seed, sample_alphas
from .focal import focal_loss_logits, softmax


def forward(params: dict, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Logits and the post-activation of every hidden layer."""
    acts = []
    h = x
    n_layers = len([k for k in params if k.startswith("W")])
    for i in range(n_layers - 1):
        h = np.maximum(h @ params[f"W{i}"] + params[f"b{i}"], 0.0)
        acts.append(h)
    last = n_layers - 1
    return h @ params[f"W{last}"] + params[f"b{last}"], acts


def _init(sizes, rng) -> dict:
    params = {}
    for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
        params[f"W{i}"] = rng.normal(0.0, np.sqrt(2.0 / a), size=(a, b))
        params[f"b{i}"] = np.zeros(b)
    return params


def _backward(params, x, acts, dz) -> dict:
    grads = {}
    n_layers = len(acts) + 1
    delta = dz
    for i in range(n_layers - 1, -1, -1):
        inp = x if i == 0 else acts[i - 1]
        grads[f"W{i}"] = inp.T @ delta
        grads[f"b{i}"] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params[f"W{i}"].T) * (acts[i - 1] > 0)
    return grads


def _macro_f1(pred, truth) -> float:
    scores = []
    for c in np.unique(truth):
        tp = np.sum((pred == c) & (truth == c))
        fp = np.sum((pred == c) & (truth != c))
        fn = np.sum((pred != c) & (truth == c))
        scores.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return float(np.mean(scores))


def fit(x, y, classes, w, cfg: TrainConfig, val=None) -> TrainedModel:
    p = cfg.params
    classes = np.asarray(classes)
    rng = np.random.default_rng(derive_seed(cfg.seed, 1))
    alpha = sample_alphas(y, cfg)
    yi = np.searchsorted(classes, y)
    if val is None:
        order = rng.permutation(len(x))
        n_val = int(round(len(x) * p["val_fraction"]))
        vi, ti = order[:n_val], order[n_val:]
        xv, yv = x[vi], y[vi]
        x, yi, w, alpha = x[ti], yi[ti], w[ti], alpha[ti]
    else:
        xv, yv = val
    sizes = [x.shape[1], *p["hidden"], len(classes)]
    params = _init(sizes, rng)
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(v) for k, v in params.items()}
    lr, b1, b2, eps = p["learning_rate"], 0.9, 0.999, 1e-8
    best, best_params, best_epoch, stale, step = -1.0, params, 0, 0, 0
    n = len(x)
    bs = p["batch_size"]
    epoch = 0
    for epoch in range(1, p["max_epochs"] + 1):
        order = rng.permutation(n)
        for s in range(0, n, bs):
            idx = order[s : s + bs]
            logits, acts = forward(params, x[idx])
            _, dz = focal_loss_logits(logits, yi[idx], cfg.focal_gamma, alpha[idx], w[idx])
            grads = _backward(params, x[idx], acts, dz / len(idx))
            step += 1
            for k in params:
                m[k] = b1 * m[k] + (1 - b1) * grads[k]
                v[k] = b2 * v[k] + (1 - b2) * grads[k] ** 2
                mhat = m[k] / (1 - b1**step)
                vhat = v[k] / (1 - b2**step)
                params[k] = params[k] - lr * mhat / (np.sqrt(vhat) + eps)
        if len(xv):
            score = _macro_f1(classes[np.argmax(forward(params, xv)[0], axis=1)], yv)
        else:
            score = 0.0
        if score > best:
            best, best_params, best_epoch, stale = score, {k: a.copy() for k, a in params.items()}, epoch, 0
        else:
            stale += 1
            if stale >= p["patience"]:
                break
    return TrainedModel("MLP", tuple(int(c) for c in classes), sizes[0], cfg.seed, best_params,
                        metadata={"best_epoch": best_epoch, "epochs_run": epoch, "val_macro_f1": best})


def predict_proba(model: TrainedModel, x: np.ndarray) -> np.ndarray:
    return softmax(forward(model.params, x)[0])
