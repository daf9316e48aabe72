"""Independent reference implementations used to cross-check the library."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats as sstats


def naive_quantile(values, p):
    """Type-7 quantile by explicit sorting and linear interpolation."""
    s = sorted(values)
    h = (len(s) - 1) * p
    lo = math.floor(h)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (h - lo) * (s[hi] - s[lo])


def naive_statistics(values):
    """Every STM statistic of a list of floats, or None where undefined."""
    v = [float(x) for x in values]
    n = len(v)
    if n == 0:
        return {}
    mean = math.fsum(v) / n
    m2 = math.fsum((x - mean) ** 2 for x in v) / n
    q25, q50, q75 = (naive_quantile(v, p) for p in (0.25, 0.5, 0.75))
    out = {
        "min": min(v), "max": max(v), "q25": q25, "q50": q50, "q75": q75,
        "mean": mean, "std": math.sqrt(m2), "range": max(v) - min(v), "iqr": q75 - q25,
        "skewness": None, "kurtosis": None,
    }
    if n >= 3 and max(v) > min(v):
        out["skewness"] = float(sstats.skew(v, bias=True))
        out["kurtosis"] = float(sstats.kurtosis(v, fisher=True, bias=True))
    return out


def naive_fill(values, ok, t):
    """Per-series linear interpolation with nearest-value edges (np.interp)."""
    values, ok, t = np.asarray(values, float), np.asarray(ok, bool), np.asarray(t, float)
    if not ok.any():
        return np.zeros_like(values)
    return np.where(ok, values, np.interp(t, t[ok], values[ok]))


def confusion_oracle(pred, truth, classes):
    """Accuracy, macro-F1 (classes present in truth) and weighted-F1 via explicit counting."""
    k = len(classes)
    cm = [[0] * k for _ in range(k)]
    pos = {c: i for i, c in enumerate(classes)}
    for p, t in zip(pred, truth):
        cm[pos[t]][pos[p]] += 1
    total = len(pred)
    correct = sum(cm[i][i] for i in range(k))
    f1s, supports = [], []
    for i in range(k):
        tp = cm[i][i]
        fp = sum(cm[j][i] for j in range(k)) - tp
        fn = sum(cm[i]) - tp
        denom = 2 * tp + fp + fn
        f1s.append(0.0 if denom == 0 else 2 * tp / denom)
        supports.append(sum(cm[i]))
    present = [i for i in range(k) if supports[i] > 0]
    macro = sum(f1s[i] for i in present) / len(present)
    weighted = sum(f1s[i] * supports[i] for i in range(k)) / total
    return correct / total, macro, weighted


def focal_reference(probs, t, gamma, alpha, weight):
    p = max(float(probs[t]), 1e-12)
    return weight * alpha * (1 - p) ** gamma * -math.log(p)
