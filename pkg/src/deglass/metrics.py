"""Mask and image metrics. Inputs may be numpy arrays or tensors."""

from __future__ import annotations

import math

import numpy as np


def _np(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def iou(pred, true, threshold: float = 0.5) -> float:
    """Intersection over union after binarizing both sides at ``threshold``.

    Two empty masks count as a perfect match.
    """
    p = _np(pred) > threshold
    t = _np(true) > threshold
    if p.shape != t.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {t.shape}")
    union = np.logical_or(p, t).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, t).sum() / union)


def iou_per_sample(pred, true, threshold: float = 0.5) -> np.ndarray:
    p, t = _np(pred), _np(true)
    return np.array([iou(a, b, threshold) for a, b in zip(p, t)])


def l1(a, b) -> float:
    a, b = _np(a), _np(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


def psnr(a, b, peak: float = 1.0) -> float:
    a, b = _np(a), _np(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)
