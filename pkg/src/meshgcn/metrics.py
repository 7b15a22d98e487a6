"""Evaluation metrics in mm-equivalent units."""
from __future__ import annotations

import numpy as np


def parse_thresholds(text: str) -> np.ndarray:
    """``"lo:hi:step"`` -> inclusive grid, or a comma list of values."""
    if ":" in text:
        lo, hi, step = (float(x) for x in text.split(":"))
        if step <= 0 or hi < lo:
            raise ValueError(f"bad threshold range {text!r}")
        n = int(round((hi - lo) / step))
        return lo + step * np.arange(n + 1)
    return np.array(sorted(float(x) for x in text.split(",")))


def point_errors(pred, gt) -> np.ndarray:
    """Euclidean distance per point; shapes ``(..., P, 3)``."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return np.linalg.norm(pred - gt, axis=-1)


def mean_error(pred, gt) -> float:
    """Mean over samples of the mean per-point distance."""
    e = point_errors(pred, gt)
    return float(e.reshape(-1, e.shape[-1]).mean(axis=1).mean())


def pck(errors, thresholds) -> np.ndarray:
    """Fraction of points whose error is at most each threshold."""
    e = np.asarray(errors, dtype=np.float64).ravel()
    if e.size == 0:
        raise ValueError("pck of an empty error set")
    t = np.asarray(thresholds, dtype=np.float64)
    return (e[None, :] <= t[:, None]).mean(axis=1)


def auc(thresholds, pck_values) -> float:
    """Trapezoid area under the PCK curve divided by the threshold span."""
    t = np.asarray(thresholds, dtype=np.float64)
    p = np.asarray(pck_values, dtype=np.float64)
    if len(t) == 1:
        return float(p[0])
    area = float(np.sum((t[1:] - t[:-1]) * (p[1:] + p[:-1]) / 2.0))
    return area / float(t[-1] - t[0])


def edge_length_deviation(vertices, template_rest, edges) -> float:
    """Mean absolute difference between edge lengths and the template's."""
    v = np.asarray(vertices, dtype=np.float64)
    ref = np.linalg.norm(template_rest[edges[:, 1]] - template_rest[edges[:, 0]], axis=-1)
    cur = np.linalg.norm(v[..., edges[:, 1], :] - v[..., edges[:, 0], :], axis=-1)
    return float(np.abs(cur - ref).mean())
