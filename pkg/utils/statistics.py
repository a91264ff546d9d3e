"""
Shared numeric rules.
"""
from typing import Sequence

import numpy as np


def linear_percentile(values: Sequence[float], percentile) -> np.ndarray:
    """
    Empirical percentile with linear interpolation between closest ranks.

    For sorted values x[0..n-1] and percentile p, h = (n - 1) * p / 100 and the
    result is x[floor(h)] + (h - floor(h)) * (x[floor(h) + 1] - x[floor(h)]).
    Quintile bounds and decision thresholds both use this rule.
    """
    array = np.asarray(values, dtype=np.float64)
    if array.size == 0:
        raise ValueError("percentile of an empty set")
    return np.percentile(array, percentile, method="linear")


def sigmoid(z):
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    positive = z >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-z[positive]))
    exp_z = np.exp(z[~positive])
    out[~positive] = exp_z / (1.0 + exp_z)
    return out
