"""Sub-sample peak interpolation shared by the delay and spectrum searches."""

from __future__ import annotations

import numpy as np

# neighbours this far below the peak are treated as exact zeros: the peak
# sits on a sample and their logarithms would only carry roundoff
_ON_SAMPLE_RATIO = 1e-10


def quadratic_peak_offset(left: float, center: float, right: float) -> float:
    """Vertex offset (in samples, within [-0.5, 0.5]) of a parabola through three points."""
    denom = left - 2.0 * center + right
    if denom >= 0 or not np.isfinite(denom):
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))


def log_peak_offset(left: float, center: float, right: float) -> float:
    """Parabolic vertex offset fitted to the logarithms of three positive magnitudes."""
    if not center > 0 or max(left, right) <= _ON_SAMPLE_RATIO * center:
        return 0.0
    if min(left, right) <= 0:
        return 0.0
    return quadratic_peak_offset(np.log(left), np.log(center), np.log(right))
