"""Bessel functions of the first kind for integer order.

All orders ``0..n_max`` at a set of arguments come out of one Miller
downward recurrence, normalised with ``J_0 + 2 * sum(J_2k) = 1``.  The
recurrence is started far enough above ``max(n_max, x)`` that the neglected
tail is below double precision, and values are rescaled on the way down so
that small arguments with large starting orders never overflow.
"""

from __future__ import annotations

import numpy as np

from .errors import InvariantError

MAX_ORDER = 1000
MAX_ARG = 10_000.0

_RESCALE_AT = 1e200
_RESCALE_BY = 1e-200
_LOG_RESCALE = np.log(_RESCALE_BY)


def _check_domain(order, x):
    order = np.asarray(order)
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(order) > MAX_ORDER):
        raise InvariantError(f"order must lie in [-{MAX_ORDER}, {MAX_ORDER}]")
    if np.any(order != np.round(order)):
        raise InvariantError("order must be an integer")
    if not np.all(np.isfinite(x)) or np.any(x < 0) or np.any(x > MAX_ARG):
        raise InvariantError(f"argument must lie in [0, {MAX_ARG:g}]")
    return order.astype(int), x


def _start_order(n_max: int, x_max: float) -> int:
    top = max(n_max, x_max)
    start = int(top + 12.0 * np.cbrt(top) + 40)
    return start + (start % 2)


def bessel_j_table(n_max: int, x) -> np.ndarray:
    """Return ``J_n(x)`` for ``n = 0..n_max`` with shape ``(n_max + 1, *x.shape)``."""
    _check_domain(n_max, x)
    x = np.asarray(x, dtype=float)
    shape = x.shape
    xs = x.ravel()
    out = np.zeros((n_max + 1, xs.size))
    zero = xs == 0.0
    out[0, zero] = 1.0
    live = ~zero
    if not np.any(live):
        return out.reshape((n_max + 1,) + shape)

    xl = xs[live]
    n_start = _start_order(n_max, float(xl.max()))
    two_over_x = 2.0 / xl

    j_next = np.zeros_like(xl)          # J_{n+1}
    j_cur = np.full_like(xl, 1e-300)    # J_n, arbitrary seed
    norm = np.zeros_like(xl)
    log_scale = np.zeros_like(xl)       # accumulated log of rescaling factors
    stored = np.zeros((n_max + 1, xl.size))
    stored_scale = np.zeros((n_max + 1, xl.size))

    for n in range(n_start, 0, -1):
        j_prev = n * two_over_x * j_cur - j_next     # J_{n-1}
        j_next, j_cur = j_cur, j_prev
        k = n - 1
        if k > 0 and k % 2 == 0:
            norm += 2.0 * j_cur
        if k <= n_max:
            stored[k] = j_cur
            stored_scale[k] = log_scale
        big = np.abs(j_cur) > _RESCALE_AT
        if np.any(big):
            j_cur[big] *= _RESCALE_BY
            j_next[big] *= _RESCALE_BY
            norm[big] *= _RESCALE_BY
            log_scale[big] += _LOG_RESCALE
            if k <= n_max:
                stored[k, big] = j_cur[big]
                stored_scale[k, big] = log_scale[big]
    norm += j_cur  # J_0 term

    # stored[k] was recorded when the running scale was stored_scale[k];
    # bring every order to the final scale before normalising.
    factor = np.exp(log_scale[None, :] - stored_scale)
    res = stored / norm[None, :] * factor
    out[:, live] = res
    return out.reshape((n_max + 1,) + shape)


def _reflection_sign(order):
    # J_{-n} = (-1)^n J_n, and likewise for the derivative
    return np.where((order < 0) & (order % 2 == 1), -1.0, 1.0)


def bessel_j(order, x):
    """``J_order(x)`` for integer ``|order| <= 1000`` and ``0 <= x <= 1e4``."""
    order, x = _check_domain(order, x)
    order_b, x_b = np.broadcast_arrays(order, x)
    result = np.empty(x_b.shape)
    for n in np.unique(np.abs(order_b)):
        sel = np.abs(order_b) == n
        result[sel] = bessel_j_table(int(n), x_b[sel])[n]
    result = result * _reflection_sign(order_b)
    if result.ndim == 0:
        return float(result)
    return result


def bessel_j_prime(order, x):
    """Derivative of ``J_order`` with respect to its argument."""
    order, x = _check_domain(order, x)
    order_b, x_b = np.broadcast_arrays(order, x)
    result = np.empty(x_b.shape)
    for n in np.unique(np.abs(order_b)):
        sel = np.abs(order_b) == n
        table = bessel_j_table(int(n) + 1, x_b[sel])
        if n == 0:
            result[sel] = -table[1]
        else:
            result[sel] = 0.5 * (table[n - 1] - table[n + 1])
    result = result * _reflection_sign(order_b)
    if result.ndim == 0:
        return float(result)
    return result
