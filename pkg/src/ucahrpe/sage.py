"""Element-wise delay/amplitude estimation by successive cancellation.

Each element's frequency response is modelled as a sum of
``alpha * exp(-j 2 pi f tau)`` terms.  Terms are pulled out one at a time
from the residual by a single-path maximum-likelihood fit, then every term
is re-fitted against the signal with all other terms removed (SAGE-style
coordinate updates).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import least_squares

from .channel import ArrayGeometry, ArrayOutput, FrequencyGrid
from .errors import InvariantError
from .peaks import log_peak_offset, quadratic_peak_offset  # noqa: F401  (re-exported)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ElementPathEstimate:
    delay: float
    amplitude: complex
    degenerate: bool = False

    @property
    def power(self) -> float:
        return abs(self.amplitude) ** 2


@dataclass
class SageConfig:
    max_paths: int = 20
    dynamic_range_db: float = 30.0
    refinement_cycles: int = 3
    delay_oversample: int = 8
    # optional noise-based gate: stop when |alpha|^2 < noise_variance / K * 10^(margin/10)
    noise_variance: Optional[float] = None
    noise_margin_db: float = 10.0
    # refinement stops early once no delay moves by more than this fraction of 1/B
    delay_tol: float = 1e-6
    # final joint least-squares fit of all delays (amplitudes projected out)
    joint_polish: bool = True

    def __post_init__(self):
        if self.max_paths < 1:
            raise InvariantError("max_paths must be >= 1")
        if not self.dynamic_range_db > 0:
            raise InvariantError("dynamic_range_db must be positive")
        if self.refinement_cycles < 0:
            raise InvariantError("refinement_cycles must be >= 0")
        if self.delay_oversample < 1:
            raise InvariantError("delay_oversample must be >= 1")


@dataclass
class ElementEstimateSet:
    per_element: list[list[ElementPathEstimate]]
    geometry: ArrayGeometry
    grid: FrequencyGrid
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.per_element) != self.geometry.num_elements:
            raise InvariantError("estimate set must hold one list per element")

    def total_count(self) -> int:
        return sum(len(lst) for lst in self.per_element)

    def reconstruct(self) -> np.ndarray:
        """P x K array output rebuilt from all estimates."""
        out = np.zeros((self.geometry.num_elements, self.grid.num_points), dtype=complex)
        for p, lst in enumerate(self.per_element):
            if lst:
                out[p] = reconstruct_element(lst, self.grid)
        return out


def _steering(grid: FrequencyGrid, delay: float) -> np.ndarray:
    return np.exp(-2j * np.pi * grid.frequencies * delay)


def _amplitude_at(y: np.ndarray, grid: FrequencyGrid, delay: float) -> complex:
    return complex(np.vdot(_steering(grid, delay), y) / y.size)


def delay_ml_single(y, grid: FrequencyGrid, cfg: SageConfig | None = None) -> ElementPathEstimate:
    """Best single-path fit: peak of the oversampled delay transform, log-parabola refined."""
    cfg = cfg or SageConfig()
    y = np.asarray(y, dtype=complex)
    k = y.size
    if k < 2:
        raise InvariantError("need at least two frequency points")
    if not np.any(y):
        return ElementPathEstimate(0.0, 0j, degenerate=True)
    n = k * cfg.delay_oversample
    mag = np.abs(np.fft.ifft(y, n=n))
    i = int(np.argmax(mag))
    left, center, right = mag[(i - 1) % n], mag[i], mag[(i + 1) % n]
    offset = log_peak_offset(left, center, right)
    span = grid.max_delay
    delay = float(np.mod((i + offset) * span / n, span))
    if delay >= span:
        delay = 0.0
    return ElementPathEstimate(delay, _amplitude_at(y, grid, delay))


def reconstruct_element(estimates, grid: FrequencyGrid) -> np.ndarray:
    out = np.zeros(grid.num_points, dtype=complex)
    for e in estimates:
        out += e.amplitude * _steering(grid, e.delay)
    return out


def _refine(found, residual, grid, cfg):
    """Coordinate-wise re-fit of every term against the signal minus all others (in place)."""
    tol = cfg.delay_tol / grid.bandwidth
    power = np.vdot(residual, residual).real
    for _ in range(cfg.refinement_cycles):
        moved = 0.0
        for idx, old in enumerate(found):
            target = residual + reconstruct_element([old], grid)
            new = delay_ml_single(target, grid, cfg)
            new_residual = target - reconstruct_element([new], grid)
            new_power = np.vdot(new_residual, new_residual).real
            # keep the update only if it does not raise the residual power
            if new_power <= power:
                moved = max(moved, abs(new.delay - old.delay))
                found[idx] = new
                residual, power = new_residual, new_power
        if moved <= tol:
            break
    return residual


def _gated(found, gate, noise_gate):
    if not found:
        return found
    peak = max(e.power for e in found)
    keep = [e for e in found if e.power > 0 and e.power >= peak * gate]
    if noise_gate is not None:
        keep = [e for e in keep if e.power >= noise_gate] or keep[:1]
    return keep


def _joint_polish(found, y, grid):
    """Jointly re-fit all delays; amplitudes are the least-squares solution for given delays."""
    f = grid.frequencies
    bw = grid.bandwidth
    u0 = np.array([e.delay for e in found]) * bw
    span = grid.max_delay * bw

    def fit(u):
        basis = np.exp(-2j * np.pi * np.outer(f, u / bw))
        amps, *_ = np.linalg.lstsq(basis, y, rcond=None)
        return amps, y - basis @ amps

    def resid(u):
        r = fit(u)[1]
        return np.concatenate([r.real, r.imag])

    lo = np.maximum(u0 - 1.0, 0.0)
    hi = np.minimum(u0 + 1.0, np.nextafter(span, 0))
    start = np.clip(u0, lo + 1e-12, hi - 1e-12)
    sol = least_squares(resid, start, bounds=(lo, hi), x_scale=1.0, xtol=1e-12, ftol=1e-14, gtol=1e-14)
    amps, r = fit(sol.x)
    return [ElementPathEstimate(float(u / bw), complex(a)) for u, a in zip(sol.x, amps)], r


def estimate_element(y, grid: FrequencyGrid, cfg: SageConfig | None = None) -> list[ElementPathEstimate]:
    cfg = cfg or SageConfig()
    y = np.asarray(y, dtype=complex)
    residual = y.copy()
    found: list[ElementPathEstimate] = []
    peak_power = 0.0
    gate = 10.0 ** (-cfg.dynamic_range_db / 10.0)
    noise_gate = None
    if cfg.noise_variance:
        noise_gate = cfg.noise_variance / y.size * 10.0 ** (cfg.noise_margin_db / 10.0)

    while len(found) < cfg.max_paths:
        est = delay_ml_single(residual, grid, cfg)
        if est.degenerate:
            break
        if found and est.power < peak_power * gate:
            break
        if noise_gate is not None and est.power < noise_gate:
            break
        found.append(est)
        residual = residual - reconstruct_element([est], grid)
        residual = _refine(found, residual, grid, cfg)
        peak_power = max(e.power for e in found)

    if cfg.joint_polish and found:
        polished, new_residual = _joint_polish(found, y, grid)
        if np.vdot(new_residual, new_residual).real < np.vdot(residual, residual).real:
            found, residual = polished, new_residual
        # a re-fit can push another term under the gate, so repeat until stable
        kept = _gated(found, gate, noise_gate)
        while kept and len(kept) < len(found):
            found, residual = _joint_polish(kept, y, grid)
            kept = _gated(found, gate, noise_gate)

    found = _gated(found, gate, noise_gate)
    found.sort(key=lambda e: (-e.power, e.delay))
    return found


def estimate_all(out: ArrayOutput, cfg: SageConfig | None = None) -> ElementEstimateSet:
    """Run :func:`estimate_element` independently on every element row."""
    cfg = cfg or SageConfig()
    per_element = [estimate_element(row, out.grid, cfg) for row in out.matrix]
    log.debug("element-wise estimation: %d entries over %d elements",
              sum(map(len, per_element)), len(per_element))
    return ElementEstimateSet(per_element, out.geometry, out.grid)
