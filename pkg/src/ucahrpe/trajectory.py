"""Identify one path's delay trajectory across the ring of element estimates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .channel import SPEED_OF_LIGHT, ArrayGeometry
from .errors import InvariantError
from .sage import ElementEstimateSet, ElementPathEstimate


@dataclass
class TrajectoryArea:
    elevation_hypothesis: float
    center_delays: np.ndarray
    half_width: float

    def __post_init__(self):
        if not self.half_width > 0:
            raise InvariantError("trajectory half width must be positive")


@dataclass
class Trajectory:
    selections: list[Optional[ElementPathEstimate]]
    support_count: int
    elevation: float
    init_delay: float
    init_azimuth: float
    area: Optional[TrajectoryArea] = None

    def __post_init__(self):
        present = sum(e is not None for e in self.selections)
        if present != self.support_count:
            raise InvariantError(f"support count {self.support_count} != {present} selections")

    def selected_elements(self) -> list[int]:
        return [p for p, e in enumerate(self.selections) if e is not None]


@dataclass
class ElevationEstimate:
    elevation: float
    count: int
    counts: np.ndarray = field(repr=False)
    theta_grid: np.ndarray = field(repr=False)
    plateau: tuple[float, float] = (0.0, 0.0)
    degenerate: bool = False


def default_theta_grid(step_deg: float = 1.0) -> np.ndarray:
    n = int(round(90.0 / step_deg))
    return np.radians(np.arange(1, n + 1) * step_deg)


def trajectory_center(tau_hat: float, phi_hat: float, theta: float, geom: ArrayGeometry, p=None):
    """Plane-wave delay at element ``p`` (all elements when ``p`` is None)."""
    phis = geom.element_azimuths if p is None else geom.element_azimuths[p]
    return tau_hat - geom.radius / SPEED_OF_LIGHT * np.sin(theta) * np.cos(phi_hat - phis)


def make_area(tau_hat, phi_hat, theta, half_width, geom: ArrayGeometry) -> TrajectoryArea:
    return TrajectoryArea(theta, trajectory_center(tau_hat, phi_hat, theta, geom), half_width)


def _flatten(residual: ElementEstimateSet):
    elems, delays, powers = [], [], []
    for p, lst in enumerate(residual.per_element):
        for e in lst:
            elems.append(p)
            delays.append(e.delay)
            powers.append(e.power)
    return np.array(elems, dtype=int), np.array(delays, dtype=float), np.array(powers, dtype=float)


def _offsets(delays, centers, span):
    """Signed delay differences wrapped onto the unambiguous delay span."""
    return np.mod(delays - centers + 0.5 * span, span) - 0.5 * span


def _in_band(residual, area):
    if len(area.center_delays) != residual.geometry.num_elements:
        raise InvariantError("area length does not match the number of elements")
    elems, delays, powers = _flatten(residual)
    if elems.size == 0:
        return elems, delays, powers, np.zeros(0, dtype=bool)
    off = _offsets(delays, area.center_delays[elems], residual.grid.max_delay)
    return elems, delays, powers, np.abs(off) <= area.half_width


def count_in_area(residual: ElementEstimateSet, area: TrajectoryArea) -> int:
    elems, _, _, inside = _in_band(residual, area)
    return int(np.unique(elems[inside]).size)


def estimate_elevation(residual: ElementEstimateSet, tau_hat: float, phi_hat: float,
                       theta_grid: Sequence[float], half_width: float,
                       geom: ArrayGeometry) -> ElevationEstimate:
    """Elevation hypothesis whose band holds the most elements; ties go to the largest angle."""
    thetas = np.asarray(theta_grid, dtype=float)
    if thetas.size == 0 or np.any(thetas <= 0) or np.any(thetas > np.pi / 2 + 1e-12):
        raise InvariantError("theta grid must be non-empty within (0, 90] degrees")
    elems, delays, _ = _flatten(residual)
    counts = np.zeros(thetas.size, dtype=int)
    span = residual.grid.max_delay
    for i, theta in enumerate(thetas):
        centers = trajectory_center(tau_hat, phi_hat, theta, geom)
        if elems.size:
            inside = np.abs(_offsets(delays, centers[elems], span)) <= half_width
            counts[i] = np.unique(elems[inside]).size
    best = int(counts.max())
    on_plateau = np.flatnonzero(counts == best)
    pick = on_plateau[np.argmax(thetas[on_plateau])]
    plateau = (float(thetas[on_plateau].min()), float(thetas[on_plateau].max()))
    return ElevationEstimate(float(thetas[pick]), best, counts, thetas, plateau, degenerate=best == 0)


def _db(power):
    return 10.0 * np.log10(np.maximum(power, 1e-300))


def select_trajectory(residual: ElementEstimateSet, area: TrajectoryArea,
                      tau_hat: float = 0.0, phi_hat: float = 0.0) -> Trajectory:
    """One in-band estimate per element, the one closest in dB to the mean in-band power."""
    elems, _, powers, inside = _in_band(residual, area)
    selections: list[Optional[ElementPathEstimate]] = [None] * residual.geometry.num_elements
    if np.any(inside):
        mean_db = float(np.mean(_db(powers[inside])))
        for p, lst in enumerate(residual.per_element):
            band = [e for e in lst
                    if abs(_offsets(e.delay, area.center_delays[p], residual.grid.max_delay)) <= area.half_width]
            if band:
                # min() keeps the first (strongest) candidate on ties
                selections[p] = min(band, key=lambda e: abs(_db(e.power) - mean_db))
    support = sum(e is not None for e in selections)
    return Trajectory(selections, support, area.elevation_hypothesis, tau_hat, phi_hat, area)


def remove_trajectory(residual: ElementEstimateSet, traj: Trajectory,
                      strict: bool = True) -> ElementEstimateSet:
    """Drop the trajectory's selections from ``residual``.

    With ``strict`` a selection missing from ``residual`` is an error;
    otherwise it is skipped, which makes repeated removal a no-op.
    """
    per_element = []
    for p, lst in enumerate(residual.per_element):
        chosen = traj.selections[p] if p < len(traj.selections) else None
        if chosen is None:
            per_element.append(list(lst))
            continue
        kept = [e for e in lst if e is not chosen]
        if len(kept) == len(lst) and strict:
            raise InvariantError(f"trajectory selection at element {p} is not in the residual set")
        per_element.append(kept)
    return ElementEstimateSet(per_element, residual.geometry, residual.grid, dict(residual.meta))
