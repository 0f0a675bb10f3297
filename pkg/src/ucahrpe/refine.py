"""Per-path refinement of azimuth, elevation, source distance, delay and amplitude.

Everything here correlates the single-path array output rebuilt from a
trajectory against the spherical-wave steering model and keeps the grid
point with the largest correlation magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .channel import SPEED_OF_LIGHT, ArrayGeometry, FrequencyGrid, spherical_distances
from .errors import DegenerateInputError, InvariantError
from .peaks import log_peak_offset
from .trajectory import Trajectory

_MAX_CHUNK = 4_000_000   # complex entries evaluated per block
_MIN_ELEVATION = 1e-6    # radians; the search stays inside (0, 90] degrees


@dataclass
class RefineConfig:
    azimuth_window_deg: float = 2.0
    azimuth_step_deg: float = 0.05
    elevation_window_deg: float = 10.0
    elevation_step_deg: float = 0.5
    num_distances: int = 50
    min_distance_radii: float = 2.0
    delay_window_bins: float = 2.0        # in units of 1/B
    delay_step_bins: float = 1.0 / 16.0   # in units of 1/B
    frequency_index: Optional[int] = None  # None -> center of the band
    stages: int = 2
    shrink: float = 4.0

    def __post_init__(self):
        for name in ("azimuth_window_deg", "azimuth_step_deg", "elevation_window_deg",
                     "elevation_step_deg", "delay_window_bins", "delay_step_bins"):
            if not getattr(self, name) > 0:
                raise InvariantError(f"{name} must be positive")
        if self.num_distances < 1 or self.stages < 1 or not self.shrink >= 1:
            raise InvariantError("num_distances, stages must be >= 1 and shrink >= 1")


@dataclass
class AngleDistanceFit:
    azimuth: float
    elevation: float
    distance: float
    score: float


@dataclass
class DelayFit:
    delay: float
    score: float
    at_edge: bool = False


def steering(geom: ArrayGeometry, freqs, delay, azimuth, elevation, distance) -> np.ndarray:
    """Unit-amplitude spherical-wave array response, shape (P, len(freqs))."""
    dp = spherical_distances(geom, distance, azimuth, elevation)
    tau_p = delay - (distance - dp) / SPEED_OF_LIGHT
    f = np.atleast_1d(np.asarray(freqs, dtype=float))
    return (distance / dp)[:, None] * np.exp(-2j * np.pi * f[None, :] * tau_p[:, None])


def reconstruct_trajectory_output(traj: Trajectory, grid: FrequencyGrid) -> np.ndarray:
    if traj.support_count == 0:
        raise DegenerateInputError("cannot rebuild an empty trajectory")
    f = grid.frequencies
    out = np.zeros((len(traj.selections), grid.num_points), dtype=complex)
    for p, e in enumerate(traj.selections):
        if e is not None:
            out[p] = e.amplitude * np.exp(-2j * np.pi * f * e.delay)
    return out


def distance_grid(geom: ArrayGeometry, tau_hat: float, n: int, min_radii: float = 2.0) -> np.ndarray:
    """Log-spaced candidate source distances, capped at ``c * tau_hat``."""
    d_max = SPEED_OF_LIGHT * tau_hat
    r = geom.radius
    if not d_max > r:
        raise DegenerateInputError(
            f"delay {tau_hat:.4g} s puts every source inside the array radius")
    d_min = min(min_radii * r, 0.5 * (r + d_max)) if r > 0 else d_max * 1e-3
    if n == 1:
        return np.array([d_max])
    return np.geomspace(d_min, d_max, n)


def _correlation_scores(h_col, geom, freq, phis, thetas, dists):
    """|sum_p h_p conj(W_p)| / rms|W| on the (phi, theta, d) grid, delay taken as zero."""
    r = geom.radius
    cos_d = np.cos(phis[:, None] - geom.element_azimuths[None, :])           # (nphi, P)
    sin_t = np.sin(thetas)                                                   # (nth,)
    scores = np.empty((phis.size, thetas.size, dists.size))
    k = 2.0 * np.pi * freq / SPEED_OF_LIGHT
    per_phi = thetas.size * dists.size * geom.num_elements
    step = max(1, _MAX_CHUNK // max(per_phi, 1))
    d = dists[None, None, :, None]
    for start in range(0, phis.size, step):
        c = cos_d[start:start + step][:, None, None, :]                      # (b,1,1,P)
        st = sin_t[None, :, None, None]
        dp = np.sqrt(d ** 2 + r * r - 2.0 * r * d * st * c)
        # conj(W) = (d/dp) exp(-j k (d - dp))
        gain = d / dp
        w_conj = gain * np.exp(-1j * k * (d - dp))
        # divide by the rms steering magnitude so candidates with a larger
        # near-field gain spread are not favoured; equals 1 for plane waves
        rms = np.sqrt(np.mean(gain ** 2, axis=-1))
        scores[start:start + step] = np.abs(w_conj @ h_col) / rms
    return scores


def _argmax_lexi(scores):
    """Largest score; ties resolved to the smallest (phi, theta, d) indices."""
    return np.unravel_index(int(np.argmax(scores)), scores.shape)


def _axis(center, half, step, lo=None, hi=None):
    n = int(np.floor(half / step + 1e-9))
    axis = center + step * np.arange(-n, n + 1)
    if lo is not None:
        axis = axis[axis >= lo - 1e-12]
    if hi is not None:
        axis = axis[axis <= hi + 1e-12]
    if axis.size == 0:
        axis = np.array([min(max(center, lo if lo is not None else center),
                             hi if hi is not None else center)])
    return axis


def refine_angles_distance(h_hat, traj: Trajectory, cfg: RefineConfig, geom: ArrayGeometry,
                           grid: FrequencyGrid, elevation_range: Optional[tuple[float, float]] = None,
                           azimuth_window_deg: Optional[float] = None) -> AngleDistanceFit:
    """Coarse-to-fine search of (azimuth, elevation, distance) at one frequency.

    ``elevation_range`` (radians) widens the elevation search beyond the
    configured window around the trajectory's elevation; the search never
    leaves (0, 90] degrees.
    """
    h_hat = np.asarray(h_hat, dtype=complex)
    k_idx = grid.center_index if cfg.frequency_index is None else int(cfg.frequency_index)
    h_col = h_hat[:, k_idx]
    if not np.any(h_col):
        raise DegenerateInputError("rebuilt path output is zero at the refinement frequency")
    freq = grid.frequencies[k_idx]

    az_half = np.radians(azimuth_window_deg if azimuth_window_deg is not None else cfg.azimuth_window_deg)
    el_half = np.radians(cfg.elevation_window_deg)
    el_lo = max(traj.elevation - el_half, _MIN_ELEVATION)
    el_hi = min(traj.elevation + el_half, np.pi / 2)
    if elevation_range is not None:
        el_lo = max(min(el_lo, elevation_range[0]), _MIN_ELEVATION)
        el_hi = min(max(el_hi, elevation_range[1]), np.pi / 2)
    dists = distance_grid(geom, traj.init_delay, cfg.num_distances, cfg.min_distance_radii)

    shrink_total = cfg.shrink ** (cfg.stages - 1)
    az_step = np.radians(cfg.azimuth_step_deg) * shrink_total
    el_step = np.radians(cfg.elevation_step_deg) * shrink_total
    phi_c = traj.init_azimuth
    el_c = 0.5 * (el_lo + el_hi)
    el_half_s = 0.5 * (el_hi - el_lo)
    d_axis = dists
    best = None
    for stage in range(cfg.stages):
        phis = _axis(phi_c, az_half, az_step)
        thetas = _axis(el_c, el_half_s, el_step, el_lo, el_hi)
        scores = _correlation_scores(h_col, geom, freq, phis, thetas, d_axis)
        ia, it, idd = _argmax_lexi(scores)
        best = AngleDistanceFit(float(np.mod(phis[ia], 2 * np.pi)), float(thetas[it]),
                                float(d_axis[idd]), float(scores[ia, it, idd]))
        if stage == cfg.stages - 1:
            break
        # next stage: shrink windows around the winner but keep at least two
        # coarse steps (three distance cells) so a coupled angle/distance
        # offset from the coarse grid can still be undone
        phi_c, el_c = phis[ia], thetas[it]
        az_half = max(az_half / cfg.shrink, 2.0 * az_step)
        el_half_s = max(el_half_s / cfg.shrink, 2.0 * el_step)
        az_step /= cfg.shrink
        el_step /= cfg.shrink
        lo = d_axis[max(idd - 3, 0)]
        hi = d_axis[min(idd + 3, d_axis.size - 1)]
        d_axis = np.geomspace(lo, hi, cfg.num_distances) if hi > lo else np.array([lo])
    return best


def _delay_profile(h_hat, geom, grid, azimuth, elevation, distance):
    w0 = steering(geom, grid.frequencies, 0.0, azimuth, elevation, distance)
    return np.sum(h_hat * np.conj(w0), axis=0)          # z_k


def _delay_scores(z, freqs, taus):
    return np.abs(np.exp(2j * np.pi * np.outer(taus, freqs)) @ z)


def refine_delay(h_hat, azimuth, elevation, distance, cfg: RefineConfig, geom: ArrayGeometry,
                 grid: FrequencyGrid, tau_init: float) -> DelayFit:
    h_hat = np.asarray(h_hat, dtype=complex)
    if not np.any(h_hat):
        raise DegenerateInputError("rebuilt path output is zero")
    z = _delay_profile(h_hat, geom, grid, azimuth, elevation, distance)
    f = grid.frequencies
    step = cfg.delay_step_bins / grid.bandwidth
    half = cfg.delay_window_bins / grid.bandwidth
    taus = _axis(tau_init, half, step)
    scores = _delay_scores(z, f, taus)
    i = int(np.argmax(scores))
    if i == 0 or i == taus.size - 1:
        return DelayFit(float(taus[i]), float(scores[i]), at_edge=True)
    center = scores[i]
    offset = log_peak_offset(scores[i - 1], center, scores[i + 1])
    tau = float(taus[i] + offset * step)
    score = float(_delay_scores(z, f, np.array([tau]))[0])
    if score < center:
        tau, score = float(taus[i]), float(center)
    return DelayFit(tau, score)


def estimate_amplitude(h_hat, delay, azimuth, elevation, distance, support: int,
                       geom: ArrayGeometry, grid: FrequencyGrid) -> complex:
    """Correlation with the steering model normalised by supporting elements times frequencies.

    Dividing by the support count rather than the element count keeps
    elements where the path is absent from diluting the amplitude.
    """
    if support < 1:
        raise DegenerateInputError("amplitude needs at least one supporting element")
    w = steering(geom, grid.frequencies, delay, azimuth, elevation, distance)
    return complex(np.sum(np.asarray(h_hat) * np.conj(w)) / (support * grid.num_points))
