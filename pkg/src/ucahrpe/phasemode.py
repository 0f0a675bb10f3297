"""Phase-mode transform of UCA outputs and the delay-azimuth spectrum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bessel import bessel_j_table
from .channel import SPEED_OF_LIGHT, ArrayGeometry, ArrayOutput, FrequencyGrid
from .errors import InvariantError
from .peaks import log_peak_offset

FILTER_FLOOR = 1e-3
FILTER_CLAMP = 2.0 / FILTER_FLOOR


@dataclass
class PhaseModeResponse:
    max_mode: int
    matrix: np.ndarray      # rows m = -M..M
    grid: FrequencyGrid

    @property
    def modes(self) -> np.ndarray:
        return np.arange(-self.max_mode, self.max_mode + 1)


@dataclass
class DelayAzimuthSpectrum:
    power: np.ndarray       # (n_azimuth, n_delay)
    azimuths: np.ndarray    # radians, [0, 2pi)
    delays: np.ndarray      # seconds


@dataclass
class SpectrumPeak:
    delay: float
    azimuth: float
    power: float
    found: bool = True


def _wave_arguments(freqs, geom: ArrayGeometry) -> np.ndarray:
    return 2.0 * np.pi * np.asarray(freqs, dtype=float) * geom.radius / SPEED_OF_LIGHT


def _clamp(den):
    small = np.abs(den) < FILTER_FLOOR
    safe = np.where(den < 0, -FILTER_FLOOR, FILTER_FLOOR)
    return np.where(small, safe, den)


def mode_filter(m: int, f: float, geom: ArrayGeometry) -> complex:
    """Envelope-compensating filter ``2 / (J_m(x) + J'_m(x))`` with ``x = 2 pi f r / c``."""
    return complex(mode_filter_table(abs(int(m)), np.array([f]), geom)[int(m) + abs(int(m)), 0])


def mode_filter_table(max_mode: int, freqs, geom: ArrayGeometry) -> np.ndarray:
    """Filter values for modes ``-max_mode..max_mode`` (rows) at ``freqs`` (columns)."""
    x = _wave_arguments(freqs, geom)
    table = bessel_j_table(max_mode + 1, x)
    orders = np.arange(max_mode + 1)
    jm = table[:max_mode + 1]
    jprime = np.empty_like(jm)
    jprime[0] = -table[1]
    if max_mode >= 1:
        jprime[1:] = 0.5 * (table[0:max_mode] - table[2:max_mode + 2])
    g_pos = 2.0 / _clamp(jm + jprime)
    # J_{-m} = (-1)^m J_m, and the same holds for the derivative
    sign = np.where(orders % 2 == 0, 1.0, -1.0)[:, None]
    g_neg = (g_pos * sign)[:0:-1]
    return np.vstack([g_neg, g_pos]).astype(complex)


def max_mode(geom: ArrayGeometry, grid: FrequencyGrid) -> int:
    kr = float(_wave_arguments(grid.f_start, geom))
    return int(min(np.floor(kr), (geom.num_elements - 1) // 2))


def phase_mode_transform(out: ArrayOutput, max_mode: int) -> PhaseModeResponse:
    """Filtered spatial DFT over the ring for modes ``-M..M``.

    Mode ``m`` of a ring sampled plane wave carries ``j^m J_m(kr)``; the
    ``j^-m`` factor is removed here together with the Bessel filter so that a
    path at azimuth ``phi`` appears as ``exp(-j m phi)``.
    """
    p = out.geometry.num_elements
    if max_mode < 0 or 2 * max_mode + 1 > p:
        raise InvariantError(f"max_mode {max_mode} needs 2M+1 <= P = {p}")
    modes = np.arange(-max_mode, max_mode + 1)
    spatial = np.fft.fft(out.matrix, axis=0) / p
    rows = spatial[modes % p]
    filt = mode_filter_table(max_mode, out.grid.frequencies, out.geometry)
    rotation = (1j ** (-modes % 4))[:, None]
    return PhaseModeResponse(max_mode, rows * filt * rotation, out.grid)


def delay_azimuth_spectrum(pm: PhaseModeResponse, pad_azimuth: int = 2,
                           pad_delay: int = 4) -> DelayAzimuthSpectrum:
    if pad_azimuth < 1 or pad_delay < 1:
        raise InvariantError("spectrum padding factors must be >= 1")
    n_modes, k = pm.matrix.shape
    n_az = n_modes * pad_azimuth
    n_tau = k * pad_delay
    padded = np.zeros((n_az, k), dtype=complex)
    padded[pm.modes % n_az] = pm.matrix
    field = np.fft.ifft(padded, axis=0) * n_az
    field = np.fft.ifft(field, n=n_tau, axis=1) * n_tau
    power = field.real ** 2 + field.imag ** 2
    azimuths = 2.0 * np.pi * np.arange(n_az) / n_az
    delays = np.arange(n_tau) / (n_tau * pm.grid.spacing)
    return DelayAzimuthSpectrum(power, azimuths, delays)


def _log_offset(values, i):
    n = values.size
    return log_peak_offset(values[(i - 1) % n], values[i], values[(i + 1) % n])


def find_dominant_peak(spec: DelayAzimuthSpectrum) -> SpectrumPeak:
    power = spec.power
    if power.size == 0:
        raise InvariantError("empty spectrum")
    flat = int(np.argmax(power))
    ia, it = np.unravel_index(flat, power.shape)
    peak = float(power[ia, it])
    if not peak > 0:
        return SpectrumPeak(0.0, 0.0, 0.0, found=False)
    n_az, n_tau = power.shape
    az_step = 2.0 * np.pi / n_az
    tau_step = spec.delays[1] - spec.delays[0] if n_tau > 1 else 0.0
    azimuth = np.mod((ia + _log_offset(power[:, it], ia)) * az_step, 2.0 * np.pi)
    delay = np.mod((it + _log_offset(power[ia, :], it)) * tau_step, n_tau * tau_step)
    return SpectrumPeak(float(delay), float(azimuth), peak)
