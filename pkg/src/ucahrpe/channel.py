"""UCA geometry, spherical-wave path synthesis and concatenated PDPs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvariantError

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class ArrayGeometry:
    radius: float
    num_elements: int

    def __post_init__(self):
        if not self.radius >= 0 or not np.isfinite(self.radius):
            raise InvariantError(f"radius must be non-negative, got {self.radius}")
        if int(self.num_elements) != self.num_elements or self.num_elements < 1:
            raise InvariantError(f"num_elements must be a positive integer, got {self.num_elements}")

    @property
    def element_azimuths(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.num_elements) / self.num_elements


@dataclass(frozen=True)
class FrequencyGrid:
    f_start: float
    f_stop: float
    num_points: int

    def __post_init__(self):
        if not (self.f_stop > self.f_start > 0):
            raise InvariantError("frequency grid needs f_stop > f_start > 0")
        if int(self.num_points) != self.num_points or self.num_points < 2:
            raise InvariantError("frequency grid needs at least two points")

    @property
    def frequencies(self) -> np.ndarray:
        return np.linspace(self.f_start, self.f_stop, self.num_points)

    @property
    def bandwidth(self) -> float:
        return self.f_stop - self.f_start

    @property
    def spacing(self) -> float:
        return self.bandwidth / (self.num_points - 1)

    @property
    def center_index(self) -> int:
        return (self.num_points - 1) // 2

    @property
    def max_delay(self) -> float:
        """Unambiguous delay span ``1 / spacing``."""
        return 1.0 / self.spacing


@dataclass(frozen=True)
class PathParams:
    """One propagation path referenced to the array center.

    Angles are in radians; ``source_distance`` is the distance from the
    array center to the last interaction point.
    """

    delay: float
    azimuth: float
    elevation: float
    source_distance: float
    amplitude: complex = 1.0

    def __post_init__(self):
        if not self.delay >= 0:
            raise InvariantError(f"delay must be non-negative, got {self.delay}")
        if not (0.0 < self.elevation <= np.pi / 2 + 1e-12):
            raise InvariantError(
                f"elevation must lie in (0, 90] degrees, got {np.degrees(self.elevation):.6g}")
        if not self.source_distance > 0:
            raise InvariantError("source_distance must be positive")
        object.__setattr__(self, "azimuth", float(np.mod(self.azimuth, 2.0 * np.pi)))
        object.__setattr__(self, "amplitude", complex(self.amplitude))

    def check_against(self, geom: ArrayGeometry) -> None:
        if not self.source_distance > geom.radius:
            raise InvariantError(
                f"source distance {self.source_distance} m must exceed the array radius {geom.radius} m")


@dataclass(frozen=True)
class GainMask:
    """Per-element magnitude visibility of one path (1 = visible, 0 = absent)."""

    gains: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=float)
        if g.ndim != 1:
            raise InvariantError("gain mask must be one-dimensional")
        if np.any(g < 0) or np.any(g > 1) or not np.all(np.isfinite(g)):
            raise InvariantError("gain mask entries must lie in [0, 1]")
        g.setflags(write=False)
        object.__setattr__(self, "gains", g)

    @classmethod
    def full(cls, num_elements: int) -> "GainMask":
        return cls(np.ones(num_elements))

    @classmethod
    def from_ranges(cls, num_elements: int, ranges, gain: float = 1.0) -> "GainMask":
        """Visible only on the inclusive element index ranges given as ``(first, last)``."""
        g = np.zeros(num_elements)
        for first, last in ranges:
            if not (0 <= first <= last < num_elements):
                raise InvariantError(f"element range ({first}, {last}) outside [0, {num_elements - 1}]")
            g[first:last + 1] = gain
        return cls(g)

    def __len__(self):
        return self.gains.size


@dataclass(frozen=True)
class NoiseSpec:
    variance: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.variance >= 0:
            raise InvariantError("noise variance must be non-negative")


@dataclass
class ArrayOutput:
    """P x K frequency responses of the array."""

    matrix: np.ndarray
    geometry: ArrayGeometry
    grid: FrequencyGrid

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        expected = (self.geometry.num_elements, self.grid.num_points)
        if self.matrix.shape != expected:
            raise InvariantError(f"array output shape {self.matrix.shape} does not match {expected}")


def _check_element(geom: ArrayGeometry, p: int) -> None:
    if not (0 <= p < geom.num_elements) or int(p) != p:
        raise InvariantError(f"element index {p} outside [0, {geom.num_elements - 1}]")


def spherical_distances(geom: ArrayGeometry, distance, azimuth, elevation) -> np.ndarray:
    """Element-to-source distances for a source at (distance, azimuth, elevation).

    No domain checks: elevations outside (0, 90] degrees are accepted here.
    """
    cos_term = np.cos(azimuth - geom.element_azimuths)
    r = geom.radius
    return np.sqrt(distance * distance + r * r - 2.0 * r * distance * np.sin(elevation) * cos_term)


def element_distances(geom: ArrayGeometry, path: PathParams) -> np.ndarray:
    """Distance from every element to the path's last interaction point."""
    return spherical_distances(geom, path.source_distance, path.azimuth, path.elevation)


def source_distance_at_element(geom: ArrayGeometry, path: PathParams, p: int) -> float:
    _check_element(geom, p)
    return float(element_distances(geom, path)[p])


def excess_distance(geom: ArrayGeometry, path: PathParams, p: int) -> float:
    """Path-length saving of element ``p`` relative to the array center."""
    return path.source_distance - source_distance_at_element(geom, path, p)


def element_delays_gains(geom: ArrayGeometry, path: PathParams) -> tuple[np.ndarray, np.ndarray]:
    """Per-element delay and complex gain of ``path`` for all elements."""
    dist = element_distances(geom, path)
    delays = path.delay - (path.source_distance - dist) / SPEED_OF_LIGHT
    gains = (path.source_distance / dist) * path.amplitude
    return delays, gains


def element_path_params(geom: ArrayGeometry, path: PathParams, p: int) -> tuple[float, complex]:
    _check_element(geom, p)
    delays, gains = element_delays_gains(geom, path)
    return float(delays[p]), complex(gains[p])


def synthesize_path(geom: ArrayGeometry, grid: FrequencyGrid, path: PathParams,
                    mask: GainMask | None = None) -> np.ndarray:
    path.check_against(geom)
    delays, gains = element_delays_gains(geom, path)
    if mask is not None:
        if len(mask) != geom.num_elements:
            raise InvariantError(f"mask length {len(mask)} != {geom.num_elements} elements")
        gains = gains * mask.gains
    f = grid.frequencies
    return gains[:, None] * np.exp(-2j * np.pi * f[None, :] * delays[:, None])


def complex_noise(shape, noise: NoiseSpec) -> np.ndarray:
    rng = np.random.default_rng(noise.seed)
    scale = np.sqrt(noise.variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def synthesize_channel(geom: ArrayGeometry, grid: FrequencyGrid, paths: Sequence[PathParams],
                       masks: Sequence[GainMask | None] | None = None,
                       noise: NoiseSpec | None = None) -> ArrayOutput:
    if masks is None:
        masks = [None] * len(paths)
    if len(masks) != len(paths):
        raise InvariantError(f"{len(paths)} paths but {len(masks)} masks")
    y = np.zeros((geom.num_elements, grid.num_points), dtype=complex)
    for path, mask in zip(paths, masks):
        y += synthesize_path(geom, grid, path, mask)
    if noise is not None and noise.variance > 0:
        y += complex_noise(y.shape, noise)
    return ArrayOutput(y, geom, grid)


def snr_noise(out: ArrayOutput, snr_db: float, seed: int = 0) -> NoiseSpec:
    """Noise spec whose variance sits ``snr_db`` below the mean sample power of ``out``."""
    power = float(np.mean(np.abs(out.matrix) ** 2))
    return NoiseSpec(variance=power * 10.0 ** (-snr_db / 10.0), seed=seed)


@dataclass
class Cpdp:
    power: np.ndarray
    delays: np.ndarray


def cpdp(out: ArrayOutput, window: str = "none", zero_pad: int = 1) -> Cpdp:
    """Concatenated power delay profiles, one row per element.

    The inverse transform is scaled by ``1/K`` so an on-bin unit tone peaks
    at power 1; with the rectangular window each row sums to
    ``zero_pad * mean(|Y_p|^2)``.
    """
    if int(zero_pad) != zero_pad or zero_pad < 1:
        raise InvariantError("zero_pad must be an integer >= 1")
    k = out.grid.num_points
    if window in (None, "none"):
        w = np.ones(k)
    elif window == "hann":
        w = np.hanning(k)
    else:
        raise InvariantError(f"unknown window {window!r}")
    n = k * int(zero_pad)
    h = np.fft.ifft(out.matrix * w[None, :], n=n, axis=1) * (n / k)
    delays = np.arange(n) / (n * out.grid.spacing)
    return Cpdp(np.abs(h) ** 2, delays)


def full_scale_setup() -> tuple[ArrayGeometry, FrequencyGrid]:
    """720-element, 0.5 m UCA over 28-30 GHz with 750 points."""
    return ArrayGeometry(0.5, 720), FrequencyGrid(28e9, 30e9, 750)


def desk_scale_setup() -> tuple[ArrayGeometry, FrequencyGrid]:
    """72-element, 0.5 m UCA over 2.8-3.0 GHz with 128 points."""
    return ArrayGeometry(0.5, 72), FrequencyGrid(2.8e9, 3.0e9, 128)
