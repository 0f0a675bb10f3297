"""Identification-removal loop turning an array output into a list of paths."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .channel import ArrayOutput, PathParams
from .errors import InvariantError
from .phasemode import (delay_azimuth_spectrum, find_dominant_peak, max_mode,
                        phase_mode_transform)
from .refine import (RefineConfig, estimate_amplitude, reconstruct_trajectory_output,
                     refine_angles_distance, refine_delay)
from .sage import ElementEstimateSet, SageConfig, estimate_all
from .trajectory import (Trajectory, default_theta_grid, estimate_elevation, make_area,
                         remove_trajectory, select_trajectory)

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    sage: SageConfig = field(default_factory=SageConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    pad_azimuth: int = 2
    pad_delay: int = 4
    half_width: Optional[float] = None        # seconds; None -> 1/(2B)
    theta_step_deg: float = 1.0
    support_threshold: Optional[int] = None   # None -> P // 2
    max_iterations: int = 50
    # half-width of the azimuth search around the spectrum peak; the
    # spectrum peak can sit several degrees off for near-field paths
    azimuth_search_deg: float = 8.0
    # ... and never fewer than this many spectrum azimuth bins
    azimuth_window_bins: float = 4.0
    # elevation search also covers the whole count plateau, widened by this margin
    plateau_margin_deg: float = 5.0

    def resolved_half_width(self, bandwidth: float) -> float:
        return self.half_width if self.half_width is not None else 1.0 / (2.0 * bandwidth)

    def resolved_threshold(self, num_elements: int) -> int:
        min_support = self.support_threshold if self.support_threshold is not None else num_elements // 2
        if not 1 <= min_support <= num_elements:
            raise InvariantError(f"support threshold {min_support} outside [1, {num_elements}]")
        return int(min_support)


@dataclass
class EstimatedPath:
    params: PathParams
    support: int
    score: float
    delay_at_edge: bool = False


@dataclass
class IterationRecord:
    iteration: int
    peak_delay: float
    peak_azimuth: float
    peak_power: float
    support: int
    elevation: float
    plateau: tuple[float, float]
    accepted: bool


@dataclass
class PipelineResult:
    paths: list[EstimatedPath]
    trajectories: list[Trajectory]
    residual: Optional[ElementEstimateSet]
    diagnostics: list[IterationRecord]
    initial_count: int = 0
    residual_power_ratio: float = float("nan")


def run(out: ArrayOutput, cfg: PipelineConfig | None = None) -> PipelineResult:
    cfg = cfg or PipelineConfig()
    geom, grid = out.geometry, out.grid
    min_support = cfg.resolved_threshold(geom.num_elements)
    half_width = cfg.resolved_half_width(grid.bandwidth)
    thetas = default_theta_grid(cfg.theta_step_deg)
    n_modes = max_mode(geom, grid)

    omega = estimate_all(out, cfg.sage)
    residual = omega
    paths: list[EstimatedPath] = []
    trajectories: list[Trajectory] = []
    diagnostics: list[IterationRecord] = []
    az_bin_deg = 360.0 / ((2 * n_modes + 1) * cfg.pad_azimuth)
    az_window = max(cfg.refine.azimuth_window_deg, cfg.azimuth_search_deg,
                    cfg.azimuth_window_bins * az_bin_deg)

    for iteration in range(cfg.max_iterations):
        if residual.total_count() == 0:
            break
        rebuilt = ArrayOutput(residual.reconstruct(), geom, grid)
        spectrum = delay_azimuth_spectrum(phase_mode_transform(rebuilt, n_modes),
                                          cfg.pad_azimuth, cfg.pad_delay)
        peak = find_dominant_peak(spectrum)
        if not peak.found:
            break
        elev = estimate_elevation(residual, peak.delay, peak.azimuth, thetas, half_width, geom)
        record = IterationRecord(iteration, peak.delay, peak.azimuth, peak.power, elev.count,
                                 elev.elevation, elev.plateau, accepted=False)
        diagnostics.append(record)
        if elev.count < min_support:
            log.debug("iteration %d: support %d below threshold %d, stopping",
                      iteration, elev.count, min_support)
            break

        area = make_area(peak.delay, peak.azimuth, elev.elevation, half_width, geom)
        traj = select_trajectory(residual, area, peak.delay, peak.azimuth)
        h_hat = reconstruct_trajectory_output(traj, grid)
        margin = np.radians(cfg.plateau_margin_deg)
        fit = refine_angles_distance(h_hat, traj, cfg.refine, geom, grid,
                                     elevation_range=(elev.plateau[0] - margin, elev.plateau[1]),
                                     azimuth_window_deg=az_window)
        dfit = refine_delay(h_hat, fit.azimuth, fit.elevation, fit.distance, cfg.refine,
                            geom, grid, peak.delay)
        amp = estimate_amplitude(h_hat, dfit.delay, fit.azimuth, fit.elevation, fit.distance,
                                 traj.support_count, geom, grid)
        params = PathParams(max(dfit.delay, 0.0), fit.azimuth, fit.elevation, fit.distance, amp)
        paths.append(EstimatedPath(params, traj.support_count, fit.score, dfit.at_edge))
        trajectories.append(traj)
        record.accepted = True
        residual = remove_trajectory(residual, traj)

    explained = np.zeros_like(out.matrix)
    for traj in trajectories:
        explained += reconstruct_trajectory_output(traj, grid)
    total = float(np.sum(np.abs(out.matrix) ** 2))
    ratio = float(np.sum(np.abs(out.matrix - explained) ** 2) / total) if total > 0 else 0.0
    return PipelineResult(paths, trajectories, residual, diagnostics, omega.total_count(), ratio)


@dataclass
class PathError:
    truth_index: int
    estimate_index: int
    delay_error: float
    azimuth_error_deg: float
    elevation_error_deg: float
    distance_error: float
    amplitude_error_db: float


@dataclass
class EvaluationReport:
    matches: list[PathError]
    misses: list[int]
    false_alarms: list[int]
    residual_power_ratio: float

    @property
    def num_misses(self) -> int:
        return len(self.misses)

    @property
    def num_false_alarms(self) -> int:
        return len(self.false_alarms)


def _wrap_deg(a):
    return (a + 180.0) % 360.0 - 180.0


def evaluate(estimates: Sequence[PathParams], truth: Sequence[PathParams], bandwidth: float,
             gate: float = 10.0, residual_power_ratio: float = float("nan")) -> EvaluationReport:
    """Greedy nearest matching in (delay * B, azimuth deg, elevation deg) space.

    Pairs farther apart than ``gate`` in that normalised space stay unmatched.
    """
    if len(truth) == 0:
        raise InvariantError("evaluation needs at least one ground-truth path")
    est = list(estimates)
    cost = np.full((len(truth), len(est)), np.inf)
    for i, t in enumerate(truth):
        for j, e in enumerate(est):
            cost[i, j] = np.sqrt(((e.delay - t.delay) * bandwidth) ** 2
                                 + _wrap_deg(np.degrees(e.azimuth - t.azimuth)) ** 2
                                 + np.degrees(e.elevation - t.elevation) ** 2)
    matches = []
    used_t, used_e = set(), set()
    order = np.argsort(cost, axis=None, kind="stable") if est else []
    for flat in order:
        i, j = np.unravel_index(int(flat), cost.shape)
        if i in used_t or j in used_e or cost[i, j] > gate:
            continue
        used_t.add(i)
        used_e.add(j)
        t, e = truth[i], est[j]
        amp_db = (20.0 * np.log10(abs(e.amplitude) / abs(t.amplitude))
                  if abs(t.amplitude) > 0 and abs(e.amplitude) > 0 else float("inf"))
        matches.append(PathError(int(i), int(j), e.delay - t.delay,
                                 float(_wrap_deg(np.degrees(e.azimuth - t.azimuth))),
                                 float(np.degrees(e.elevation - t.elevation)),
                                 e.source_distance - t.source_distance, float(amp_db)))
    matches.sort(key=lambda m: m.truth_index)
    misses = [i for i in range(len(truth)) if i not in used_t]
    false_alarms = [j for j in range(len(est)) if j not in used_e]
    return EvaluationReport(matches, misses, false_alarms, residual_power_ratio)
