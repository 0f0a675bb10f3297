"""Readers and writers for scenario, configuration, binary matrix and CSV files."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import struct
from pathlib import Path
from typing import Any, Optional

import numpy as np
import tomli

from .channel import (ArrayGeometry, ArrayOutput, Cpdp, FrequencyGrid, GainMask, NoiseSpec,
                      PathParams, desk_scale_setup, full_scale_setup)
from .errors import InvariantError, ScenarioParseError
from .phasemode import DelayAzimuthSpectrum
from .pipeline import PipelineConfig, PipelineResult
from .refine import RefineConfig
from .sage import ElementEstimateSet, ElementPathEstimate, SageConfig
from .trajectory import Trajectory

ARRAY_MAGIC = b"UCAH"
SPECTRUM_MAGIC = b"UCAS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIddd")


def fmt(x: float) -> str:
    """17 significant digits: enough for a lossless float round trip."""
    return format(float(x), ".17g")


# -- binary matrices ---------------------------------------------------------

def _write_matrix(path, magic, matrix, f_start, f_stop, radius):
    m = np.ascontiguousarray(matrix, dtype=np.complex128)
    rows, cols = m.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, FORMAT_VERSION, rows, cols, f_start, f_stop, radius))
        fh.write(m.astype("<c16").tobytes())


def _read_matrix(path, magic):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ScenarioParseError(f"{path}: file too short for a header")
    got, version, rows, cols, f_start, f_stop, radius = _HEADER.unpack_from(data)
    if got != magic:
        raise ScenarioParseError(f"{path}: bad magic {got!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise ScenarioParseError(f"{path}: unsupported format version {version}")
    body = data[_HEADER.size:]
    if len(body) != rows * cols * 16:
        raise ScenarioParseError(f"{path}: payload holds {len(body)} bytes, expected {rows * cols * 16}")
    matrix = np.frombuffer(body, dtype="<c16").reshape(rows, cols).astype(np.complex128)
    return matrix, f_start, f_stop, radius


def write_array_output(path, out: ArrayOutput) -> None:
    _write_matrix(path, ARRAY_MAGIC, out.matrix, out.grid.f_start, out.grid.f_stop,
                  out.geometry.radius)


def read_array_output(path) -> ArrayOutput:
    matrix, f_start, f_stop, radius = _read_matrix(path, ARRAY_MAGIC)
    p, k = matrix.shape
    return ArrayOutput(matrix, ArrayGeometry(radius, p), FrequencyGrid(f_start, f_stop, k))


def write_spectrum_binary(path, spec: DelayAzimuthSpectrum, out: ArrayOutput) -> None:
    _write_matrix(path, SPECTRUM_MAGIC, spec.power, out.grid.f_start, out.grid.f_stop,
                  out.geometry.radius)


def read_spectrum_binary(path) -> tuple[np.ndarray, float, float, float]:
    matrix, f_start, f_stop, radius = _read_matrix(path, SPECTRUM_MAGIC)
    return matrix.real.copy(), f_start, f_stop, radius


# -- CSV exports -------------------------------------------------------------

def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader if row]


def write_spectrum_csv(path, spec: DelayAzimuthSpectrum) -> None:
    header = ["delay_s/azimuth_deg"] + [fmt(np.degrees(a)) for a in spec.azimuths]
    rows = ([fmt(t)] + [fmt(v) for v in spec.power[:, j]] for j, t in enumerate(spec.delays))
    _write_rows(path, header, rows)


def read_spectrum_csv(path) -> DelayAzimuthSpectrum:
    header, rows = _read_rows(path)
    az = np.radians(np.array(header[1:], dtype=float))
    table = np.array(rows, dtype=float)
    return DelayAzimuthSpectrum(table[:, 1:].T.copy(), az, table[:, 0].copy())


def write_cpdp_csv(path, prof: Cpdp) -> None:
    header = ["element/delay_s"] + [fmt(t) for t in prof.delays]
    rows = ([str(p)] + [fmt(v) for v in row] for p, row in enumerate(prof.power))
    _write_rows(path, header, rows)


def read_cpdp_csv(path) -> Cpdp:
    header, rows = _read_rows(path)
    table = np.array(rows, dtype=float)
    return Cpdp(table[:, 1:].copy(), np.array(header[1:], dtype=float))


ESTIMATE_HEADER = ["element_index", "path_rank", "delay_s", "amp_real", "amp_imag"]


def write_estimates_csv(path, est: ElementEstimateSet) -> None:
    rows = ([p, rank, fmt(e.delay), fmt(e.amplitude.real), fmt(e.amplitude.imag)]
            for p, lst in enumerate(est.per_element) for rank, e in enumerate(lst))
    _write_rows(path, ESTIMATE_HEADER, rows)


def read_estimates_csv(path, geometry: ArrayGeometry, grid: FrequencyGrid) -> ElementEstimateSet:
    header, rows = _read_rows(path)
    if header != ESTIMATE_HEADER:
        raise ScenarioParseError(f"{path}: unexpected header {header}")
    per = [[] for _ in range(geometry.num_elements)]
    for row in sorted(rows, key=lambda r: (int(r[0]), int(r[1]))):
        per[int(row[0])].append(ElementPathEstimate(float(row[2]), complex(float(row[3]), float(row[4]))))
    return ElementEstimateSet(per, geometry, grid)


TRAJECTORY_HEADER = ["element_index", "delay_s", "amp_real", "amp_imag", "trajectory_id"]


def write_trajectories_csv(path, trajectories: list[Trajectory]) -> None:
    rows = ([p, fmt(e.delay), fmt(e.amplitude.real), fmt(e.amplitude.imag), tid]
            for tid, traj in enumerate(trajectories)
            for p, e in enumerate(traj.selections) if e is not None)
    _write_rows(path, TRAJECTORY_HEADER, rows)


PATHS_HEADER = ["path_id", "delay_s", "azimuth_deg", "elevation_deg", "distance_m",
                "amp_real", "amp_imag", "support_C", "score"]


def write_paths_csv(path, result: PipelineResult) -> None:
    rows = []
    for i, ep in enumerate(result.paths):
        p = ep.params
        rows.append([i, fmt(p.delay), fmt(np.degrees(p.azimuth)), fmt(np.degrees(p.elevation)),
                     fmt(p.source_distance), fmt(p.amplitude.real), fmt(p.amplitude.imag),
                     ep.support, fmt(ep.score)])
    _write_rows(path, PATHS_HEADER, rows)


def read_paths_csv(path) -> list[PathParams]:
    header, rows = _read_rows(path)
    if header != PATHS_HEADER:
        raise ScenarioParseError(f"{path}: unexpected header {header}")
    return [PathParams(float(r[1]), np.radians(float(r[2])), np.radians(float(r[3])), float(r[4]),
                       complex(float(r[5]), float(r[6]))) for r in rows]


def write_diagnostics_csv(path, result: PipelineResult) -> None:
    header = ["iteration", "peak_delay_s", "peak_azimuth_deg", "peak_power", "support_C",
              "elevation_deg", "plateau_low_deg", "plateau_high_deg", "accepted"]
    rows = ([d.iteration, fmt(d.peak_delay), fmt(np.degrees(d.peak_azimuth)), fmt(d.peak_power),
             d.support, fmt(np.degrees(d.elevation)), fmt(np.degrees(d.plateau[0])),
             fmt(np.degrees(d.plateau[1])), int(d.accepted)] for d in result.diagnostics)
    _write_rows(path, header, rows)


# -- scenario files ----------------------------------------------------------

def _load_toml(text: str, source: str) -> dict:
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        # tomli reports "(at line L, column C)"
        raise ScenarioParseError(f"{source}: {exc}") from exc


def _take(table: dict, key: str, where: str, kind=float, default: Any = ...):
    if key not in table:
        if default is ...:
            raise ScenarioParseError(f"{where}: missing key '{key}'")
        return default
    value = table[key]
    try:
        if kind is int and (isinstance(value, bool) or int(value) != value):
            raise TypeError
        return kind(value)
    except (TypeError, ValueError):
        raise ScenarioParseError(f"{where}: key '{key}' has invalid value {value!r}") from None


def _check_keys(table: dict, allowed: set, where: str) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise ScenarioParseError(f"{where}: unknown key(s) {sorted(unknown)}")


@dataclasses.dataclass
class Scenario:
    geometry: ArrayGeometry
    grid: FrequencyGrid
    paths: list[PathParams]
    masks: list[GainMask]
    noise: NoiseSpec
    snr_db: Optional[float] = None


_PATH_KEYS = {"delay_s", "delay_ns", "azimuth_deg", "elevation_deg", "distance_m",
              "amplitude", "amplitude_db", "phase_deg", "visible", "gain", "mask"}


def _parse_path(entry: dict, idx: int, geom: ArrayGeometry) -> tuple[PathParams, GainMask]:
    where = f"path[{idx}]"
    _check_keys(entry, _PATH_KEYS, where)
    if "delay_s" in entry:
        delay = _take(entry, "delay_s", where)
    else:
        delay = _take(entry, "delay_ns", where) * 1e-9
    azimuth = np.radians(_take(entry, "azimuth_deg", where))
    elevation = np.radians(_take(entry, "elevation_deg", where))
    distance = _take(entry, "distance_m", where)
    if "amplitude" in entry:
        amp = entry["amplitude"]
        if isinstance(amp, list) and len(amp) == 2:
            amplitude = complex(float(amp[0]), float(amp[1]))
        elif isinstance(amp, (int, float)) and not isinstance(amp, bool):
            amplitude = complex(amp)
        else:
            raise ScenarioParseError(f"{where}: amplitude must be a number or [real, imag]")
    else:
        mag = 10.0 ** (_take(entry, "amplitude_db", where, default=0.0) / 20.0)
        amplitude = mag * np.exp(1j * np.radians(_take(entry, "phase_deg", where, default=0.0)))
    path = PathParams(delay, azimuth, elevation, distance, amplitude)
    path.check_against(geom)
    p = geom.num_elements
    if "mask" in entry:
        mask = GainMask(np.asarray(entry["mask"], dtype=float))
        if len(mask) != p:
            raise InvariantError(f"{where}: mask has {len(mask)} entries for {p} elements")
    elif "visible" in entry:
        ranges = entry["visible"]
        if not all(isinstance(r, list) and len(r) == 2 for r in ranges):
            raise ScenarioParseError(f"{where}: visible must be a list of [first, last] ranges")
        mask = GainMask.from_ranges(p, [(int(a), int(b)) for a, b in ranges],
                                    _take(entry, "gain", where, default=1.0))
    else:
        mask = GainMask(np.full(p, _take(entry, "gain", where, default=1.0)))
    return path, mask


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    doc = _load_toml(text, source)
    _check_keys(doc, {"array", "frequency", "noise", "path", "preset"}, source)
    preset = doc.get("preset")
    if preset is not None:
        presets = {"full": full_scale_setup, "desk": desk_scale_setup}
        if preset not in presets:
            raise ScenarioParseError(f"{source}: unknown preset {preset!r} (use 'full' or 'desk')")
        base_geom, base_grid = presets[preset]()
    else:
        base_geom = base_grid = None
    arr = doc.get("array", {})
    _check_keys(arr, {"radius_m", "num_elements"}, "array")
    freq = doc.get("frequency", {})
    _check_keys(freq, {"start_hz", "stop_hz", "num_points"}, "frequency")
    geom = ArrayGeometry(
        _take(arr, "radius_m", "array", default=base_geom.radius if base_geom else ...),
        _take(arr, "num_elements", "array", int,
              default=base_geom.num_elements if base_geom else ...))
    grid = FrequencyGrid(
        _take(freq, "start_hz", "frequency", default=base_grid.f_start if base_grid else ...),
        _take(freq, "stop_hz", "frequency", default=base_grid.f_stop if base_grid else ...),
        _take(freq, "num_points", "frequency", int,
              default=base_grid.num_points if base_grid else ...))
    noise_tab = doc.get("noise", {})
    _check_keys(noise_tab, {"variance", "snr_db", "seed"}, "noise")
    if "variance" in noise_tab and "snr_db" in noise_tab:
        raise ScenarioParseError("noise: give either 'variance' or 'snr_db', not both")
    noise = NoiseSpec(_take(noise_tab, "variance", "noise", default=0.0),
                      _take(noise_tab, "seed", "noise", int, default=0))
    snr_db = _take(noise_tab, "snr_db", "noise", default=None) if "snr_db" in noise_tab else None
    entries = doc.get("path", [])
    if not isinstance(entries, list):
        raise ScenarioParseError(f"{source}: 'path' must be an array of tables ([[path]])")
    paths, masks = [], []
    for i, entry in enumerate(entries):
        path, mask = _parse_path(entry, i, geom)
        paths.append(path)
        masks.append(mask)
    return Scenario(geom, grid, paths, masks, noise, snr_db)


def load_scenario(path) -> Scenario:
    return parse_scenario(Path(path).read_text(), str(path))


# -- estimation config -------------------------------------------------------

_PIPELINE_KEYS = {f.name for f in dataclasses.fields(PipelineConfig)} - {"sage", "refine"}


def _fill(cls, table: dict, where: str):
    _check_keys(table, {f.name for f in dataclasses.fields(cls)}, where)
    try:
        return cls(**table)
    except TypeError as exc:
        raise ScenarioParseError(f"{where}: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> PipelineConfig:
    doc = _load_toml(text, source)
    _check_keys(doc, {"sage", "refine", "pipeline"}, source)
    sage = _fill(SageConfig, doc.get("sage", {}), "sage")
    refine = _fill(RefineConfig, doc.get("refine", {}), "refine")
    pipe = doc.get("pipeline", {})
    _check_keys(pipe, _PIPELINE_KEYS, "pipeline")
    return PipelineConfig(sage=sage, refine=refine, **pipe)


def load_config(path: Optional[str]) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    return parse_config(Path(path).read_text(), str(path))


def config_snapshot(cfg: PipelineConfig) -> dict:
    return dataclasses.asdict(cfg)


# -- manifest ----------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclasses.dataclass
class RunManifest:
    tool_version: str
    config: dict
    input_file: str
    input_sha256: str
    started: str
    finished: str
    summary: dict = dataclasses.field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))


def write_bundle(out_dir, result: PipelineResult, manifest: RunManifest) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_paths_csv(out / "paths.csv", result)
    write_trajectories_csv(out / "trajectories.csv", result.trajectories)
    write_diagnostics_csv(out / "diagnostics.csv", result)
    if result.residual is not None:
        write_estimates_csv(out / "residual.csv", result.residual)
    (out / "manifest.json").write_text(manifest.to_json() + "\n")
