"""Command-line entry point: synth | estimate | spectrum | cpdp | eval."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, formats
from .channel import cpdp, synthesize_channel, snr_noise, NoiseSpec
from .errors import DegenerateInputError, InvariantError, ScenarioParseError
from .phasemode import delay_azimuth_spectrum, find_dominant_peak, max_mode, phase_mode_transform
from .pipeline import evaluate, run

EXIT_OK, EXIT_PARSE, EXIT_INVARIANT, EXIT_DEGENERATE = 0, 2, 3, 4

log = logging.getLogger("ucahrpe")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def cmd_synth(args) -> int:
    scen = formats.load_scenario(args.scenario)
    noise = scen.noise
    if args.seed_override is not None:
        noise = NoiseSpec(noise.variance, args.seed_override)
    if scen.snr_db is not None:
        clean = synthesize_channel(scen.geometry, scen.grid, scen.paths, scen.masks)
        noise = snr_noise(clean, scen.snr_db, noise.seed)
    out = synthesize_channel(scen.geometry, scen.grid, scen.paths, scen.masks, noise)
    formats.write_array_output(args.out, out)
    print(f"wrote {out.matrix.shape[0]}x{out.matrix.shape[1]} array output to {args.out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    started = _now()
    out = formats.read_array_output(args.array)
    cfg = formats.load_config(args.config)
    if not np.any(out.matrix):
        raise DegenerateInputError("array output is identically zero")
    result = run(out, cfg)
    manifest = formats.RunManifest(
        tool_version=__version__,
        config=formats.config_snapshot(cfg),
        input_file=str(args.array),
        input_sha256=formats.sha256_file(args.array),
        started=started,
        finished=_now(),
        summary={"num_paths": len(result.paths),
                 "initial_estimates": result.initial_count,
                 "residual_power_ratio": result.residual_power_ratio},
    )
    formats.write_bundle(args.out, result, manifest)
    print(f"estimated {len(result.paths)} path(s); bundle in {args.out}")
    return EXIT_OK


def cmd_spectrum(args) -> int:
    out = formats.read_array_output(args.array)
    pad_az, pad_tau = args.pads
    pm = phase_mode_transform(out, max_mode(out.geometry, out.grid))
    spec = delay_azimuth_spectrum(pm, pad_az, pad_tau)
    if str(args.out).endswith(".csv"):
        formats.write_spectrum_csv(args.out, spec)
    else:
        formats.write_spectrum_binary(args.out, spec, out)
    peak = find_dominant_peak(spec)
    if peak.found:
        print(f"peak: delay {peak.delay * 1e9:.4f} ns, azimuth {np.degrees(peak.azimuth):.3f} deg")
    return EXIT_OK


def cmd_cpdp(args) -> int:
    out = formats.read_array_output(args.array)
    prof = cpdp(out, window=args.window, zero_pad=args.zero_pad)
    formats.write_cpdp_csv(args.out, prof)
    print(f"wrote {prof.power.shape[0]}x{prof.power.shape[1]} CPDP to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    scen = formats.load_scenario(args.scenario)
    if not scen.paths:
        raise InvariantError("scenario declares no paths to evaluate against")
    estimates = formats.read_paths_csv(Path(args.result_dir) / "paths.csv")
    manifest_path = Path(args.result_dir) / "manifest.json"
    ratio = float("nan")
    if manifest_path.exists():
        ratio = formats.RunManifest.from_json(manifest_path.read_text()).summary.get(
            "residual_power_ratio", ratio)
    rep = evaluate(estimates, scen.paths, scen.grid.bandwidth, gate=args.gate,
                   residual_power_ratio=ratio)
    report = {
        "matched": [m.__dict__ for m in rep.matches],
        "misses": rep.misses,
        "false_alarms": rep.false_alarms,
        "residual_power_ratio": rep.residual_power_ratio,
    }
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ucahrpe", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize an array output from a scenario file")
    p.add_argument("scenario")
    p.add_argument("--out", required=True)
    p.add_argument("--seed-override", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("estimate", help="run path estimation on an array output")
    p.add_argument("array")
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="result bundle directory")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("spectrum", help="delay-azimuth spectrum (.csv or binary)")
    p.add_argument("array")
    p.add_argument("--out", required=True)
    p.add_argument("--pads", type=int, nargs=2, default=(2, 4), metavar=("AZIMUTH", "DELAY"))
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("cpdp", help="concatenated power delay profiles as CSV")
    p.add_argument("array")
    p.add_argument("--out", required=True)
    p.add_argument("--window", choices=("none", "hann"), default="none")
    p.add_argument("--zero-pad", type=int, default=1)
    p.set_defaults(func=cmd_cpdp)

    p = sub.add_parser("eval", help="compare a result bundle with a scenario's paths")
    p.add_argument("result_dir")
    p.add_argument("scenario")
    p.add_argument("--out")
    p.add_argument("--gate", type=float, default=10.0)
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except DegenerateInputError as exc:
        print(f"degenerate input: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except InvariantError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
