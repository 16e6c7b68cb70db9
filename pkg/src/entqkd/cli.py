"""Command-line entry point: ``entqkd predict|curve|simulate|sync|distill``.

Exit codes: 0 success, 2 usage or configuration error, 3 no clock lock,
4 QBER above the positive-rate cutoff.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend
from .keyrate import (
    DEFAULT_FIXED_ALICE_DB,
    Placement,
    predict_scenario,
    rate_vs_attenuation_curve,
)
from .protocol import AboveCutoff, ProtocolConfig, run_distillation, write_rate_csv
from .scenario import PRESETS, ConfigError, load_config, load_preset
from .simulator import generate_run
from .tags import read_tags, write_tags, write_truth
from .timesync import NoLock, SyncConfig, pair_coincidences, track_drift, write_coincidence_csv, write_drift_csv

EXIT_OK, EXIT_USAGE, EXIT_NOLOCK, EXIT_CUTOFF = 0, 2, 3, 4

CURVE_HEADER = "attenuation_db,coincidence_rate_per_s,qber,secure_rate_bits_per_s"

# named scenario overrides: flag -> config field
OVERRIDES = {
    "alice_arm_db": float,
    "bob_arm_db": float,
    "v_sys": float,
    "link_visibility": float,
    "coincidence_window_ns": float,
    "alice_dark_rate_hz": float,
    "bob_dark_rate_hz": float,
    "error_correction_factor": float,
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _opt(args, name, default=None):
    v = getattr(args, name, None)
    return default if v is None else v


def _scenario(args, name=None):
    """Scenario from --config, else the named preset, with overrides applied."""
    try:
        cfg_path = _opt(args, "config")
        cfg = load_config(cfg_path) if cfg_path else load_preset(name or _opt(args, "scenario", "at-alice"))
        changes = {k: getattr(args, k) for k in OVERRIDES if getattr(args, k, None) is not None}
        for item in _opt(args, "set", []):
            if "=" not in item:
                raise UsageError(f"--set expects key=value, got {item!r}")
            k, v = (s.strip() for s in item.split("=", 1))
            changes[k] = type(cfg).parse_field(k, v)
        if _opt(args, "seed") is not None:
            changes["seed"] = int(args.seed)
        return cfg.replace(**changes) if changes else cfg
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(outdir, command, extra, files):
    manifest = {
        "command": command,
        "entqkd_version": __version__,
        "kernel_backend": backend(),
        **extra,
        "outputs": {Path(f).name: _sha256(f) for f in files},
    }
    path = Path(outdir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _outdir(args, default):
    d = Path(_opt(args, "out", default))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_pair(paths):
    if len(paths) == 1:
        d = Path(paths[0])
        paths = [d / "alice.qtt", d / "bob.qtt"]
    if len(paths) != 2:
        raise UsageError("expected a run directory or two tag files (alice, bob)")
    try:
        return read_tags(paths[0]), read_tags(paths[1])
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _parse_range(text):
    try:
        lo, hi = (float(x) for x in text.split(":"))
    except ValueError:
        raise UsageError(f"--range expects start:stop, got {text!r}") from None
    if hi < lo:
        raise UsageError(f"empty range {text!r}")
    return lo, hi


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

PREDICT_COLUMNS = ("scenario", "placement", "attenuation_db", "coincidence_rate_per_s",
                   "accidental_rate_per_s", "v_acc", "v_tot", "qber", "f",
                   "sifted_rate_bits_per_s", "secure_rate_bits_per_s", "reference_secure_rate_bits_per_s")


def cmd_predict(args, out=sys.stdout):
    names = args.scenario or ["at-alice"]
    if names == ["all"]:
        names = list(PRESETS)
    rows = []
    for name in names:
        cfg = _scenario(args, name)
        p = predict_scenario(cfg)
        ref = cfg.reference_secure_rate_bits_per_s
        rows.append([cfg.name, cfg.placement.value, f"{cfg.total_db:g}", f"{p.coincidence_rate:.6g}",
                     f"{p.accidental_rate:.6g}", f"{p.visibility.v_acc:.4f}", f"{p.visibility.v_tot:.4f}",
                     f"{p.qber:.4f}", f"{p.f:.3f}", f"{p.sifted_rate:.6g}", f"{p.secure_rate:.6g}",
                     "" if ref is None else f"{ref:g}"])
    text = ",".join(PREDICT_COLUMNS) + "\n" + "".join(",".join(r) + "\n" for r in rows)
    if _opt(args, "out"):
        Path(args.out).write_text(text)
    else:
        out.write(text)
    return EXIT_OK


def _curve_text(placement, rng, step, fixed_alice_db, args):
    cfg = _scenario(args, _preset_for(placement))
    points = rate_vs_attenuation_curve(placement, rng, step, cfg.source_detector_params(), fixed_alice_db)
    lines = [CURVE_HEADER]
    for att, p in points:
        lines.append(f"{att:.6g},{p.coincidence_rate:.6g},{p.qber:.6g},{p.secure_rate:.6g}")
    return "\n".join(lines) + "\n"


def _preset_for(placement):
    return {Placement.AT_ALICE: "at-alice", Placement.ASYMMETRIC: "asymmetric",
            Placement.MIDDLE: "middle"}[Placement(placement)]


def cmd_curve(args, out=sys.stdout):
    rng = _parse_range(args.range)
    if not args.step > 0:
        raise UsageError("--step must be positive")
    placements = list(Placement) if args.all else [Placement(args.placement)]
    try:
        texts = {p: _curve_text(p, rng, args.step, args.fixed_alice_db, args) for p in placements}
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    target = _opt(args, "out")
    if args.all:
        d = Path(target or ".")
        d.mkdir(parents=True, exist_ok=True)
        for p, text in texts.items():
            (d / f"curve_{p.value}.csv").write_text(text)
    elif target:
        Path(target).write_text(texts[placements[0]])
    else:
        out.write(texts[placements[0]])
    return EXIT_OK


def cmd_simulate(args, out=sys.stdout):
    cfg = _scenario(args)
    duration = cfg.duration_s if args.duration is None else args.duration
    if not duration > 0:
        raise UsageError("--duration must be positive")
    cfg = cfg.replace(duration_s=duration)
    d = _outdir(args, f"run-{cfg.name}")
    run = generate_run(cfg)
    files = [write_tags(d / "alice.qtt", run.alice), write_tags(d / "bob.qtt", run.bob),
             write_truth(d / "truth.csv", run.truth.pair_id, run.truth.alice_index, run.truth.bob_index)]
    cfg.save(d / "scenario.cfg")
    files.append(d / "scenario.cfg")
    man = {k: v for k, v in run.manifest.items() if k != "kernel_backend"}
    _write_manifest(d, "simulate", man, files)
    out.write(f"{len(run.alice)} alice tags, {len(run.bob)} bob tags, {len(run.truth)} true pairs -> {d}\n")
    return EXIT_OK


def _sync_config(args):
    kw = {"block_length_s": args.block_s}
    if args.bin_ns is not None:
        kw["bin_ns"] = args.bin_ns
    if args.initial_offset_ns is not None:
        kw["initial_offset_ns"] = args.initial_offset_ns
    if not args.block_s > 0:
        raise UsageError("--block-s must be positive")
    return SyncConfig(**kw)


def _window_ns(args):
    if args.window_ns is not None:
        return args.window_ns
    if _opt(args, "config") or _opt(args, "scenario"):
        return _scenario(args).coincidence_window_ns
    return 1.5


def cmd_sync(args, out=sys.stdout):
    a, b = _load_pair(args.files)
    scfg = _sync_config(args)
    track = track_drift(a, b, cfg=scfg)
    if not track.locked.any():
        sys.stderr.write(f"no lock in any of {track.delta_t_ns.size} blocks; "
                         f"best significance {track.significance.max():.3g}\n")
        return EXIT_NOLOCK
    cs = pair_coincidences(a, b, track, _window_ns(args))
    d = _outdir(args, "sync")
    files = [d / "drift.csv", d / "coincidences.csv"]
    write_drift_csv(files[0], track)
    write_coincidence_csv(files[1], cs)
    _write_manifest(d, "sync", {"block_length_s": scfg.block_length_s, "window_ns": cs.window_ns,
                                "inputs": [str(x) for x in args.files]}, files)
    out.write(f"{int(track.locked.sum())}/{track.locked.size} blocks locked, {len(cs)} coincidences -> {d}\n")
    return EXIT_OK


def cmd_distill(args, out=sys.stdout):
    a, b = _load_pair(args.files)
    seed = int(_opt(args, "seed", 0))
    if not 0 < args.sample_fraction <= 1:
        raise UsageError("--sample-fraction must lie in (0, 1]")
    f = None
    if _opt(args, "config") or _opt(args, "scenario"):
        f = _scenario(args).error_correction_factor
    pcfg = ProtocolConfig(window_ns=_window_ns(args), sample_fraction=args.sample_fraction,
                          error_correction_factor=f, rate_bin_s=args.rate_bin_s, seed=seed)
    d = _outdir(args, "distill")
    try:
        res = run_distillation(a, b, _sync_config(args), pcfg)
    except AboveCutoff as exc:
        if exc.key_material is not None:
            (d / "report.txt").write_text(exc.key_material.to_text() + "status = above-cutoff\n")
        if exc.rate_series is not None:
            write_rate_csv(d / "sifted_rate.csv", *exc.rate_series)
        sys.stderr.write(f"{exc}\n")
        return EXIT_CUTOFF
    except NoLock as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_NOLOCK
    km = res.key_material
    files = [d / "report.txt", d / "sifted_rate.csv", d / "transcript.bin",
             d / "alice_secure.key", d / "bob_secure.key"]
    files[0].write_text(km.to_text() + "status = ok\n")
    write_rate_csv(files[1], res.rate_times_s, res.sifted_rate)
    res.channel.save(files[2])
    files[3].write_bytes(np.packbits(res.alice_key).tobytes())
    files[4].write_bytes(np.packbits(res.bob_key).tobytes())
    _write_manifest(d, "distill", {"seed": seed, "window_ns": pcfg.window_ns,
                                   "sample_fraction": pcfg.sample_fraction,
                                   "block_length_s": args.block_s,
                                   "keys_identical": bool(np.array_equal(res.alice_key, res.bob_key)),
                                   "inputs": [str(x) for x in args.files]}, files)
    out.write(km.to_text())
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_overrides(p):
    for name, typ in OVERRIDES.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None,
                       help=argparse.SUPPRESS if name not in ("alice_arm_db", "bob_arm_db") else f"override {name}")
    p.add_argument("--set", action="append", default=None, metavar="KEY=VALUE",
                   help="override any scenario key")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory")
    common.add_argument("--config", default=argparse.SUPPRESS, help="scenario file (overrides --scenario)")

    parser = argparse.ArgumentParser(prog="entqkd", parents=[common],
                                     description="Entanglement-based QKD laboratory.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("predict", parents=[common], help="analytic rate prediction for presets")
    p.add_argument("--scenario", nargs="+", default=None, help="preset name(s), or 'all'")
    _add_overrides(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("curve", parents=[common], help="secure rate against total attenuation")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--placement", choices=[x.value for x in Placement], default="at-alice")
    g.add_argument("--all", action="store_true", help="all three placements (one CSV each)")
    p.add_argument("--range", default="0:80", help="start:stop in dB (inclusive)")
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--fixed-alice-db", type=float, default=None,
                   help="Alice-arm loss for the asymmetric placements "
                        f"(defaults {', '.join(f'{k.value} {v:g}' for k, v in DEFAULT_FIXED_ALICE_DB.items())})")
    _add_overrides(p)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("simulate", parents=[common], help="event-level Monte Carlo run")
    p.add_argument("--scenario", default=None)
    p.add_argument("--duration", type=float, default=None, help="seconds (default: from scenario)")
    _add_overrides(p)
    p.set_defaults(func=cmd_simulate)

    for name, func, helptext in (("sync", cmd_sync, "clock offset tracking and coincidences"),
                                 ("distill", cmd_distill, "full key distillation")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("files", nargs="+", help="run directory, or alice and bob tag files")
        p.add_argument("--scenario", default=None, help="preset supplying the coincidence window")
        p.add_argument("--block-s", type=float, default=5.0)
        p.add_argument("--bin-ns", type=float, default=None)
        p.add_argument("--initial-offset-ns", type=float, default=None)
        p.add_argument("--window-ns", type=float, default=None)
        if name == "distill":
            p.add_argument("--sample-fraction", type=float, default=0.1)
            p.add_argument("--rate-bin-s", type=float, default=0.2)
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"entqkd: error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
