"""Command-line interface: ``qkdsim <subcommand> ...``.

Exit status: 0 success, 1 other failure, 2 configuration or input error,
3 no key or aborted reconciliation, 4 synchronization failure.
"""
from __future__ import annotations

import argparse
import io
import json
import math
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .config import ScenarioConfig, build_link, load_config, parse_config, validate_config
from .core import BasisStats, DeviationBound, PhaseErrorMode
from .errors import (
    ConfigError,
    ConventionError,
    CoverageError,
    DomainError,
    FormatError,
    NoKeyError,
    PipelineError,
    QKDSimError,
    ReconciliationAbort,
    SyncError,
)
from .tags import atomic_write_bytes

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NO_KEY = 3
EXIT_SYNC = 4

MODES = [m.value for m in PhaseErrorMode]
BOUNDS = [b.value for b in DeviationBound]


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _emit(path, text: str):
    """Write ``text`` atomically to ``path``, or to stdout for ``None``/``-``."""
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        atomic_write_bytes(path, text.encode())


def _csv_text(writer, *args) -> str:
    buf = io.StringIO(newline="")
    writer(buf, *args)
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _scenario(args) -> ScenarioConfig:
    """Config file (if any) with command-line overrides applied."""
    data = {}
    if getattr(args, "config", None):
        data = load_config(args.config).model_dump(by_alias=True, exclude_none=True)
    if getattr(args, "preset", None):
        data["preset"] = args.preset
    if not data:
        data = {"preset": "terrestrial"}
    if getattr(args, "loss_db", None) is not None:
        data["total_loss_db"] = args.loss_db
    if getattr(args, "mu", None) is not None:
        data.setdefault("source", {})["mu"] = args.mu
        data["source"].pop("pair_rate", None)
    protocol = data.setdefault("protocol", {})
    if getattr(args, "mode", None):
        protocol["phase_error_mode"] = args.mode
    if getattr(args, "bound", None):
        protocol["deviation_bound"] = args.bound
    if getattr(args, "window", None) is not None:
        protocol["coincidence_window"] = args.window
    return parse_config(data)


def _add_scenario_flags(p, loss=True):
    p.add_argument("--config", help="scenario JSON file")
    p.add_argument("--preset", choices=["terrestrial", "micius", "snspd"],
                   help="base parameter set (default terrestrial when no config is given)")
    if loss:
        p.add_argument("--loss-db", type=float, help="total link loss in dB")
    p.add_argument("--mu", type=float, help="pair rate per coincidence window")


def _add_protocol_flags(p):
    p.add_argument("--mode", choices=MODES, help="phase-error mode")
    p.add_argument("--bound", choices=BOUNDS, help="deviation bound for the *_with_deviation modes")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_analyze(args) -> int:
    from .keyproc import analyze

    with open(args.stats, encoding="utf-8") as fh:
        raw = json.load(fh)
    fields = ("n_sift_z", "n_sift_x", "qber_z", "qber_x", "duration")
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError([(k, "unknown key") for k in unknown])
    try:
        stats = BasisStats(**{k: raw[k] for k in fields if k in raw})
    except TypeError as exc:
        raise ConfigError([("<stats>", str(exc))]) from None
    cfg = _scenario(args)
    protocol = build_link(cfg).protocol
    if args.f is not None or args.eps is not None:
        protocol = replace(protocol, ec_efficiency=args.f or protocol.ec_efficiency,
                           phase_error_failure_prob=args.eps or protocol.phase_error_failure_prob)
    if cfg.protocol.phase_error_mode is None:
        # measured statistics get the finite-sample correction by default
        protocol = protocol.with_mode(PhaseErrorMode.CROSS_BASIS_WITH_DEVIATION)
    report = analyze(stats, protocol)
    _emit(args.out, report.to_json())
    return EXIT_NO_KEY if report.aborted else EXIT_OK


def cmd_model(args) -> int:
    from .link import sweep, write_sweep_csv

    cfg = _scenario(args)
    link = build_link(cfg)
    sweep_cfg = cfg.sweep
    variable = args.sweep or (sweep_cfg.variable if sweep_cfg else None)
    if variable is None:
        raise ConfigError([("sweep", "give --sweep or a 'sweep' config section")])
    if variable == "loss":
        variable = "loss_db_total"
    start = args.start if args.start is not None else (sweep_cfg.start if sweep_cfg else None)
    stop = args.stop if args.stop is not None else (sweep_cfg.stop if sweep_cfg else None)
    if start is None or stop is None:
        if variable == "mu":
            start, stop = 1e-4, 0.5
        else:
            raise ConfigError([("sweep.start", "loss sweeps need --start and --stop")])
    num = args.num or (sweep_cfg.num if sweep_cfg else 64)
    linear = args.linear or (sweep_cfg is not None and not sweep_cfg.log)
    if not (start > 0 and stop > start) and num > 1:
        raise ConfigError([("sweep", "need 0 < start < stop")])
    grid = np.linspace(start, stop, num) if linear else np.geomspace(start, stop, num)
    _emit(args.out, _csv_text(write_sweep_csv, variable, sweep(link, variable, grid)))
    return EXIT_OK


def _parse_grid(text: str) -> list[float]:
    """``"40,44,47"`` or inclusive ``"start:stop:step"``."""
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            if not step > 0 or stop < start:
                raise ValueError
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [start + k * step for k in range(n)]
        grid = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError([("--loss-grid", f"expected 'a,b,c' or 'start:stop:step', got {text!r}")]) from None
    if not grid:
        raise ConfigError([("--loss-grid", "empty grid")])
    return grid


def cmd_optimize(args) -> int:
    from .optimize import optimize_pair_rate, optimum_vs_loss, write_optimum_csv

    cfg = _scenario(args)
    link = build_link(cfg)
    bounds = (args.mu_min or cfg.optimize.mu_min, args.mu_max or cfg.optimize.mu_max)
    grid = None
    if args.loss_grid:
        grid = _parse_grid(args.loss_grid)
    elif cfg.optimize.loss_db:
        grid = cfg.optimize.loss_db
    if grid:
        series = optimum_vs_loss(link, grid, bounds)
        _emit(args.out, _csv_text(write_optimum_csv, series))
        return EXIT_NO_KEY if all(o is None for _, o in series) else EXIT_OK
    opt = optimize_pair_rate(link, bounds)
    _emit(args.out, _json(opt.to_dict()))
    return EXIT_OK


def _pass_profile(cfg: ScenarioConfig, args):
    from .satpass import (
        constant_profile,
        elevation_profile,
        load_noise_profile,
        load_pass_profile,
        triangular_profile,
    )

    pc = cfg.pass_
    bw = args.bin_width or (pc.bin_width_s if pc else 1.0)
    profile_csv = args.profile or (pc.profile_csv if pc else None)
    template = pc.template if pc else None
    if args.template:
        if args.duration_s is None:
            raise ConfigError([("pass.template.duration_s", "--template needs --duration-s")])
        kind, dur = args.template, args.duration_s
        lo, hi = args.low_db, args.high_db
    elif template is not None and profile_csv is None:
        kind, dur = template.kind, template.duration_s
        lo = template.loss_db if kind == "constant" else (template.edge_db if kind == "triangular" else template.min_db)
        hi = template.peak_db if kind == "triangular" else template.max_db
    else:
        kind = None
    if profile_csv:
        profile = load_pass_profile(profile_csv, bw)
    elif kind == "constant":
        if lo is None:
            raise ConfigError([("pass.template.loss_db", "constant template needs a loss")])
        profile = constant_profile(lo, dur, bw)
    elif kind in ("triangular", "elevation"):
        if lo is None or hi is None:
            raise ConfigError([("pass.template", f"{kind} template needs low and high losses")])
        fn = triangular_profile if kind == "triangular" else elevation_profile
        profile = fn(lo, hi, dur, bw)
    else:
        raise ConfigError([("pass", "give --profile, --template or a 'pass' config section")])
    noise_csv = args.noise or (pc.noise_csv if pc else None)
    if noise_csv:
        summed = args.noise_summed or (pc.noise_detectors_summed if pc else False)
        profile = profile.with_noise(load_noise_profile(noise_csv, summed))
    return profile


def cmd_simulate(args) -> int:
    from .eventsim import Clocks, apply_pass_profile, synthesize
    from .tags import write_tags

    cfg = _scenario(args)
    link = build_link(cfg)
    duration = args.duration if args.duration is not None else cfg.simulate.duration_s
    seed = args.seed if args.seed is not None else cfg.simulate.seed
    clocks = Clocks(args.offset if args.offset is not None else cfg.clocks.offset_s,
                    args.drift if args.drift is not None else cfg.clocks.drift)
    if args.profile or args.template or cfg.scenario == "pass":
        profile = _pass_profile(cfg, args)
        a, b, truth = apply_pass_profile(link, profile, duration, seed, clocks)
    else:
        a, b, truth = synthesize(link, clocks, duration, seed)
    write_tags(args.out_a, a)
    write_tags(args.out_b, b)
    summary = {
        "duration_s": duration,
        "seed": seed,
        "clock_offset_s": clocks.offset,
        "clock_drift": clocks.drift,
        "n_tags_a": len(a),
        "n_tags_b": len(b),
        "n_pairs_both_detected": truth.n_pairs,
        "error_rate_truth": truth.error_rate(),
        "counts": {k: int(v) for k, v in sorted(truth.counts.items())},
    }
    _emit(args.summary, _json(summary))
    return EXIT_OK


def _read_pair(args):
    from .tags import read_tags

    return read_tags(args.tags_a, "A"), read_tags(args.tags_b, "B")


def cmd_sync(args) -> int:
    from .sync import (
        correlation_histogram,
        find_coincidences,
        recover_clock,
        write_histogram_csv,
        write_pairs_csv,
    )

    window = args.window
    if window is None:
        window = build_link(_scenario(args)).window if (args.config or args.preset) else 1e-9
    a, b = _read_pair(args)
    clock = recover_clock(a, b, segment_length=args.segment_length)
    pairs = find_coincidences(a, b, clock, window)
    if args.pairs_out:
        _emit(args.pairs_out, _csv_text(write_pairs_csv, pairs, a, b))
    if args.hist_out:
        hist = correlation_histogram(a, b, clock, args.hist_span, args.hist_bin)
        _emit(args.hist_out, _csv_text(write_histogram_csv, hist))
    out = clock.to_dict()
    out["n_pairs"] = len(pairs)
    out["window_s"] = window
    _emit(args.clock_out, _json(out))
    return EXIT_OK


def cmd_keygen(args) -> int:
    from .keyproc import DEFAULT_PIPELINE_PROTOCOL, DisclosedSample, OracleFull, full_pipeline

    cfg = _scenario(args) if (args.config or args.preset or args.mode or args.bound or args.window) else None
    if cfg is not None and (args.config or args.preset):
        protocol = build_link(cfg).protocol
    elif cfg is not None:
        p = cfg.protocol
        protocol = replace(
            DEFAULT_PIPELINE_PROTOCOL,
            coincidence_window=p.coincidence_window or DEFAULT_PIPELINE_PROTOCOL.coincidence_window,
            phase_error_mode=PhaseErrorMode(p.phase_error_mode or DEFAULT_PIPELINE_PROTOCOL.phase_error_mode),
            deviation_bound=DeviationBound(p.deviation_bound or DEFAULT_PIPELINE_PROTOCOL.deviation_bound),
        )
    else:
        protocol = DEFAULT_PIPELINE_PROTOCOL
    kg = cfg.keygen if cfg is not None else None
    mode_name = args.qber_mode or (kg.qber_mode if kg else "oracle")
    if mode_name == "sample":
        fraction = args.sample_fraction or (kg.sample_fraction if kg else 0.1)
        seed = args.sample_seed if args.sample_seed is not None else (kg.sample_seed if kg else 0)
        qber_mode = DisclosedSample(fraction, seed)
    else:
        qber_mode = OracleFull()
    pa_seed = args.pa_seed if args.pa_seed is not None else (kg.pa_seed if kg else 0)
    a, b = _read_pair(args)
    report = full_pipeline(a, b, protocol, qber_mode, pa_seed, duration=args.duration)
    _emit(args.out, report.to_json())
    return EXIT_NO_KEY if report.aborted else EXIT_OK


def cmd_pass(args) -> int:
    from .satpass import Fixed, TrackOptimum, pass_skr, write_pass_csv

    cfg = _scenario(args)
    link = build_link(cfg)
    profile = _pass_profile(cfg, args)
    pc = cfg.pass_
    policy_name = args.policy or (pc.policy if pc else "track")
    if policy_name == "fixed":
        mu = args.fixed_mu or (pc.mu if pc and pc.mu else None) or link.mu
        policy = Fixed(mu)
    else:
        policy = TrackOptimum((cfg.optimize.mu_min, cfg.optimize.mu_max))
    result = pass_skr(profile, link, policy)
    _emit(args.out, _csv_text(write_pass_csv, result))
    if args.report:
        d = result.to_dict()
        d["policy"] = policy_name
        _emit(args.report, _json(d))
    return EXIT_NO_KEY if result.total_bits <= 0 else EXIT_OK


def cmd_validate(args) -> int:
    diags = validate_config(args.config_file)
    if not diags:
        sys.stdout.write("ok\n")
        return EXIT_OK
    for path, msg in diags:
        sys.stderr.write(f"{args.config_file}: {path}: {msg}\n")
    return EXIT_CONFIG


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qkdsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="key report from basis statistics (JSON)")
    p.add_argument("stats", help="JSON with n_sift_z, n_sift_x, qber_z, qber_x, duration")
    _add_scenario_flags(p)
    _add_protocol_flags(p)
    p.add_argument("--f", type=float, help="error-correction efficiency")
    p.add_argument("--eps", type=float, help="phase-error failure probability")
    p.add_argument("--out", help="report JSON path (default stdout)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("model", help="analytic sweep over mu or total loss (CSV)")
    _add_scenario_flags(p)
    _add_protocol_flags(p)
    p.add_argument("--sweep", choices=["mu", "loss", "loss_db_total"], help="swept variable")
    p.add_argument("--start", type=float, help="first grid value")
    p.add_argument("--stop", type=float, help="last grid value")
    p.add_argument("--num", type=int, help="number of grid points (default 64)")
    p.add_argument("--linear", action="store_true", help="linear instead of logarithmic grid")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("optimize", help="optimal pair rate (JSON, or CSV over a loss grid)")
    _add_scenario_flags(p)
    _add_protocol_flags(p)
    p.add_argument("--loss-grid", help="total losses in dB: 'a,b,c' or 'start:stop:step'")
    p.add_argument("--mu-min", type=float, help="lower mu bound")
    p.add_argument("--mu-max", type=float, help="upper mu bound")
    p.add_argument("--out", help="output path (default stdout)")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("simulate", help="synthesize both parties' tag files")
    _add_scenario_flags(p)
    p.add_argument("--duration", type=float, help="seconds of data")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--offset", type=float, help="clock offset of B in seconds")
    p.add_argument("--drift", type=float, help="relative clock drift of B")
    p.add_argument("--out-a", required=True, help="tag file for A (.csv for CSV, binary otherwise)")
    p.add_argument("--out-b", required=True, help="tag file for B")
    p.add_argument("--summary", help="summary JSON path (default stdout)")
    _add_profile_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sync", help="recover the clock model and pair coincidences")
    p.add_argument("tags_a")
    p.add_argument("tags_b")
    p.add_argument("--config", help="scenario JSON (for the coincidence window)")
    p.add_argument("--preset", choices=["terrestrial", "micius", "snspd"], help="preset for the window")
    p.add_argument("--window", type=float, help="coincidence window in seconds (default 1e-9)")
    p.add_argument("--segment-length", type=float, default=1.0, help="drift segment length in seconds")
    p.add_argument("--clock-out", help="clock model JSON path (default stdout)")
    p.add_argument("--pairs-out", help="pair list CSV path")
    p.add_argument("--hist-out", help="correlation histogram CSV path")
    p.add_argument("--hist-span", type=float, default=20e-9, help="histogram span in seconds")
    p.add_argument("--hist-bin", type=float, default=156e-12, help="histogram bin in seconds")
    p.set_defaults(func=cmd_sync)

    p = sub.add_parser("keygen", help="full key pipeline on two tag files")
    p.add_argument("tags_a")
    p.add_argument("tags_b")
    p.add_argument("--config", help="scenario JSON (protocol and keygen sections)")
    p.add_argument("--preset", choices=["terrestrial", "micius", "snspd"], help="protocol preset")
    _add_protocol_flags(p)
    p.add_argument("--window", type=float, help="coincidence window in seconds")
    p.add_argument("--qber-mode", choices=["oracle", "sample"], help="QBER estimation mode")
    p.add_argument("--sample-fraction", type=float, help="disclosed fraction in sample mode")
    p.add_argument("--sample-seed", type=int, help="seed of the disclosed sample")
    p.add_argument("--pa-seed", type=int, help="seed of the hashing matrix")
    p.add_argument("--duration", type=float, help="acquisition time in seconds (default: from the tags)")
    p.add_argument("--out", help="report JSON path (default stdout)")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("pass", help="key over a satellite pass (per-bin CSV)")
    _add_scenario_flags(p, loss=False)
    _add_protocol_flags(p)
    _add_profile_flags(p)
    p.add_argument("--policy", choices=["fixed", "track"], help="pair-rate policy")
    p.add_argument("--fixed-mu", type=float, help="mu for the fixed policy")
    p.add_argument("--out", help="per-bin CSV path (default stdout)")
    p.add_argument("--report", help="totals JSON path")
    p.set_defaults(func=cmd_pass)

    p = sub.add_parser("validate", help="check a scenario config without running it")
    p.add_argument("config_file")
    p.set_defaults(func=cmd_validate)
    return parser


def _add_profile_flags(p):
    p.add_argument("--profile", help="pass profile CSV (t_s, loss_db[, background_cps])")
    p.add_argument("--template", choices=["constant", "triangular", "elevation"], help="profile template")
    p.add_argument("--duration-s", type=float, help="template duration in seconds")
    p.add_argument("--low-db", type=float, help="template loss at best conditions (or constant loss)")
    p.add_argument("--high-db", type=float, help="template loss at worst conditions")
    p.add_argument("--bin-width", type=float, help="profile bin width in seconds")
    p.add_argument("--noise", help="background CSV (t_s, counts_per_s)")
    p.add_argument("--noise-summed", action="store_true", help="noise CSV counts are summed over detectors")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, PipelineError):
        return exit_code_for(exc.cause)
    if isinstance(exc, SyncError):
        return EXIT_SYNC
    if isinstance(exc, (NoKeyError, ReconciliationAbort, ConventionError)):
        return EXIT_NO_KEY
    if isinstance(exc, (ConfigError, DomainError, FormatError, CoverageError)):
        return EXIT_CONFIG
    return EXIT_FAILURE


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for path, msg in exc.diagnostics:
            sys.stderr.write(f"config error: {path}: {msg}\n")
        return EXIT_CONFIG
    except QKDSimError as exc:
        sys.stderr.write(f"qkdsim {args.command}: {type(exc).__name__}: {exc}\n")
        return exit_code_for(exc)
    except (OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"qkdsim {args.command}: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
