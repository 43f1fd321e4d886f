"""Command-line interface.

Subcommands: trajectory, ensemble, master-equation, replay, validate-config.
Standard output carries data or resolved settings; progress and telemetry go
to stderr.  Exit codes: 0 success, 1 configuration error (including unknown
flags), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from . import config as cfgmod
from . import reports
from .dynamics import (
    dt_guard_report,
    simulate_counting_trajectory,
    simulate_homodyne_trajectory,
    solve_master_equation,
)
from .ensemble import run_ensemble, run_trajectory
from .errors import ConfigError, PulseProbeError
from .inference import run_filter
from .records import MeasurementRecord


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on unknown flags/subcommands."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="pulseprobe", description="Quantum-pulse scattering simulator and Bayesian readout")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, out_required=True):
        p.add_argument("--config", required=True, help="flat key-value config file")
        if out_required:
            p.add_argument("--out", required=True, help="output CSV path")
            p.add_argument("--figure", action="store_true", help="also render a PNG next to the CSV")

    p = sub.add_parser("trajectory", help="single stochastic run: record plus posterior CSV")
    common(p)
    p.add_argument("--seed", type=int, default=None, help="override master_seed")
    p.add_argument("--validate-every", type=int, default=None, help="positivity check cadence")

    p = sub.add_parser("ensemble", help="seeded Monte Carlo ensemble of trajectories and filters")
    common(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trajectories", type=int, default=None, help="override n_trajectories")
    p.add_argument("--threads", type=int, default=None, help="worker processes (default: cpu count)")
    p.add_argument("--validate-every", type=int, default=None)

    p = sub.add_parser("master-equation", help="deterministic observables CSV")
    common(p)
    p.add_argument("--validate-every", type=int, default=None)

    p = sub.add_parser("replay", help="re-filter a stored record under the config's hypotheses")
    common(p)
    p.add_argument("--record", required=True, help="measurement record file")

    p = sub.add_parser("validate-config", help="check invariants and print resolved defaults")
    p.add_argument("--config", required=True)
    return parser


def _load(args):
    pairs = cfgmod.load_config_file(args.config)
    model = cfgmod.resolve_model(pairs)
    if getattr(args, "validate_every", None) is not None:
        model = model.replace(validate_every=args.validate_every)
    spec = cfgmod.resolve_ensemble(pairs, model)
    return pairs, model, spec


def _record_path(out_path: str) -> str:
    stem = out_path.rsplit(".", 1)[0] if "." in os.path.basename(out_path) else out_path
    return stem + ".record"


def _cmd_trajectory(args) -> int:
    pairs, model, spec = _load(args)
    seed = args.seed if args.seed is not None else cfgmod.master_seed_from(pairs)
    record_path = _record_path(args.out)
    if spec is not None:
        spec = dataclasses.replace(spec, master_seed=seed, config_hash=cfgmod.config_hash_for(model, spec))
        outcome = run_trajectory(spec, 0)
        outcome.record.save(record_path)
        extra = {"record_seed": outcome.record.seed, "record_stream_index": outcome.record.stream_index}
        reports.write_posterior_csv(
            args.out, outcome.times, outcome.labels, outcome.posteriors,
            outcome.error_probabilities, model, spec, extra,
        )
        if args.figure:
            reports.render_outcome_figure(reports.figure_path(args.out), outcome)
        print(f"trajectory 0: truth={outcome.truth_label} record={record_path}", file=sys.stderr)
    else:
        if model.detection.scheme == "counting":
            traj = simulate_counting_trajectory(model, seed)
        else:
            traj = simulate_homodyne_trajectory(model, seed)
        traj.record.save(record_path)
        reports.write_observables_csv(args.out, traj, model)
        if args.figure:
            reports.render_trajectory_figure(reports.figure_path(args.out), traj, traj.record)
        print(f"trajectory: seed={seed} record={record_path}", file=sys.stderr)
    return 0


def _cmd_ensemble(args) -> int:
    pairs, model, spec = _load(args)
    if spec is None:
        raise ConfigError("ensemble requires hypotheses in the config")
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.trajectories is not None:
        changes["n_trajectories"] = args.trajectories
    if changes:
        spec = dataclasses.replace(spec, **changes)
        spec = dataclasses.replace(spec, config_hash=cfgmod.config_hash_for(model, spec))
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)

    def progress(done, total):
        print(f"ensemble: {done}/{total} trajectories", file=sys.stderr)

    result = run_ensemble(spec, threads=threads, progress=progress)
    reports.write_ensemble_csv(args.out, result, spec)
    if result.final_posteriors is not None:
        stem = args.out.rsplit(".", 1)[0] if "." in os.path.basename(args.out) else args.out
        reports.write_final_posteriors_csv(stem + "_finals.csv", result, spec)
    if result.records is not None:
        stem = args.out.rsplit(".", 1)[0] if "." in os.path.basename(args.out) else args.out
        rec_dir = stem + "_records"
        os.makedirs(rec_dir, exist_ok=True)
        for record in result.records:
            record.save(os.path.join(rec_dir, f"traj_{record.stream_index:05d}.record"))
    if args.figure:
        reports.render_ensemble_figure(reports.figure_path(args.out), result)
    print(
        f"ensemble: n={result.n_trajectories} final mean Q_e={result.mean_error[-1]:.6f} "
        f"(se {result.se_error[-1]:.2e}) wall={result.metadata['wall_time_s']:.1f}s",
        file=sys.stderr,
    )
    return 0


def _cmd_master_equation(args) -> int:
    _, model, _ = _load(args)
    result = solve_master_equation(model)
    reports.write_master_equation_csv(args.out, result, model)
    if args.figure:
        reports.render_master_equation_figure(reports.figure_path(args.out), result)
    print(
        f"master-equation: final photons={result.cavity_photons[-1]:.3e} "
        f"integrated flux={result.flux_integral[-1]:.6f}",
        file=sys.stderr,
    )
    return 0


def _cmd_replay(args) -> int:
    pairs, model, spec = _load(args)
    if spec is None:
        raise ConfigError("replay requires hypotheses in the config")
    record = MeasurementRecord.load(args.record)
    run = run_filter(model, spec.hypotheses, record)
    extra = {"record_seed": record.seed, "record_stream_index": record.stream_index}
    reports.write_posterior_csv(
        args.out, run.times, run.labels, run.posteriors, run.error_probabilities, model, spec, extra
    )
    if args.figure:
        reports.render_filter_figure(reports.figure_path(args.out), run, record)
    return 0


def _cmd_validate_config(args) -> int:
    pairs = cfgmod.load_config_file(args.config)
    model = cfgmod.resolve_model(pairs)
    spec = cfgmod.resolve_ensemble(pairs, model)
    for key, value in cfgmod.resolved_items(model, spec):
        print(f"{key} = {value}")
    print(f"config_hash = {cfgmod.config_hash_for(model, spec)}")
    report = dt_guard_report(model)
    print(f"max_step_probability = {report['max_step_probability']:.6g}")
    if not report["ok"]:
        print(
            f"error: max <L0'L0> dt = {report['max_step_probability']:.3g} exceeds {report['bound']}; "
            f"suggested dt <= {report['suggested_dt']:.3e}",
            file=sys.stderr,
        )
        return 1
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    handlers = {
        "trajectory": _cmd_trajectory,
        "ensemble": _cmd_ensemble,
        "master-equation": _cmd_master_equation,
        "replay": _cmd_replay,
        "validate-config": _cmd_validate_config,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except PulseProbeError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
