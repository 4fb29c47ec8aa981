"""
STiBPALM Benchmark Harness - Command Line Entry Point
Runs solver experiments, checks step-size conditions and estimator properties,
and generates or converts benchmark data.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from core import ConfigError, STiBPALMError
from dataset_generator import DatasetGenerator
from diagnostics import MIN_SEEDS, MseTrace, check_mse_bound, fit_decay_rate, frozen_iterate_trace
from estimators import EstimatorKind, SagaMode, batch_size_from_fraction, vr_constants
from matrix_io import load_matrix, save_matrix
from reporter import emit_report
from runner import ExperimentConfig, build_problem, run_experiment, validate_experiment
from src.config import Config

logger = logging.getLogger("stibpalm")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUN = 2

# frozen-iterate battery: steps per seed, and leading steps whose displacements are nonzero
BATTERY_STEPS = 200
BATTERY_WARMUP = 3


class UsageParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = UsageParser(prog="stibpalm", description="Stochastic inertial Bregman PALM benchmark harness")
    parser.add_argument("--log-level", default=Config.LOG_LEVEL, help="Logging level (DEBUG, INFO, ...)")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=UsageParser)

    run = sub.add_parser("run", help="Run an experiment config and write the report")
    run.add_argument("config", help="Experiment config (JSON)")
    run.add_argument("--out", help="Output directory (overrides the config)")
    run.add_argument("--workers", type=int, help="Worker threads (overrides the config)")
    run.add_argument("--strict", action="store_true", default=None, help="Reject unknown keys and step-size violations")
    run.add_argument("--no-html", action="store_true", help="Skip the plotly HTML curves")
    run.add_argument("--linear-y", action="store_true", help="Linear objective axis in the plots")

    validate = sub.add_parser("validate", help="Check the config schema and the step-size condition")
    validate.add_argument("config")
    validate.add_argument("--strict", action="store_true", default=None)

    check = sub.add_parser("check-estimators", help="Frozen-iterate variance-reduction battery")
    check.add_argument("config")
    check.add_argument("--steps", type=int, default=BATTERY_STEPS)
    check.add_argument("--strict", action="store_true", default=None)

    synth = sub.add_parser("gen-synthetic", help="Planted sparse nonnegative factorization")
    synth.add_argument("--rows", type=int, required=True)
    synth.add_argument("--cols", type=int, required=True)
    synth.add_argument("--rank", type=int, required=True)
    synth.add_argument("--sparsity", type=float, default=Config.SPARSITY, help="Fraction of nonzeros per column of X")
    synth.add_argument("--noise", type=float, default=0.0, help="Gaussian noise standard deviation")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, help="Output matrix (.csv or .bin)")

    blur = sub.add_parser("gen-blur", help="Blurred synthetic image with its ground truth")
    blur.add_argument("--size", type=int, default=64)
    blur.add_argument("--kernel", choices=("motion", "disk"), default="motion")
    blur.add_argument("--kernel-size", type=int, default=9)
    blur.add_argument("--angle", type=float, default=45.0, help="Motion direction in degrees")
    blur.add_argument("--noise", type=float, default=0.0)
    blur.add_argument("--seed", type=int, default=0)
    blur.add_argument("--out", required=True, help="Output image (.pgm, .csv or .bin)")

    convert = sub.add_parser("convert", help="Convert between csv, bin (MTXB) and pgm")
    convert.add_argument("source")
    convert.add_argument("target")
    convert.add_argument("--from", dest="src_fmt", choices=("csv", "bin", "pgm"))
    convert.add_argument("--to", dest="dst_fmt", choices=("csv", "bin", "pgm"))
    return parser


# ----- Commands -----

def cmd_run(args) -> int:
    experiment = ExperimentConfig.from_file(args.config, strict=args.strict)
    if args.out or args.workers:
        data = experiment.to_dict()
        if args.out:
            data["output_dir"] = args.out
        if args.workers:
            data["workers"] = args.workers
        experiment = ExperimentConfig.from_dict(data, strict=experiment.strict)
    problem = build_problem(experiment.problem)
    if experiment.strict:
        for name, verdict in validate_experiment(experiment, problem).items():
            if verdict is not None and not verdict.satisfied:
                raise ConfigError(f"{name}: step-size condition violated ({verdict.describe()})")

    print(f"🚀 Running {len(experiment.algorithms)} algorithm(s) x {len(experiment.seeds)} seed(s) "
          f"on {experiment.problem['kind']} (n={problem.n})")
    metrics = run_experiment(experiment, problem)
    written = emit_report(metrics, experiment.output_dir, log_y=not args.linear_y, html=not args.no_html)

    for run in metrics.runs:
        if run.status == "failed":
            print(f"❌ {run.run_id}: {run.error}")
        elif run.flagged:
            print(f"⚠️ {run.run_id}: final objective {run.final_objective:.6g} ({run.stepsize})")
        else:
            print(f"✅ {run.run_id}: final objective {run.final_objective:.6g}")
    print(f"📊 Report written to {Path(written['metrics']).parent}")
    return EXIT_RUN if metrics.failures else EXIT_OK


def cmd_validate(args) -> int:
    experiment = ExperimentConfig.from_file(args.config, strict=args.strict)
    problem = build_problem(experiment.problem)
    print(f"✅ Config valid: {experiment.name} ({experiment.problem['kind']}, n={problem.n})")
    violated = False
    for name, verdict in validate_experiment(experiment, problem).items():
        if verdict is None:
            print(f"⚠️ {name}: not variance-reduced, no step-size condition applies")
        elif verdict.satisfied:
            print(f"✅ {name}: {verdict.describe()}")
        else:
            violated = True
            print(f"⚠️ {name}: {verdict.describe()}")
    if violated and experiment.strict:
        return EXIT_CONFIG
    return EXIT_OK


def _battery_seeds(seeds: Sequence[int]) -> list:
    seeds = list(dict.fromkeys(seeds))
    extra = max(seeds) + 1
    while len(seeds) < MIN_SEEDS:
        seeds.append(extra)
        extra += 1
    return seeds


def cmd_check_estimators(args) -> int:
    experiment = ExperimentConfig.from_file(args.config, strict=args.strict)
    problem = build_problem(experiment.problem)
    b = batch_size_from_fraction(problem.n, experiment.batch_fraction)
    refresh_prob = float(experiment.solver.get("refresh_prob", Config.REFRESH_PROB))
    seeds = _battery_seeds(experiment.seeds)
    if args.steps < BATTERY_WARMUP + 20:
        raise ConfigError(f"--steps must be at least {BATTERY_WARMUP + 20}")

    results = {}
    passed = True
    for kind in (EstimatorKind.SAGA, EstimatorKind.SARAH):
        traces, upsilons, first_refresh_zero = [], [], True
        for seed in seeds:
            rng = np.random.default_rng(seed)
            z_start = problem.initial_point(rng)
            z_fixed = problem.initial_point(rng)
            trace = frozen_iterate_trace(problem, kind, z_start, z_fixed, b, args.steps, seed,
                                         saga_mode=SagaMode.LITERAL, refresh_prob=refresh_prob)
            w = BATTERY_WARMUP
            traces.append(MseTrace(trace.sq_error[w:], trace.upsilon_bound[w:], np.zeros(args.steps - w)))
            upsilons.append(trace.upsilon[w:])
            if kind is EstimatorKind.SARAH:
                hits = np.flatnonzero(trace.refreshed[1:]) + 1
                if hits.size and trace.upsilon[hits[0]] != 0.0:
                    first_refresh_zero = False
        lipschitz = problem.lipschitz_hint(problem.initial_point(np.random.default_rng(seeds[0])))
        vr = vr_constants(kind, lipschitz.N, 0.0, 0.0, b, problem.n, 1.0 / refresh_prob)
        report = check_mse_bound(traces, vr, seed=seeds[0])
        decay = fit_decay_rate(upsilons)
        ok = report.conforming and (kind is not EstimatorKind.SARAH or first_refresh_zero)
        passed = passed and ok
        results[kind.label] = {**report.to_dict(), "decay_rate": decay, "rho": vr.rho}
        marker = "✅" if ok else "❌"
        print(f"{marker} {kind.label}: violation rate {report.violation_rate:.3f}, "
              f"fitted decay {decay:.4g} (rho {vr.rho:.4g})")
        if kind is EstimatorKind.SARAH and not first_refresh_zero:
            print("❌ SARAH: Upsilon nonzero after a full refresh")

    out = Path(experiment.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "estimator_checks.json").write_text(json.dumps(results, indent=2) + "\n")
    return EXIT_OK if passed else EXIT_RUN


def cmd_gen_synthetic(args) -> int:
    paths = DatasetGenerator(args.seed).generate_snmf_dataset(
        args.out, args.rows, args.cols, args.rank, args.sparsity, args.noise)
    print(f"✅ Synthetic S-NMF data written: {', '.join(paths.values())}")
    return EXIT_OK


def cmd_gen_blur(args) -> int:
    paths = DatasetGenerator(args.seed).generate_blur_dataset(
        args.out, args.size, args.kernel, args.kernel_size, args.noise, args.angle)
    print(f"✅ Blurred image written: {', '.join(paths.values())}")
    return EXIT_OK


def cmd_convert(args) -> int:
    matrix = load_matrix(args.source, args.src_fmt)
    save_matrix(args.target, matrix, args.dst_fmt)
    print(f"✅ Converted {args.source} -> {args.target} ({matrix.shape[0]}x{matrix.shape[1]})")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "validate": cmd_validate,
    "check-estimators": cmd_check_estimators,
    "gen-synthetic": cmd_gen_synthetic,
    "gen-blur": cmd_gen_blur,
    "convert": cmd_convert,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format=Config.LOG_FORMAT)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except STiBPALMError as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_RUN
    except OSError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
