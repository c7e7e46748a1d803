"""Command-line entry point wiring file I/O to the pipeline stages.

Exit codes: 0 ok, 2 input error, 3 exact-oracle size cap, 4 infeasible
instance.  All randomness flows from ``--seed``; the environment variable
``MATCH_ANNEAL_THREADS`` caps annealer worker parallelism.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, bench, instance as inst_mod, qubo, solvers
from .errors import (
    InfeasibleInstanceError,
    InputError,
    SizeCapError,
    UndefinedMetricError,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SIZE_CAP = 3
EXIT_INFEASIBLE = 4


def _schedule_from_args(args: argparse.Namespace) -> solvers.AnnealSchedule:
    return solvers.AnnealSchedule(
        beta_min=args.beta_min, beta_max=args.beta_max, num_sweeps=args.num_sweeps
    )


def _add_solver_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--beta-min", type=float, default=0.02)
    parser.add_argument("--beta-max", type=float, default=2.0)
    parser.add_argument("--num-sweeps", type=int, default=1000)
    parser.add_argument("--num-reads", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--post", choices=["none", "steepest"], default="none")


def _add_penalty_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--formulation", choices=["naive", "approx"], default="naive")
    parser.add_argument("--lambda", dest="lam", type=float, default=None,
                        help="penalty weight; naive default is 2*max_score + 1")
    parser.add_argument("--lambda1", type=float, default=None)
    parser.add_argument("--lambda2", type=float, default=None)


def cmd_score(args: argparse.Namespace) -> int:
    schema, users, supporters, matrix = inst_mod.load_instance_file(args.instance)
    if matrix is None:
        matrix = inst_mod.compatibility_matrix(users, supporters, schema)
    inst_mod.write_matrix_csv(args.out, matrix)
    scores = matrix.scores
    print(
        f"scored {len(users)} users x {len(supporters)} supporters: "
        f"min={scores.min():g} max={scores.max():g} mean={scores.mean():g}"
    )
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_filter(args: argparse.Namespace) -> int:
    schema, users, supporters, matrix = inst_mod.load_instance_file(args.instance)
    if matrix is None:
        matrix = inst_mod.compatibility_matrix(users, supporters, schema)
    filtered = inst_mod.feasible_pairs(matrix, users, supporters)
    inst_mod.write_matching_instance(args.out, filtered)
    if args.matrix_csv:
        inst_mod.write_matrix_csv(args.matrix_csv, matrix, instance=filtered)
    total = filtered.user_count * filtered.supporter_count
    print(
        f"retained {len(filtered.edges)} of {total} pairs "
        f"({100.0 * len(filtered.edges) / total:.1f}%)"
    )
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_build(args: argparse.Namespace) -> int:
    instance = bench.load_instance_input(args.instance)
    if args.formulation == "approx":
        lam = args.lam if args.lam is not None else qubo.default_penalty(instance)
        model = qubo.build_approx_qubo(instance, lam)
    else:
        fallback = args.lam if args.lam is not None else qubo.default_penalty(instance)
        lam1 = args.lambda1 if args.lambda1 is not None else fallback
        lam2 = args.lambda2 if args.lambda2 is not None else fallback
        model = qubo.build_naive_qubo(instance, lam1, lam2)
    qubo.write_model(args.out, model)
    print(f"built {model.decode_kind} model: {model.num_vars} variables, "
          f"{len(model.quadratic)} couplings")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_solve(args: argparse.Namespace) -> int:
    model = qubo.load_model(args.model)
    sample_set = solvers.sa_sample(
        model,
        schedule=_schedule_from_args(args),
        num_reads=args.num_reads,
        seed=args.seed,
    )
    if args.post == "steepest":
        sample_set = solvers.steepest_descent_sampleset(model, sample_set)
    solvers.write_sampleset(args.out, sample_set)
    best = sample_set.best_feasible_objective()
    print(
        f"{sample_set.solver}: {sample_set.num_reads} reads, "
        f"feasible rate {sample_set.feasible.mean():.3f}, "
        f"best feasible objective {'-' if best is None else f'{best:g}'}"
    )
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    sample_set = solvers.load_sampleset(args.samples)
    model = qubo.load_model(args.model)
    instance = bench.load_instance_input(args.instance)
    _, e_star = solvers.exact_assignment(instance)
    report = analysis.quality_report(sample_set, instance, model, e_star)
    analysis.write_report_json(args.out, report)
    div = analysis.diversity(
        sample_set,
        e_star,
        analysis.DiversityConfig(alpha=args.alpha, r=args.r, scale=instance.user_count),
    )
    print(
        f"E*={e_star:g} best={report.e_best if report.e_best is not None else '-'} "
        f"best_rel_err={report.best_relative_error if report.best_relative_error is not None else '-'} "
        f"feasibility={report.feasibility_rate:.3f}"
    )
    print(f"diversity(alpha={args.alpha}, R={args.r}) = {div.size}"
          + ("" if div.exact else " (greedy bound)"))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    config = bench.ExperimentConfig.from_json(args.config)
    if args.seed is not None:
        config.seed = args.seed
    report = bench.run_experiment(config)
    csv_path, json_path = report.write(args.out)
    print(f"{config.kind}: {len(report.rows)} rows")
    print(f"wrote {csv_path}")
    print(f"wrote {json_path}")
    return EXIT_OK


def cmd_workflow(args: argparse.Namespace) -> int:
    lam = args.lam
    if lam is None and args.lambda1 is not None:
        lam = args.lambda1
    report = bench.run_matching_workflow(
        args.instance,
        lam=lam,
        schedule=_schedule_from_args(args),
        num_reads=args.num_reads,
        seed=args.seed,
        formulation=args.formulation,
    )
    if report.warning:
        print(f"warning: {report.warning}", file=sys.stderr)
    print(
        f"instance: {report.user_count} users x {report.supporter_count} supporters, "
        f"{100.0 * report.retention:.1f}% of pairs feasible"
    )
    print(
        f"scores: min={report.score_min:g} max={report.score_max:g} "
        f"mean={report.score_mean:.2f} mode={report.score_mode:g}"
    )
    print(f"optimal objective E* = {report.e_star:g}; "
          f"sampler feasibility rate {report.feasibility_rate:.3f}")
    print(
        f"optimal matchings: {len(report.optimal_matchings)} enumerated, "
        f"{len(report.found_matchings)} distinct optima sampled, "
        f"recovered_all={report.recovered_all}"
    )
    for idx, matching in enumerate(report.optimal_matchings):
        pairs = " ".join(f"u{u}->s{j}" for u, j in sorted(matching.items(), key=lambda p: int(p[0])))
        print(f"  optimum {idx}: {pairs}")
    if args.out:
        Path(args.out).write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
        )
        print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="matchanneal",
        description="Matching optimization: compatibility scoring, QUBO models, "
        "annealing, and benchmark experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="compatibility matrix CSV from an instance file")
    p.add_argument("instance")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("filter", help="drop infeasible pairs, write the matching instance")
    p.add_argument("instance")
    p.add_argument("--out", required=True)
    p.add_argument("--matrix-csv", default=None, help="also write the masked matrix CSV")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("build", help="build a QUBO model from an instance")
    p.add_argument("instance")
    p.add_argument("--out", required=True)
    _add_penalty_flags(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("solve", help="anneal a QUBO model, write samples as JSON lines")
    p.add_argument("model")
    p.add_argument("--out", required=True)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("analyze", help="quality and diversity report for a sample set")
    p.add_argument("samples")
    p.add_argument("--model", required=True)
    p.add_argument("--instance", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--R", dest="r", type=float, default=0.1)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bench", help="run a benchmark experiment from a JSON config")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("workflow", help="end-to-end matching run with optimum enumeration")
    p.add_argument("instance")
    p.add_argument("--out", default=None, help="write the JSON report here")
    _add_penalty_flags(p)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_workflow)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, UndefinedMetricError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SizeCapError as exc:
        print(f"size cap: {exc}", file=sys.stderr)
        return EXIT_SIZE_CAP
    except InfeasibleInstanceError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
