"""Random instance generation and the benchmark experiment harness.

Experiments mirror the evaluation protocol: scaling of annealer error with
problem size against the exact oracle, pooled relative-error histograms, the
naive-vs-compressed formulation comparison, per-alpha diversity curves, and
the end-to-end one-to-one workflow (filter, solve, audit, enumerate optima).

Reports are deterministic given the config seed: per-instance seeds derive
from the master seed and the (size, instance) position, so reruns produce
byte-identical CSVs apart from wall-clock columns.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from collections import Counter
from collections.abc import Mapping
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .analysis import DiversityConfig, diversity, relative_error
from .errors import InfeasibleInstanceError, InputError, SizeCapError
from .instance import (
    MatchingInstance,
    balanced_capacities,
    check_solvability,
    compatibility_matrix,
    feasible_pairs,
    load_instance_file,
    load_matching_instance,
    matching_key,
)
from .qubo import (
    QuboModel,
    build_approx_qubo,
    build_naive_qubo,
    decode,
    default_penalty,
    search_penalty,
    top2_candidates,
)
from .solvers import (
    AnnealSchedule,
    SampleSet,
    enumerate_optima,
    exact_assignment,
    sa_sample,
    steepest_descent_sampleset,
)

log = logging.getLogger(__name__)

SCALING = "scaling"
HISTOGRAM = "histogram"
DIVERSITY = "diversity"
FORMULATION = "formulation-compare"
KINDS = (SCALING, HISTOGRAM, DIVERSITY, FORMULATION)

SOLVER_VARIANTS = ("sa", "sa+steepest")

SIZE_CAP = 64  # users per instance; keeps the exact oracles desk-scale

CSV_COLUMNS = (
    "experiment",
    "size",
    "instance",
    "solver",
    "r",
    "alpha",
    "best_relative_error",
    "feasibility_rate",
    "diversity",
    "diversity_exact",
    "time_generate",
    "time_build",
    "time_solve",
    "time_oracle",
)
TIME_COLUMNS = tuple(c for c in CSV_COLUMNS if c.startswith("time_"))


def gen_random_instance(
    n: int,
    m: int,
    mean: float = 12.3,
    variance: float = 2.80,
    seed=None,
    complete: bool = True,
    integer_scores: bool = False,
    retention: float = 1.0,
) -> MatchingInstance:
    """Random bipartite instance with Gaussian scores and balanced quotas.

    Scores are i.i.d. normal draws clamped at zero.  With ``complete=False`` a
    uniform subset of round(retention * n * m) pairs is kept.  Quotas split
    the users evenly, remainder to the lowest supporter indices.
    """
    if n < 1 or m < 1:
        raise InputError("need n >= 1 and m >= 1")
    if variance <= 0:
        raise InputError("variance must be positive")
    rng = np.random.default_rng(seed)
    scores = rng.normal(mean, math.sqrt(variance), size=(n, m))
    if integer_scores:
        scores = np.rint(scores)
    scores = np.maximum(scores, 0.0)

    pairs = [(i, j) for i in range(n) for j in range(m)]
    if not complete:
        keep = round(retention * n * m)
        if not 1 <= keep <= n * m:
            raise InputError(f"retention {retention} keeps {keep} of {n * m} pairs")
        chosen = rng.choice(n * m, size=keep, replace=False)
        pairs = [pairs[k] for k in sorted(chosen)]
    edges = tuple((i, j, float(scores[i, j])) for i, j in pairs)
    return MatchingInstance(
        edges=edges,
        capacities=balanced_capacities(n, m),
        user_count=n,
        supporter_count=m,
    )


def gen_field_replica(
    seed=None,
    n: int = 14,
    m: int = 14,
    retention: float = 0.38,
    score_min: int = 6,
    score_max: int = 21,
    mean: float = 12.3,
    variance: float = 9.0,
    max_attempts: int = 1000,
) -> MatchingInstance:
    """Field-study shaped instance: integer scores in a fixed band, sparse mask.

    The default spread is wider than the benchmark Gaussian's fitted variance:
    the observed questionnaire scores reached both 6 and 21, which a variance
    of 2.8 around 12.3 essentially never produces.  Resamples the mask until a
    one-to-one matching exists.
    """
    root = np.random.SeedSequence(seed)
    for attempt in range(max_attempts):
        rng = np.random.default_rng(np.random.SeedSequence(root.entropy, spawn_key=(attempt,)))
        scores = np.clip(np.rint(rng.normal(mean, math.sqrt(variance), size=(n, m))), score_min, score_max)
        keep = round(retention * n * m)
        chosen = sorted(rng.choice(n * m, size=keep, replace=False))
        edges = tuple((k // m, k % m, float(scores[k // m, k % m])) for k in chosen)
        instance = MatchingInstance(
            edges=edges,
            capacities=balanced_capacities(n, m),
            user_count=n,
            supporter_count=m,
        )
        if check_solvability(instance).perfect_matching_possible:
            return instance
        log.warning("replica mask attempt %d unsolvable, resampling", attempt)
    raise InfeasibleInstanceError(f"no solvable mask found in {max_attempts} attempts")


@dataclass
class ExperimentConfig:
    """Everything a benchmark run needs; mirrors the JSON config file."""

    kind: str
    sizes: tuple[int, ...]
    instances_per_size: int
    supporters: int | None = None
    mean: float = 12.3
    variance: float = 2.80
    integer_scores: bool = False
    solvers: tuple[str, ...] = ("sa",)
    beta_min: float = 0.02
    beta_max: float = 2.0
    num_sweeps: int = 1000
    num_reads: int = 1000
    penalty: float | None = None
    alpha_grid: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0)
    r_values: tuple[float, ...] = (0.1, 0.5)
    histogram_bins: int = 40
    seed: int = 0
    label: str = "run"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        self.sizes = tuple(int(s) for s in self.sizes)
        if not self.sizes:
            raise InputError("sizes must be non-empty")
        if self.instances_per_size < 1:
            raise InputError("instances_per_size must be >= 1")
        if self.variance <= 0:
            raise InputError("variance must be positive")
        self.solvers = tuple(self.solvers)
        for solver in self.solvers:
            if solver not in SOLVER_VARIANTS:
                raise InputError(f"unknown solver variant {solver!r}; expected {SOLVER_VARIANTS}")
        if self.kind == FORMULATION and (self.supporters is None or self.supporters < 2):
            raise InputError("formulation-compare needs 'supporters' >= 2")
        self.alpha_grid = tuple(float(a) for a in self.alpha_grid)
        self.r_values = tuple(float(r) for r in self.r_values)

    def schedule(self) -> AnnealSchedule:
        return AnnealSchedule(
            beta_min=self.beta_min, beta_max=self.beta_max, num_sweeps=self.num_sweeps
        )

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["sizes"] = list(self.sizes)
        doc["solvers"] = list(self.solvers)
        doc["alpha_grid"] = list(self.alpha_grid)
        doc["r_values"] = list(self.r_values)
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise InputError(f"unknown config fields: {sorted(unknown)}")
        if "kind" not in doc or "sizes" not in doc or "instances_per_size" not in doc:
            raise InputError("config needs 'kind', 'sizes', and 'instances_per_size'")
        return cls(**doc)

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(doc)


@dataclass
class BenchmarkReport:
    experiment: str
    label: str
    rows: list[dict]
    summary: dict

    def basename(self) -> str:
        return f"{self.experiment}_{self.label}"

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{self.basename()}.csv"
        json_path = out / f"{self.basename()}.json"
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for row in self.rows:
                writer.writerow([_cell(row.get(col)) for col in CSV_COLUMNS])
        json_path.write_text(json.dumps(self.summary, indent=2, sort_keys=True) + "\n")
        return csv_path, json_path


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def csv_rows_without_time(path: str | Path) -> list[list[str]]:
    """CSV content with wall-clock columns dropped, for determinism diffs."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    keep = [k for k, name in enumerate(header) if name not in TIME_COLUMNS]
    return [[row[k] for k in keep] for row in rows]


def _check_size(n: int) -> None:
    if n > SIZE_CAP:
        raise SizeCapError(f"size {n} exceeds the exact-oracle cap {SIZE_CAP}")


def _subseed(config: ExperimentConfig, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(config.seed, spawn_key=tuple(key))


def _solvable_instance(
    config: ExperimentConfig, si: int, k: int, n: int, m: int, need_approx: bool = False
) -> tuple[MatchingInstance, float]:
    """Generate an instance, regenerating with the next derived seed when unusable."""
    start = time.perf_counter()
    for attempt in range(100):
        inst = gen_random_instance(
            n,
            m,
            mean=config.mean,
            variance=config.variance,
            seed=_subseed(config, si, k, attempt),
            integer_scores=config.integer_scores,
        )
        if not check_solvability(inst).perfect_matching_possible:
            log.warning("size %d instance %d attempt %d unsolvable, regenerating", n, k, attempt)
            continue
        if need_approx:
            restricted = _top2_restricted(inst)
            if not check_solvability(restricted).perfect_matching_possible:
                log.warning(
                    "size %d instance %d attempt %d infeasible under the two-candidate "
                    "restriction, regenerating",
                    n,
                    k,
                    attempt,
                )
                continue
        return inst, time.perf_counter() - start
    raise InfeasibleInstanceError(f"no solvable instance after 100 attempts at size {n}")


def _top2_restricted(instance: MatchingInstance) -> MatchingInstance:
    """Sub-instance keeping only each user's two candidate edges."""
    table = top2_candidates(instance)
    score = instance.score_of()
    edges = []
    for u in range(instance.user_count):
        for j in (table.first_supporter[u], table.second_supporter[u]):
            edges.append((u, j, score[(u, j)]))
    return MatchingInstance(
        edges=tuple(sorted(edges)),
        capacities=instance.capacities,
        user_count=instance.user_count,
        supporter_count=instance.supporter_count,
    )


def _solve_variant(
    model: QuboModel, config: ExperimentConfig, variant: str, seed: np.random.SeedSequence
) -> SampleSet:
    sample_set = sa_sample(
        model, schedule=config.schedule(), num_reads=config.num_reads, seed=seed
    )
    if variant == "sa+steepest":
        sample_set = steepest_descent_sampleset(model, sample_set)
    return sample_set


def _aggregate(rows: list[dict], value_key: str, group_keys: tuple[str, ...]) -> list[dict]:
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        if value_key not in row or row[value_key] is None:
            continue
        key = tuple(row[g] for g in group_keys)
        groups.setdefault(key, []).append(float(row[value_key]))
    out = []
    for key in sorted(groups, key=str):
        values = np.array(groups[key])
        finite = values[~np.isnan(values)]
        mean = float(finite.mean()) if finite.size else None
        stderr = (
            float(finite.std(ddof=1) / math.sqrt(finite.size)) if finite.size > 1 else 0.0
        )
        entry = dict(zip(group_keys, key))
        entry.update(
            {
                f"mean_{value_key}": mean,
                f"stderr_{value_key}": stderr,
                "count": int(finite.size),
            }
        )
        out.append(entry)
    return out


def _base_row(config: ExperimentConfig, size: int, k: int, solver: str) -> dict:
    return {
        "experiment": config.kind,
        "size": size,
        "instance": k,
        "solver": solver,
    }


def run_scaling_experiment(config: ExperimentConfig) -> BenchmarkReport:
    """Annealer best-feasible relative error versus the exact optimum, by size."""
    rows: list[dict] = []
    pooled_errors: dict[tuple[int, str], list[float]] = {}
    for si, n in enumerate(config.sizes):
        _check_size(n)
        for k in range(config.instances_per_size):
            inst, gen_time = _solvable_instance(config, si, k, n, n)
            t0 = time.perf_counter()
            _, e_star = exact_assignment(inst)
            oracle_time = time.perf_counter() - t0
            lam = config.penalty if config.penalty is not None else default_penalty(inst)
            t0 = time.perf_counter()
            model = build_naive_qubo(inst, lam, lam)
            build_time = time.perf_counter() - t0
            for vi, variant in enumerate(config.solvers):
                sample_set = _solve_variant(model, config, variant, _subseed(config, si, k, 1000 + vi))
                best = sample_set.best_feasible_objective()
                rel = relative_error(best, e_star) if best is not None else math.nan
                feas = sample_set.feasible
                pooled_errors.setdefault((n, variant), []).extend(
                    np.maximum((e_star + sample_set.energies[feas]) / e_star, 0.0).tolist()
                )
                row = _base_row(config, n, k, variant)
                row.update(
                    {
                        "best_relative_error": rel,
                        "feasibility_rate": float(feas.mean()),
                        "time_generate": gen_time,
                        "time_build": build_time,
                        "time_solve": sample_set.duration,
                        "time_oracle": oracle_time,
                    }
                )
                rows.append(row)
    summary = {
        "experiment": config.kind,
        "config": config.to_dict(),
        "aggregates": _aggregate(rows, "best_relative_error", ("size", "solver")),
        "feasibility": _aggregate(rows, "feasibility_rate", ("size", "solver")),
    }
    if config.kind == HISTOGRAM:
        summary["histograms"] = _pooled_histograms(pooled_errors, config.histogram_bins)
    return BenchmarkReport(config.kind, config.label, rows, summary)


def _pooled_histograms(
    pooled: dict[tuple[int, str], list[float]], bins: int
) -> list[dict]:
    out = []
    for (size, solver) in sorted(pooled, key=str):
        errors = np.array(pooled[(size, solver)])
        if errors.size == 0:
            out.append({"size": size, "solver": solver, "empty": True})
            continue
        hi = float(errors.max()) if errors.max() > 0 else 1.0
        edges = np.linspace(0.0, hi, bins + 1)
        counts, _ = np.histogram(errors, bins=edges)
        out.append(
            {
                "size": size,
                "solver": solver,
                "empty": False,
                "edges": edges.tolist(),
                "probabilities": (counts / counts.sum()).tolist(),
                "num_feasible": int(errors.size),
            }
        )
    return out


def run_histogram_experiment(config: ExperimentConfig) -> BenchmarkReport:
    """Scaling rows plus pooled relative-error histograms per size and solver."""
    return run_scaling_experiment(config)


def run_formulation_comparison(config: ExperimentConfig) -> BenchmarkReport:
    """Naive vs two-candidate formulation, both against the naive exact optimum.

    Emits, per instance: annealer error on each formulation and the
    approximation bound (the restricted formulation's exact optimum).
    """
    m = config.supporters
    rows: list[dict] = []
    for si, n in enumerate(config.sizes):
        _check_size(n)
        for k in range(config.instances_per_size):
            inst, gen_time = _solvable_instance(config, si, k, n, m, need_approx=True)
            t0 = time.perf_counter()
            _, e_star = exact_assignment(inst)
            restricted = _top2_restricted(inst)
            _, bound_star = exact_assignment(restricted)
            oracle_time = time.perf_counter() - t0

            lam = config.penalty if config.penalty is not None else default_penalty(inst)
            naive_model = build_naive_qubo(inst, lam, lam)
            approx_model = build_approx_qubo(inst, lam)

            for vi, variant in enumerate(config.solvers):
                for fi, (tag, model) in enumerate(
                    (("naive", naive_model), ("approx", approx_model))
                ):
                    sample_set = _solve_variant(
                        model, config, variant, _subseed(config, si, k, 1000 + 10 * vi + fi)
                    )
                    best = sample_set.best_feasible_objective()
                    rel = relative_error(best, e_star) if best is not None else math.nan
                    row = _base_row(config, n, k, f"{variant}_{tag}")
                    row.update(
                        {
                            "best_relative_error": rel,
                            "feasibility_rate": float(sample_set.feasible.mean()),
                            "time_generate": gen_time,
                            "time_solve": sample_set.duration,
                            "time_oracle": oracle_time,
                        }
                    )
                    rows.append(row)
            bound_row = _base_row(config, n, k, "approx_bound")
            bound_row.update(
                {
                    "best_relative_error": relative_error(bound_star, e_star),
                    "feasibility_rate": 1.0,
                    "time_generate": gen_time,
                    "time_oracle": oracle_time,
                }
            )
            rows.append(bound_row)
    summary = {
        "experiment": config.kind,
        "config": config.to_dict(),
        "aggregates": _aggregate(rows, "best_relative_error", ("size", "solver")),
    }
    return BenchmarkReport(config.kind, config.label, rows, summary)


def run_diversity_experiment(config: ExperimentConfig) -> BenchmarkReport:
    """Near-optimal solution diversity per alpha and distinctness threshold."""
    rows: list[dict] = []
    for si, n in enumerate(config.sizes):
        _check_size(n)
        for k in range(config.instances_per_size):
            inst, gen_time = _solvable_instance(config, si, k, n, n)
            t0 = time.perf_counter()
            _, e_star = exact_assignment(inst)
            oracle_time = time.perf_counter() - t0
            lam = config.penalty if config.penalty is not None else default_penalty(inst)
            model = build_naive_qubo(inst, lam, lam)
            for vi, variant in enumerate(config.solvers):
                sample_set = _solve_variant(model, config, variant, _subseed(config, si, k, 1000 + vi))
                for r in config.r_values:
                    for alpha in config.alpha_grid:
                        result = diversity(
                            sample_set, e_star, DiversityConfig(alpha=alpha, r=r, scale=n)
                        )
                        row = _base_row(config, n, k, variant)
                        row.update(
                            {
                                "r": r,
                                "alpha": alpha,
                                "diversity": result.size,
                                "diversity_exact": result.exact,
                                "feasibility_rate": float(sample_set.feasible.mean()),
                                "time_generate": gen_time,
                                "time_solve": sample_set.duration,
                                "time_oracle": oracle_time,
                            }
                        )
                        rows.append(row)
    summary = {
        "experiment": config.kind,
        "config": config.to_dict(),
        "aggregates": _aggregate(rows, "diversity", ("size", "solver", "r", "alpha")),
    }
    return BenchmarkReport(config.kind, config.label, rows, summary)


RUNNERS = {
    SCALING: run_scaling_experiment,
    HISTOGRAM: run_histogram_experiment,
    DIVERSITY: run_diversity_experiment,
    FORMULATION: run_formulation_comparison,
}


def run_experiment(config: ExperimentConfig) -> BenchmarkReport:
    return RUNNERS[config.kind](config)


# ---------------------------------------------------------------------------
# end-to-end workflow

APPROX_CAPACITY_WARNING = (
    "the two-candidate formulation treats supporter quotas as soft penalties; "
    "strict one-to-one assignments are not guaranteed"
)


@dataclass
class WorkflowReport:
    user_count: int
    supporter_count: int
    retention: float
    score_min: float
    score_max: float
    score_mean: float
    score_mode: float
    penalty: float
    e_star: float
    feasibility_rate: float
    optimal_matchings: list[dict[int, int]]
    found_matchings: list[dict[int, int]]
    recovered_all: bool
    formulation: str
    warning: str = ""
    duration_solve: float = 0.0

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["optimal_matchings"] = [
            {str(u): j for u, j in m.items()} for m in self.optimal_matchings
        ]
        doc["found_matchings"] = [
            {str(u): j for u, j in m.items()} for m in self.found_matchings
        ]
        return doc


def load_instance_input(path: str | Path) -> MatchingInstance:
    """Accept either a matching-instance JSON or a questionnaire instance file."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read instance {path}: {exc}") from None
    if isinstance(doc, dict) and "edges" in doc:
        return load_matching_instance(path)
    schema, users, supporters, matrix = load_instance_file(path)
    if matrix is None:
        matrix = compatibility_matrix(users, supporters, schema)
    return feasible_pairs(matrix, users, supporters)


def run_matching_workflow(
    source: MatchingInstance | str | Path,
    lam: float | None = None,
    schedule: AnnealSchedule | None = None,
    num_reads: int = 1000,
    seed=None,
    formulation: str = "naive",
) -> WorkflowReport:
    """Filter, solve, audit, and enumerate all optimal matchings.

    Raises on unsolvable instances; cross-checks annealer-found optima
    against the exact enumeration.
    """
    instance = source if isinstance(source, MatchingInstance) else load_instance_input(source)
    report = check_solvability(instance)
    if not report.perfect_matching_possible:
        raise InfeasibleInstanceError(
            f"instance unsolvable: {report.reason}; blocking users {report.blocking_users}"
        )
    if formulation not in ("naive", "approx"):
        raise InputError(f"unknown formulation {formulation!r}")

    n, m = instance.user_count, instance.supporter_count
    scores = np.array([w for _, _, w in instance.edges])
    mode_counts = Counter(np.rint(scores).astype(int).tolist())
    score_mode = float(sorted(mode_counts, key=lambda v: (-mode_counts[v], v))[0])

    lam = lam if lam is not None else search_penalty(instance)
    warning = ""
    if formulation == "approx":
        model = build_approx_qubo(instance, lam)
        warning = APPROX_CAPACITY_WARNING
        log.warning(APPROX_CAPACITY_WARNING)
    else:
        model = build_naive_qubo(instance, lam, lam)

    sample_set = sa_sample(model, schedule=schedule, num_reads=num_reads, seed=seed)

    _, e_star = exact_assignment(instance)
    optima = enumerate_optima(instance, e_star)
    optima_keys = {matching_key(mt) for mt in optima}

    tol = 1e-9 * max(1.0, abs(e_star))
    found_keys = set()
    for k in np.nonzero(sample_set.feasible)[0]:
        if -sample_set.energies[k] >= e_star - tol:
            found_keys.add(matching_key(decode(model, sample_set.bits[k])))

    return WorkflowReport(
        user_count=n,
        supporter_count=m,
        retention=len(instance.edges) / (n * m),
        score_min=float(scores.min()),
        score_max=float(scores.max()),
        score_mean=float(scores.mean()),
        score_mode=score_mode,
        penalty=lam,
        e_star=float(e_star),
        feasibility_rate=float(sample_set.feasible.mean()),
        optimal_matchings=[dict(key) for key in sorted(optima_keys)],
        found_matchings=[dict(key) for key in sorted(found_keys)],
        recovered_all=optima_keys <= found_keys,
        formulation=formulation,
        warning=warning,
        duration_solve=sample_set.duration,
    )
