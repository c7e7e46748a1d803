"""Quality and diversity metrics over sample sets.

Objectives here are matching scores (higher is better); sample sets carry
QUBO energies, and for feasible samples the two coincide up to sign, since
all penalty terms vanish.  ``e_star`` arguments are always the optimal
matching score, e.g. from ``solvers.exact_assignment``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import UndefinedMetricError
from .instance import MatchingInstance
from .qubo import QuboModel, constraint_deviations
from .solvers import SampleSet

MIS_EXACT_CAP = 64


@dataclass(frozen=True)
class DiversityConfig:
    """Allowable-range fraction, distinctness threshold, and its scale.

    Two solutions are similar when their Hamming distance is at most
    ``r * scale``; the conventional scale is the user count.
    """

    alpha: float
    r: float
    scale: int

    def __post_init__(self):
        if self.alpha < 0:
            raise UndefinedMetricError(f"alpha must be >= 0, got {self.alpha}")
        if not 0 < self.r <= 1:
            raise UndefinedMetricError(f"r must be in (0, 1], got {self.r}")
        if self.scale < 1:
            raise UndefinedMetricError(f"scale must be >= 1, got {self.scale}")


@dataclass(frozen=True)
class DiversityResult:
    size: int
    exact: bool
    representatives: tuple[tuple[int, ...], ...]
    num_candidates: int
    diagnostic: str = ""


@dataclass(frozen=True)
class SampleViolations:
    violated_users: tuple[int, ...]
    supporter_deviation: dict[int, int]
    feasible: bool


@dataclass(frozen=True)
class AuditReport:
    per_sample: tuple[SampleViolations, ...]
    feasibility_rate: float


@dataclass(frozen=True)
class HistogramResult:
    edges: np.ndarray
    probabilities: np.ndarray
    num_feasible: int
    empty: bool


@dataclass(frozen=True)
class QualityReport:
    e_star: float
    e_best: float | None
    best_relative_error: float | None
    sample_relative_errors: tuple[float, ...]
    feasibility_rate: float
    histogram: HistogramResult


def relative_error(e: float, e_star: float) -> float:
    """Deviation of an objective from the optimum: (E* - E) / E*."""
    if e_star == 0:
        raise UndefinedMetricError("relative error undefined for E* = 0")
    return (e_star - e) / e_star


def feasibility_audit(
    sample_set: SampleSet, instance: MatchingInstance, model: QuboModel
) -> AuditReport:
    """Per-sample constraint violations, recomputed from the raw bits."""
    if tuple(instance.capacities) != tuple(model.capacities):
        raise UndefinedMetricError("instance and model disagree on capacities")
    per_sample = []
    feasible_count = 0
    for bits, _, _ in sample_set:
        user_dev, supp_dev = constraint_deviations(model, bits)
        violated = tuple(int(u) for u in np.nonzero(user_dev)[0])
        deviations = {int(j): int(d) for j, d in enumerate(supp_dev) if d != 0}
        ok = not violated and not deviations
        feasible_count += ok
        per_sample.append(
            SampleViolations(
                violated_users=violated, supporter_deviation=deviations, feasible=ok
            )
        )
    rate = feasible_count / len(per_sample) if per_sample else 0.0
    return AuditReport(per_sample=tuple(per_sample), feasibility_rate=rate)


def _mis_exact(neighbors: list[int], n: int) -> tuple[int, int]:
    """Branch-and-bound maximum independent set on bitmask adjacency."""
    best_size = 0
    best_mask = 0

    def rec(cand: int, cur_size: int, cur_mask: int) -> None:
        nonlocal best_size, best_mask
        if cur_size + cand.bit_count() <= best_size:
            return
        if cand == 0:
            best_size, best_mask = cur_size, cur_mask
            return
        # branch on the highest-degree candidate; degree-0 means take the rest
        v, vdeg = -1, -1
        c = cand
        while c:
            low = c & -c
            i = low.bit_length() - 1
            c ^= low
            d = (neighbors[i] & cand).bit_count()
            if d > vdeg:
                v, vdeg = i, d
        if vdeg == 0:
            best_size = cur_size + cand.bit_count()
            best_mask = cur_mask | cand
            return
        vbit = 1 << v
        rec(cand & ~(neighbors[v] | vbit), cur_size + 1, cur_mask | vbit)
        rec(cand & ~vbit, cur_size, cur_mask)

    rec((1 << n) - 1, 0, 0)
    return best_size, best_mask


def _mis_greedy(neighbors: list[int], n: int) -> tuple[int, int]:
    """Minimum-degree greedy independent set (lower bound on the MIS)."""
    cand = (1 << n) - 1
    chosen = 0
    size = 0
    while cand:
        v, vdeg = -1, n + 1
        c = cand
        while c:
            low = c & -c
            i = low.bit_length() - 1
            c ^= low
            d = (neighbors[i] & cand).bit_count()
            if d < vdeg:
                v, vdeg = i, d
        chosen |= 1 << v
        size += 1
        cand &= ~(neighbors[v] | (1 << v))
    return size, chosen


def diversity(
    sample_set: SampleSet, e_star: float, config: DiversityConfig
) -> DiversityResult:
    """Count structurally distinct near-optimal solutions.

    Feasible samples whose objective is at least E* - alpha * (E* - E_best)
    are deduplicated; solutions within Hamming distance r * scale are linked
    in a similarity graph, and the result is the size of its maximum
    independent set (exact branch-and-bound up to 64 unique solutions,
    flagged greedy beyond).
    """
    feas = sample_set.feasible
    if not feas.any():
        return DiversityResult(0, True, (), 0, "no feasible samples")
    objectives = -sample_set.energies[feas]
    e_best = float(objectives.max())
    threshold = e_star - config.alpha * (e_star - e_best)
    tol = 1e-9 * max(1.0, abs(threshold))
    keep = objectives >= threshold - tol
    if not keep.any():
        return DiversityResult(0, True, (), 0, "no feasible samples within allowable range")
    pool = np.unique(sample_set.bits[feas][keep], axis=0)
    k = pool.shape[0]

    limit = config.r * config.scale
    diff = (pool[:, None, :] != pool[None, :, :]).sum(axis=2)
    adjacency = (diff <= limit) & ~np.eye(k, dtype=bool)
    neighbors = [int(sum(1 << j for j in np.nonzero(adjacency[i])[0])) for i in range(k)]

    if k <= MIS_EXACT_CAP:
        size, mask = _mis_exact(neighbors, k)
        exact = True
    else:
        size, mask = _mis_greedy(neighbors, k)
        exact = False
    reps = tuple(
        tuple(int(b) for b in pool[i]) for i in range(k) if mask >> i & 1
    )
    return DiversityResult(
        size=size, exact=exact, representatives=reps, num_candidates=k
    )


def energy_histogram(
    sample_set: SampleSet, e_star: float, bins: int = 40
) -> HistogramResult:
    """Relative-error distribution of the feasible samples.

    Deterministic uniform bins over [0, max observed error]; probabilities
    sum to one over the feasible samples.
    """
    if bins < 1:
        raise UndefinedMetricError("bins must be >= 1")
    if e_star == 0:
        raise UndefinedMetricError("relative error undefined for E* = 0")
    feas = sample_set.feasible
    if not feas.any():
        return HistogramResult(
            edges=np.zeros(0), probabilities=np.zeros(0), num_feasible=0, empty=True
        )
    errors = np.maximum((e_star - (-sample_set.energies[feas])) / e_star, 0.0)
    hi = float(errors.max()) if errors.max() > 0 else 1.0
    edges = np.linspace(0.0, hi, bins + 1)
    counts, _ = np.histogram(errors, bins=edges)
    return HistogramResult(
        edges=edges,
        probabilities=counts / counts.sum(),
        num_feasible=int(feas.sum()),
        empty=False,
    )


def quality_report(
    sample_set: SampleSet,
    instance: MatchingInstance,
    model: QuboModel,
    e_star: float,
    bins: int = 40,
) -> QualityReport:
    audit = feasibility_audit(sample_set, instance, model)
    feas = sample_set.feasible
    if feas.any():
        objectives = -sample_set.energies[feas]
        errors = tuple(relative_error(float(v), e_star) for v in objectives)
        e_best = float(objectives.max())
        best_err = relative_error(e_best, e_star)
    else:
        errors = ()
        e_best = None
        best_err = None
    return QualityReport(
        e_star=e_star,
        e_best=e_best,
        best_relative_error=best_err,
        sample_relative_errors=errors,
        feasibility_rate=audit.feasibility_rate,
        histogram=energy_histogram(sample_set, e_star, bins=bins),
    )


def report_to_dict(report: QualityReport) -> dict:
    return {
        "e_star": report.e_star,
        "e_best": report.e_best,
        "best_relative_error": report.best_relative_error,
        "feasibility_rate": report.feasibility_rate,
        "sample_relative_errors": list(report.sample_relative_errors),
        "histogram": None
        if report.histogram.empty
        else {
            "edges": report.histogram.edges.tolist(),
            "probabilities": report.histogram.probabilities.tolist(),
            "num_feasible": report.histogram.num_feasible,
        },
    }


def write_report_json(path: str | Path, report: QualityReport) -> None:
    Path(path).write_text(json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n")


def write_report_csv(path: str | Path, report: QualityReport) -> None:
    """One row per feasible sample: index and relative error."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", "relative_error"])
        for k, err in enumerate(report.sample_relative_errors):
            writer.writerow([k, repr(err)])
