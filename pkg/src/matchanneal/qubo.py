"""QUBO builders for the matching problem, plus decoding back to matchings.

Two formulations are supported:

* naive: one binary variable per feasible edge, with squared penalties for
  the one-supporter-per-user rule and the per-supporter quota.
* approx: one binary variable per user, choosing between that user's two
  highest-scoring supporters; only the quota penalty remains.

Energies are kept in the conventional minimization sense, so a feasible
bit-vector has energy equal to minus its matching score.
"""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ApproximationInfeasibleError, InputError, PenaltyTuningError
from .instance import Matching, MatchingInstance

NAIVE = "naive"
APPROX = "approx"


@dataclass(frozen=True)
class QuboModel:
    """Sparse symmetric quadratic form over binary variables.

    ``decode_map`` holds one (user, supporter) pair per variable for the naive
    kind, and one (first_supporter, second_supporter) pair per user for the
    approx kind.  ``capacities`` and ``user_count`` are carried along so that
    samples can be audited for feasibility without the original instance.
    """

    num_vars: int
    linear: dict[int, float]
    quadratic: dict[tuple[int, int], float]
    offset: float
    decode_kind: str
    decode_map: tuple[tuple[int, int], ...]
    capacities: tuple[int, ...]
    user_count: int

    def __post_init__(self):
        if self.decode_kind not in (NAIVE, APPROX):
            raise InputError(f"unknown decode kind {self.decode_kind!r}")
        for i in self.linear:
            if not 0 <= i < self.num_vars:
                raise InputError(f"linear coefficient references variable {i}")
        for i, j in self.quadratic:
            if i == j:
                raise InputError(f"quadratic key ({i}, {j}) must have distinct endpoints")
            if not (0 <= i < self.num_vars and 0 <= j < self.num_vars):
                raise InputError(f"quadratic key ({i}, {j}) references invalid variables")
        if len(self.decode_map) != self.num_vars:
            raise InputError("decode map length must equal num_vars")

    @property
    def supporter_count(self) -> int:
        return len(self.capacities)


@dataclass(frozen=True)
class CandidateTable:
    """Per-user top-two supporters and the induced per-supporter user sets."""

    first_score: tuple[float, ...]
    second_score: tuple[float, ...]
    first_supporter: tuple[int, ...]
    second_supporter: tuple[int, ...]
    users_first: tuple[tuple[int, ...], ...]
    users_second: tuple[tuple[int, ...], ...]


def _validate_bits(model: QuboModel, bits: Sequence[int]) -> np.ndarray:
    arr = np.asarray(bits, dtype=np.int8)
    if arr.shape != (model.num_vars,):
        raise InputError(f"expected {model.num_vars} bits, got shape {arr.shape}")
    return arr


def build_naive_qubo(instance: MatchingInstance, lam1: float, lam2: float) -> QuboModel:
    """One variable per edge; constraint groups expanded into linear/quadratic terms.

    Variables are ordered lexicographically by (user, supporter).  Squares of
    binary variables fold into linear coefficients; the constant parts of the
    expanded penalties accumulate in the offset, so reported energies match
    the unexpanded formula exactly.
    """
    if lam1 <= 0 or lam2 <= 0:
        raise InputError(f"penalty weights must be positive, got {lam1}, {lam2}")
    if not instance.edges:
        raise InputError("instance has no feasible edges")

    edges = sorted((u, j, w) for u, j, w in instance.edges)
    linear: dict[int, float] = {v: 0.0 for v in range(len(edges))}
    quadratic: dict[tuple[int, int], float] = {}
    offset = 0.0

    by_user: dict[int, list[int]] = {}
    by_supporter: dict[int, list[int]] = {}
    for v, (u, j, w) in enumerate(edges):
        linear[v] -= w
        by_user.setdefault(u, []).append(v)
        by_supporter.setdefault(j, []).append(v)

    def add_square_penalty(group: list[int], target: int, lam: float):
        # lam * (sum_v x_v - target)^2 with x^2 = x
        nonlocal offset
        for a, v in enumerate(group):
            linear[v] += lam * (1 - 2 * target)
            for w_ in group[a + 1 :]:
                key = (v, w_)
                quadratic[key] = quadratic.get(key, 0.0) + 2.0 * lam
        offset += lam * target * target

    for u in range(instance.user_count):
        add_square_penalty(by_user.get(u, []), 1, lam1)
    for j in range(instance.supporter_count):
        add_square_penalty(by_supporter.get(j, []), instance.capacities[j], lam2)

    return QuboModel(
        num_vars=len(edges),
        linear=linear,
        quadratic=quadratic,
        offset=offset,
        decode_kind=NAIVE,
        decode_map=tuple((u, j) for u, j, _ in edges),
        capacities=instance.capacities,
        user_count=instance.user_count,
    )


def top2_candidates(instance: MatchingInstance) -> CandidateTable:
    """Highest and second-highest incident edge per user; ties go to the lower supporter index."""
    incident: dict[int, list[tuple[float, int]]] = {u: [] for u in range(instance.user_count)}
    for u, j, w in instance.edges:
        incident[u].append((w, j))

    first_score, second_score, first_supp, second_supp = [], [], [], []
    for u in range(instance.user_count):
        ranked = sorted(incident[u], key=lambda sw: (-sw[0], sw[1]))
        if len(ranked) < 2:
            raise ApproximationInfeasibleError(
                f"user {u} has {len(ranked)} candidate supporter(s); the "
                "two-candidate formulation needs at least 2"
            )
        (s1, j1), (s2, j2) = ranked[0], ranked[1]
        first_score.append(s1)
        second_score.append(s2)
        first_supp.append(j1)
        second_supp.append(j2)

    users_first = [[] for _ in range(instance.supporter_count)]
    users_second = [[] for _ in range(instance.supporter_count)]
    for u in range(instance.user_count):
        users_first[first_supp[u]].append(u)
        users_second[second_supp[u]].append(u)

    return CandidateTable(
        first_score=tuple(first_score),
        second_score=tuple(second_score),
        first_supporter=tuple(first_supp),
        second_supporter=tuple(second_supp),
        users_first=tuple(tuple(v) for v in users_first),
        users_second=tuple(tuple(v) for v in users_second),
    )


def build_approx_qubo(instance: MatchingInstance, lam: float) -> QuboModel:
    """One variable per user: 1 = first choice, 0 = second choice.

    The per-user constraint is satisfied by construction; only the supporter
    quota penalty remains, with weight ``lam``.
    """
    if lam <= 0:
        raise InputError(f"penalty weight must be positive, got {lam}")
    table = top2_candidates(instance)
    n = instance.user_count

    linear: dict[int, float] = {i: 0.0 for i in range(n)}
    quadratic: dict[tuple[int, int], float] = {}
    offset = 0.0

    for i in range(n):
        linear[i] -= table.first_score[i] - table.second_score[i]
        offset -= table.second_score[i]

    for j in range(instance.supporter_count):
        # (sum_{U1} x + sum_{U2} (1-x) - C_j)^2 with signs s=+1 on U1, s=-1 on U2
        members = [(i, 1.0) for i in table.users_first[j]] + [
            (i, -1.0) for i in table.users_second[j]
        ]
        members.sort()
        d = len(table.users_second[j]) - instance.capacities[j]
        for a, (i, s) in enumerate(members):
            linear[i] += lam * (1.0 + 2.0 * d * s)
            for i2, s2 in members[a + 1 :]:
                key = (i, i2)
                quadratic[key] = quadratic.get(key, 0.0) + 2.0 * lam * s * s2
        offset += lam * d * d

    return QuboModel(
        num_vars=n,
        linear=linear,
        quadratic=quadratic,
        offset=offset,
        decode_kind=APPROX,
        decode_map=tuple(
            (table.first_supporter[i], table.second_supporter[i]) for i in range(n)
        ),
        capacities=instance.capacities,
        user_count=n,
    )


def decode(model: QuboModel, bits: Sequence[int]) -> Matching:
    """Bit-vector back to a matching.

    Naive models give a partial assignment: users with no set edge stay
    unassigned, users with two or more go into ``conflicts``.  Approx models
    always produce a total assignment over the candidate supporters.
    """
    arr = _validate_bits(model, bits)
    if model.decode_kind == APPROX:
        assignment = {
            i: (model.decode_map[i][0] if arr[i] else model.decode_map[i][1])
            for i in range(model.num_vars)
        }
        return Matching(assignment=assignment)

    chosen: dict[int, list[int]] = {}
    for v in range(model.num_vars):
        if arr[v]:
            u, j = model.decode_map[v]
            chosen.setdefault(u, []).append(j)
    assignment = {u: js[0] for u, js in sorted(chosen.items()) if len(js) == 1}
    conflicts = frozenset(u for u, js in chosen.items() if len(js) > 1)
    return Matching(assignment=assignment, conflicts=conflicts)


def energy(model: QuboModel, bits: Sequence[int]) -> float:
    """Exact energy of a bit-vector under the sparse coefficient maps.

    Terms are summed in sorted key order, so the value does not depend on
    the internal storage order of the coefficient dicts.
    """
    arr = _validate_bits(model, bits)
    total = model.offset
    for i, h in sorted(model.linear.items()):
        if arr[i]:
            total += h
    for (i, j), w in sorted(model.quadratic.items()):
        if arr[i] and arr[j]:
            total += w
    return total


def constraint_deviations(model: QuboModel, bits: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Per-user assignment counts minus 1, and per-supporter loads minus quota.

    A sample is feasible exactly when both arrays are all zero.  For approx
    models the user side is zero by construction.
    """
    arr = _validate_bits(model, bits)
    n, m = model.user_count, model.supporter_count
    if model.decode_kind == NAIVE:
        user_counts = np.zeros(n, dtype=np.int64)
        supp_counts = np.zeros(m, dtype=np.int64)
        for v in range(model.num_vars):
            if arr[v]:
                u, j = model.decode_map[v]
                user_counts[u] += 1
                supp_counts[j] += 1
    else:
        user_counts = np.ones(n, dtype=np.int64)
        supp_counts = np.zeros(m, dtype=np.int64)
        for i in range(n):
            first, second = model.decode_map[i]
            supp_counts[first if arr[i] else second] += 1
    return user_counts - 1, supp_counts - np.asarray(model.capacities, dtype=np.int64)


def is_feasible(model: QuboModel, bits: Sequence[int]) -> bool:
    user_dev, supp_dev = constraint_deviations(model, bits)
    return not user_dev.any() and not supp_dev.any()


def default_penalty(instance: MatchingInstance) -> float:
    """Feasibility-safe weight: twice the largest edge score plus one.

    At this weight the global minimum of the naive model is a valid matching
    whenever one exists, which is what the exact oracles rely on.
    """
    return 2.0 * instance.max_score() + 1.0


def search_penalty(instance: MatchingInstance) -> float:
    """Annealing-friendly weight: three quarters of the largest edge score.

    Paired weights then sum above the best single edge, so no lone constraint
    violation ever pays, while the barriers between matchings stay low enough
    for the sampler to cross during the ramp.  Oversized penalties freeze the
    search into the first feasible basin it reaches.
    """
    return 0.75 * instance.max_score()


def default_penalty_grid(instance: MatchingInstance) -> tuple[float, ...]:
    top = instance.max_score()
    return tuple(f * top for f in (0.25, 0.5, 1.0, 2.0, 4.0))


@dataclass(frozen=True)
class PenaltySelection:
    selected: float
    table: tuple[tuple[float, float, float | None], ...]  # (lam, feasibility_rate, best objective)


def tune_penalty(
    instance: MatchingInstance,
    grid: Sequence[float] | None = None,
    schedule=None,
    num_reads: int = 200,
    seed: int | None = None,
    feasibility_threshold: float = 0.5,
) -> PenaltySelection:
    """Grid search for the penalty weight, lam1 = lam2, using annealer runs.

    Picks the smallest weight whose feasible-sample rate reaches the
    threshold; equal weights tie-break by best feasible objective.
    """
    from . import solvers  # local import: solvers depends on this module

    if grid is None:
        grid = default_penalty_grid(instance)
    grid = tuple(float(g) for g in grid)
    if not grid:
        raise InputError("penalty grid is empty")

    root = np.random.SeedSequence(seed)
    children = root.spawn(len(grid))
    table: list[tuple[float, float, float | None]] = []
    for lam, child in zip(grid, children):
        model = build_naive_qubo(instance, lam, lam)
        sample_set = solvers.sa_sample(model, schedule=schedule, num_reads=num_reads, seed=child)
        feas = sample_set.feasible
        rate = float(feas.mean()) if len(feas) else 0.0
        best = float(-sample_set.energies[feas].min()) if feas.any() else None
        table.append((lam, rate, best))

    candidates = [row for row in table if row[1] >= feasibility_threshold]
    if not candidates:
        raise PenaltyTuningError(
            f"no penalty weight in {grid} reached feasibility rate {feasibility_threshold}",
            tuple(table),
        )
    candidates.sort(key=lambda row: (row[0], -(row[2] if row[2] is not None else -np.inf)))
    return PenaltySelection(selected=candidates[0][0], table=tuple(table))


# ---------------------------------------------------------------------------
# interchange format

def model_to_dict(model: QuboModel) -> dict:
    return {
        "num_vars": model.num_vars,
        "offset": model.offset,
        "linear": {str(i): v for i, v in sorted(model.linear.items())},
        "quadratic": {f"{i},{j}": v for (i, j), v in sorted(model.quadratic.items())},
        "decode_kind": model.decode_kind,
        "decode_map": [list(pair) for pair in model.decode_map],
        "capacities": list(model.capacities),
        "user_count": model.user_count,
    }


def model_from_dict(doc: Mapping) -> QuboModel:
    try:
        quadratic = {}
        for key, v in doc["quadratic"].items():
            i, j = (int(part) for part in key.split(","))
            quadratic[(i, j)] = float(v)
        return QuboModel(
            num_vars=int(doc["num_vars"]),
            linear={int(k): float(v) for k, v in doc["linear"].items()},
            quadratic=quadratic,
            offset=float(doc["offset"]),
            decode_kind=str(doc["decode_kind"]),
            decode_map=tuple((int(a), int(b)) for a, b in doc["decode_map"]),
            capacities=tuple(int(c) for c in doc["capacities"]),
            user_count=int(doc["user_count"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed QUBO document: {exc}") from None


def write_model(path: str | Path, model: QuboModel) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2, sort_keys=True) + "\n")


def load_model(path: str | Path) -> QuboModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read QUBO file {path}: {exc}") from None
    return model_from_dict(doc)
