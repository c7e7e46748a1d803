"""Samplers and exact oracles for matching QUBOs.

``sa_sample`` is a single-flip Metropolis annealer over a geometric inverse
temperature ramp, compiled with numba and parallel over reads.  Each read
draws every random number from its own SplitMix64 stream, keyed from a numpy
``SeedSequence``, so results are bit-identical whether reads run sequentially
or in parallel.

The exact side: exhaustive ``brute_force`` for small models, a Hungarian
assignment oracle (capacity-expanded) for the constrained optimum, and a
pruned depth-first enumeration of every optimal matching.
"""

from __future__ import annotations

import os
import time
import warnings
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import json

import numba
import numpy as np
from numba import njit, prange
from numba.core.errors import NumbaWarning
from scipy.optimize import linear_sum_assignment

# stale-TBB fallback to another threading layer is harmless here
warnings.filterwarnings("ignore", message=".*TBB threading layer.*", category=NumbaWarning)

from .errors import InfeasibleInstanceError, InputError, SizeCapError
from .instance import Matching, MatchingInstance, check_solvability
from .qubo import QuboModel

BRUTE_FORCE_CAP = 26
ENUMERATION_USER_CAP = 16


@dataclass(frozen=True)
class AnnealSchedule:
    """Geometric inverse-temperature ramp from beta_min to beta_max."""

    beta_min: float = 0.02
    beta_max: float = 2.0
    num_sweeps: int = 1000
    interpolation: str = "geometric"

    def __post_init__(self):
        if not 0 < self.beta_min < self.beta_max:
            raise InputError(
                f"need 0 < beta_min < beta_max, got ({self.beta_min}, {self.beta_max})"
            )
        if self.num_sweeps < 1:
            raise InputError("num_sweeps must be >= 1")
        if self.interpolation != "geometric":
            raise InputError(f"unknown interpolation {self.interpolation!r}")

    def betas(self) -> np.ndarray:
        return np.geomspace(self.beta_min, self.beta_max, self.num_sweeps)


@dataclass
class SampleSet:
    """Bit-vectors with energies and feasibility flags, plus solver metadata."""

    bits: np.ndarray          # (num_reads, num_vars) int8
    energies: np.ndarray      # (num_reads,) float64
    feasible: np.ndarray      # (num_reads,) bool
    solver: str
    seed: int | None
    schedule: AnnealSchedule | None
    num_reads: int
    duration: float = 0.0

    def __len__(self) -> int:
        return self.num_reads

    def __iter__(self):
        for k in range(self.num_reads):
            yield self.bits[k], float(self.energies[k]), bool(self.feasible[k])

    def best_feasible_index(self) -> int | None:
        if not self.feasible.any():
            return None
        energies = np.where(self.feasible, self.energies, np.inf)
        return int(np.argmin(energies))

    def best_feasible_objective(self) -> float | None:
        """Matching score of the best feasible sample (penalties vanish there)."""
        k = self.best_feasible_index()
        return None if k is None else float(-self.energies[k])


# ---------------------------------------------------------------------------
# SplitMix64 stream: state advances by a fixed odd gamma, output is a
# bijective mix of the state.  uint64 arithmetic wraps, which is exactly
# what the scheme needs.

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64_11 = np.uint64(11)
_U64_27 = np.uint64(27)
_U64_30 = np.uint64(30)
_U64_31 = np.uint64(31)
_U64_63 = np.uint64(63)
_U64_1 = np.uint64(1)
_INV_2_53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def _mix64(state):
    state = state + _GAMMA
    z = state
    z = (z ^ (z >> _U64_30)) * _MIX1
    z = (z ^ (z >> _U64_27)) * _MIX2
    z = z ^ (z >> _U64_31)
    return state, z


@njit(cache=True, parallel=True)
def _sa_kernel(num_vars, h, indptr, indices, weights, betas, seeds):
    num_reads = seeds.shape[0]
    num_sweeps = betas.shape[0]
    bits_out = np.empty((num_reads, num_vars), dtype=np.int8)
    energies = np.empty(num_reads, dtype=np.float64)

    for r in prange(num_reads):
        state = seeds[r]
        x = np.empty(num_vars, dtype=np.int8)
        for i in range(num_vars):
            state, z = _mix64(state)
            x[i] = np.int8((z >> _U64_63) & _U64_1)

        # local fields: flipping i changes the energy by (1 - 2 x_i) * f_i
        f = h.copy()
        for i in range(num_vars):
            if x[i] == 1:
                for k in range(indptr[i], indptr[i + 1]):
                    f[indices[k]] += weights[k]
        e = 0.0
        for i in range(num_vars):
            if x[i] == 1:
                e += h[i] + 0.5 * (f[i] - h[i])

        order = np.arange(num_vars, dtype=np.int64)
        for s in range(num_sweeps):
            beta = betas[s]
            for i in range(num_vars - 1, 0, -1):
                state, z = _mix64(state)
                j = np.int64(z % np.uint64(i + 1))
                tmp = order[i]
                order[i] = order[j]
                order[j] = tmp
            for t in range(num_vars):
                i = order[t]
                de = (1.0 - 2.0 * x[i]) * f[i]
                accept = de <= 0.0
                if not accept:
                    state, z = _mix64(state)
                    u = (z >> _U64_11) * _INV_2_53
                    accept = u < np.exp(-beta * de)
                if accept:
                    delta = np.int8(1 - 2 * x[i])
                    x[i] += delta
                    for k in range(indptr[i], indptr[i + 1]):
                        f[indices[k]] += weights[k] * delta
                    e += de

        bits_out[r] = x
        energies[r] = e
    return bits_out, energies


def _model_arrays(model: QuboModel):
    """Linear vector plus symmetric CSR adjacency of the quadratic terms."""
    n = model.num_vars
    h = np.zeros(n, dtype=np.float64)
    for i, v in model.linear.items():
        h[i] = v
    counts = np.zeros(n, dtype=np.int64)
    for i, j in model.quadratic:
        counts[i] += 1
        counts[j] += 1
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = np.zeros(max(indptr[-1], 1), dtype=np.int64)
    weights = np.zeros(max(indptr[-1], 1), dtype=np.float64)
    cursor = indptr[:-1].copy()
    for (i, j), w in sorted(model.quadratic.items()):
        indices[cursor[i]] = j
        weights[cursor[i]] = w
        cursor[i] += 1
        indices[cursor[j]] = i
        weights[cursor[j]] = w
        cursor[j] += 1
    return h, indptr, indices, weights


def _batch_energies(model: QuboModel, bits: np.ndarray) -> np.ndarray:
    """Vectorized from-scratch energies for a (reads, num_vars) bit matrix."""
    b = bits.astype(np.float64)
    h = np.zeros(model.num_vars)
    for i, v in model.linear.items():
        h[i] = v
    total = model.offset + b @ h
    if model.quadratic:
        keys = np.array(list(model.quadratic.keys()), dtype=np.int64)
        vals = np.array(list(model.quadratic.values()))
        total = total + (b[:, keys[:, 0]] * b[:, keys[:, 1]]) @ vals
    return total


def _feasible_flags(model: QuboModel, bits: np.ndarray) -> np.ndarray:
    n, m = model.user_count, model.supporter_count
    caps = np.asarray(model.capacities, dtype=np.int64)
    if model.decode_kind == "naive":
        user_of = np.array([u for u, _ in model.decode_map], dtype=np.int64)
        supp_of = np.array([j for _, j in model.decode_map], dtype=np.int64)
        user_mat = np.zeros((model.num_vars, n))
        supp_mat = np.zeros((model.num_vars, m))
        user_mat[np.arange(model.num_vars), user_of] = 1.0
        supp_mat[np.arange(model.num_vars), supp_of] = 1.0
        b = bits.astype(np.float64)
        user_counts = b @ user_mat
        supp_counts = b @ supp_mat
        return np.logical_and(
            (user_counts == 1.0).all(axis=1), (supp_counts == caps).all(axis=1)
        )
    first = np.array([a for a, _ in model.decode_map], dtype=np.int64)
    second = np.array([b_ for _, b_ in model.decode_map], dtype=np.int64)
    chosen = np.where(bits.astype(bool), first[None, :], second[None, :])
    counts = np.stack([np.bincount(row, minlength=m) for row in chosen])
    return (counts == caps).all(axis=1)


def _resolve_seeds(seed, num_reads: int) -> tuple[np.ndarray, int | None]:
    if isinstance(seed, np.random.SeedSequence):
        seq = seed
        base = None if seq.entropy is None else int(np.uint64(seq.generate_state(1)[0]))
    else:
        seq = np.random.SeedSequence(seed)
        base = seed
    return seq.generate_state(num_reads, np.uint64), base


def _apply_thread_cap() -> None:
    cap = os.environ.get("MATCH_ANNEAL_THREADS")
    if cap:
        try:
            requested = max(1, int(cap))
        except ValueError:
            raise InputError(f"MATCH_ANNEAL_THREADS must be an integer, got {cap!r}") from None
        numba.set_num_threads(min(requested, numba.config.NUMBA_NUM_THREADS))


def sa_sample(
    model: QuboModel,
    schedule: AnnealSchedule | None = None,
    num_reads: int = 1000,
    seed: int | np.random.SeedSequence | None = None,
) -> SampleSet:
    """Independent annealing reads from uniform random starts.

    Each read runs ``num_sweeps`` sweeps; a sweep proposes one flip per
    variable in a freshly shuffled order, accepting when the energy drops or
    with the Metropolis probability exp(-beta * dE) otherwise.  Stored
    energies are recomputed from scratch so they match ``qubo.energy``.
    """
    if schedule is None:
        schedule = AnnealSchedule()
    if num_reads < 1:
        raise InputError("num_reads must be >= 1")
    _apply_thread_cap()
    seeds, base_seed = _resolve_seeds(seed, num_reads)
    h, indptr, indices, weights = _model_arrays(model)
    betas = schedule.betas()

    start = time.perf_counter()
    bits, _ = _sa_kernel(model.num_vars, h, indptr, indices, weights, betas, seeds)
    duration = time.perf_counter() - start

    energies = _batch_energies(model, bits)
    return SampleSet(
        bits=bits,
        energies=energies,
        feasible=_feasible_flags(model, bits),
        solver="sa",
        seed=base_seed,
        schedule=schedule,
        num_reads=num_reads,
        duration=duration,
    )


def tracked_energies(
    model: QuboModel,
    schedule: AnnealSchedule,
    num_reads: int,
    seed,
) -> tuple[np.ndarray, np.ndarray]:
    """Raw kernel output (bits, incrementally tracked energies), for audits."""
    seeds, _ = _resolve_seeds(seed, num_reads)
    h, indptr, indices, weights = _model_arrays(model)
    bits, tracked = _sa_kernel(
        model.num_vars, h, indptr, indices, weights, schedule.betas(), seeds
    )
    return bits, tracked + model.offset


def steepest_descent(model: QuboModel, bits: Sequence[int]) -> np.ndarray:
    """Greedy 1-flip descent: always take the most negative energy change.

    Ties break toward the lowest variable index.  The result is a 1-flip
    local minimum with energy no higher than the input's.
    """
    x = np.asarray(bits, dtype=np.int8).copy()
    if x.shape != (model.num_vars,):
        raise InputError(f"expected {model.num_vars} bits, got shape {x.shape}")
    n = model.num_vars
    h = np.zeros(n)
    for i, v in model.linear.items():
        h[i] = v
    w = np.zeros((n, n))
    for (i, j), v in model.quadratic.items():
        w[i, j] += v
        w[j, i] += v
    f = h + w @ x
    max_steps = 100 * n + 100  # guards against float-noise cycling
    for _ in range(max_steps):
        de = (1.0 - 2.0 * x) * f
        i = int(np.argmin(de))
        if de[i] >= 0.0:
            break
        delta = 1 - 2 * int(x[i])
        x[i] += delta
        f += w[:, i] * delta
    return x


def steepest_descent_sampleset(model: QuboModel, sample_set: SampleSet) -> SampleSet:
    """Apply the greedy descent to every sample, keeping read order."""
    start = time.perf_counter()
    out = np.empty_like(sample_set.bits)
    for k in range(sample_set.num_reads):
        out[k] = steepest_descent(model, sample_set.bits[k])
    duration = time.perf_counter() - start
    return SampleSet(
        bits=out,
        energies=_batch_energies(model, out),
        feasible=_feasible_flags(model, out),
        solver=sample_set.solver + "+steepest",
        seed=sample_set.seed,
        schedule=sample_set.schedule,
        num_reads=sample_set.num_reads,
        duration=sample_set.duration + duration,
    )


@dataclass(frozen=True)
class BruteForceResult:
    best_bits: np.ndarray
    best_energy: float
    ground_states: tuple[np.ndarray, ...]


def brute_force(model: QuboModel, max_vars: int = BRUTE_FORCE_CAP) -> BruteForceResult:
    """Exhaustive enumeration of every bit-vector; returns all ground states.

    States within 1e-9 of the minimum count as ground states, which is exact
    for integer-valued coefficient data.
    """
    n = model.num_vars
    if n > max_vars:
        raise SizeCapError(f"brute force refused: {n} variables exceeds cap {max_vars}")
    h = np.zeros(n)
    for i, v in model.linear.items():
        h[i] = v
    w = np.zeros((n, n))
    for (i, j), v in model.quadratic.items():
        w[i, j] += v
        w[j, i] += v

    chunk_bits = min(n, 16)
    chunk = 1 << chunk_bits
    shifts = np.arange(n, dtype=np.uint64)

    def chunk_energies(base: int) -> np.ndarray:
        codes = base + np.arange(chunk if n > chunk_bits else (1 << n), dtype=np.uint64)
        b = ((codes[:, None] >> shifts[None, :]) & 1).astype(np.float64)
        return model.offset + b @ h + 0.5 * ((b @ w) * b).sum(axis=1)

    total = 1 << n
    best = np.inf
    for base in range(0, total, chunk):
        best = min(best, float(chunk_energies(base).min()))

    states: list[np.ndarray] = []
    for base in range(0, total, chunk):
        e = chunk_energies(base)
        for local in np.nonzero(e <= best + 1e-9)[0]:
            code = base + int(local)
            states.append(((code >> np.arange(n)) & 1).astype(np.int8))
    return BruteForceResult(
        best_bits=states[0], best_energy=best, ground_states=tuple(states)
    )


def exact_assignment(instance: MatchingInstance) -> tuple[Matching, float]:
    """Optimal constrained matching via the capacity-expanded assignment problem.

    Each supporter becomes C_j unit-capacity copies; a maximum-weight perfect
    assignment on the expanded bipartite graph solves the quota-constrained
    problem exactly.
    """
    n = instance.user_count
    caps = instance.capacities
    if sum(caps) != n:
        report = check_solvability(instance)
        raise InfeasibleInstanceError(
            f"no feasible matching: {report.reason}; blocking users {report.blocking_users}"
        )
    slot_supporter = np.array(
        [j for j in range(instance.supporter_count) for _ in range(caps[j])], dtype=np.int64
    )
    cost = np.full((n, n), np.inf)
    for u, j, w in instance.edges:
        cost[u, slot_supporter == j] = -w
    try:
        rows, cols = linear_sum_assignment(cost)
    except ValueError:
        report = check_solvability(instance)
        raise InfeasibleInstanceError(
            f"no feasible matching: {report.reason}; blocking users {report.blocking_users}"
        ) from None
    score = instance.score_of()
    assignment = {int(u): int(slot_supporter[c]) for u, c in zip(rows, cols)}
    objective = sum(score[(u, j)] for u, j in assignment.items())
    return Matching(assignment=dict(sorted(assignment.items()))), float(objective)


def enumerate_optima(
    instance: MatchingInstance,
    e_star: float,
    max_users: int = ENUMERATION_USER_CAP,
    atol: float = 1e-9,
) -> list[Matching]:
    """Every feasible matching whose objective equals the optimum.

    Depth-first over users in index order, pruning branches whose optimistic
    bound (capacity-free per-user maxima) falls short of the target.
    """
    n = instance.user_count
    if n > max_users:
        raise SizeCapError(f"enumeration refused: {n} users exceeds cap {max_users}")
    if sum(instance.capacities) != n:
        raise InfeasibleInstanceError(
            f"total capacity {sum(instance.capacities)} != user count {n}"
        )

    candidates: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for u, j, w in instance.edges:
        candidates[u].append((j, w))
    for u in range(n):
        candidates[u].sort(key=lambda jw: (-jw[1], jw[0]))

    suffix = [0.0] * (n + 1)
    for u in range(n - 1, -1, -1):
        best_here = max((w for _, w in candidates[u]), default=-np.inf)
        suffix[u] = best_here + suffix[u + 1]

    cap_left = list(instance.capacities)
    chosen: list[int] = []
    found: list[Matching] = []

    def dfs(u: int, current: float) -> None:
        if current + suffix[u] < e_star - atol:
            return
        if u == n:
            if abs(current - e_star) <= atol:
                found.append(Matching(assignment={i: j for i, j in enumerate(chosen)}))
            return
        for j, w in candidates[u]:
            if cap_left[j] > 0:
                cap_left[j] -= 1
                chosen.append(j)
                dfs(u + 1, current + w)
                chosen.pop()
                cap_left[j] += 1

    dfs(0, 0.0)
    return found


# ---------------------------------------------------------------------------
# sample-set interchange (JSON lines): header record, then one record per sample

def write_sampleset(path: str | Path, sample_set: SampleSet) -> None:
    header: dict = {
        "solver": sample_set.solver,
        "seed": sample_set.seed,
        "num_reads": sample_set.num_reads,
        "duration": sample_set.duration,
        "schedule": None,
    }
    if sample_set.schedule is not None:
        header["schedule"] = {
            "beta_min": sample_set.schedule.beta_min,
            "beta_max": sample_set.schedule.beta_max,
            "num_sweeps": sample_set.schedule.num_sweeps,
            "interpolation": sample_set.schedule.interpolation,
        }
    lines = [json.dumps(header, sort_keys=True)]
    for bits, e, feas in sample_set:
        lines.append(
            json.dumps(
                {"bits": "".join(str(int(b)) for b in bits), "energy": e, "feasible": feas},
                sort_keys=True,
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_sampleset(path: str | Path) -> SampleSet:
    try:
        lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
        records = [json.loads(ln) for ln in lines]
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read sample set {path}: {exc}") from None
    if not records:
        raise InputError("sample-set file is empty")
    header, rows = records[0], records[1:]
    if "bits" in header or not rows:
        raise InputError("sample-set file must start with a header record")
    bits = np.array([[int(c) for c in row["bits"]] for row in rows], dtype=np.int8)
    schedule = None
    if header.get("schedule"):
        schedule = AnnealSchedule(**header["schedule"])
    return SampleSet(
        bits=bits,
        energies=np.array([float(row["energy"]) for row in rows]),
        feasible=np.array([bool(row["feasible"]) for row in rows]),
        solver=str(header.get("solver", "external")),
        seed=header.get("seed"),
        schedule=schedule,
        num_reads=len(rows),
        duration=float(header.get("duration", 0.0)),
    )
