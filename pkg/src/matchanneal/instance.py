"""Participants, compatibility scoring, and pre-filtering into matching instances.

The pipeline starts from questionnaire profiles, turns them into a dense
compatibility matrix, and prunes user-supporter pairs that can never meet
(no shared time slot, or unmet infant-care needs).  What remains is a
bipartite instance with per-supporter assignment quotas, ready for the
QUBO builders and the exact oracles.
"""

from __future__ import annotations

import csv
import json
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError

USER = "user"
SUPPORTER = "supporter"

AGREEMENT = "agreement"
_KNOWN_SCORING = (AGREEMENT,)


@dataclass(frozen=True)
class QuestionnaireItem:
    item_id: str
    category: str = ""
    levels: int = 4
    scoring: str = AGREEMENT

    def __post_init__(self):
        if self.levels < 2:
            raise InputError(f"item {self.item_id!r}: levels must be >= 2, got {self.levels}")
        if self.scoring not in _KNOWN_SCORING:
            raise InputError(f"item {self.item_id!r}: unknown scoring mode {self.scoring!r}")


@dataclass(frozen=True)
class QuestionnaireSchema:
    items: tuple[QuestionnaireItem, ...]

    def __post_init__(self):
        if not self.items:
            raise InputError("schema must contain at least one item")
        ids = [it.item_id for it in self.items]
        if len(set(ids)) != len(ids):
            raise InputError("schema item ids must be unique")

    @property
    def max_score(self) -> int:
        """Largest possible pair score: sum of (levels - 1) over items."""
        return sum(it.levels - 1 for it in self.items)


@dataclass(frozen=True)
class ParticipantProfile:
    id: str
    role: str
    responses: Mapping[str, int]
    availability: frozenset = frozenset()
    needs_infant_care: bool = False
    can_care_infant: bool = False

    def __post_init__(self):
        if self.role not in (USER, SUPPORTER):
            raise InputError(f"participant {self.id!r}: role must be 'user' or 'supporter'")
        object.__setattr__(self, "availability", frozenset(self.availability))


@dataclass(frozen=True)
class CompatibilityMatrix:
    scores: np.ndarray
    user_ids: tuple[str, ...]
    supporter_ids: tuple[str, ...]

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        if scores.shape != (len(self.user_ids), len(self.supporter_ids)):
            raise InputError(
                f"matrix shape {scores.shape} does not match "
                f"{len(self.user_ids)} users x {len(self.supporter_ids)} supporters"
            )
        if (scores < 0).any():
            raise InputError("compatibility scores must be non-negative")
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)


@dataclass(frozen=True)
class MatchingInstance:
    """Bipartite edge set with scores and required per-supporter loads."""

    edges: tuple[tuple[int, int, float], ...]
    capacities: tuple[int, ...]
    user_count: int
    supporter_count: int

    def __post_init__(self):
        if self.user_count < 1 or self.supporter_count < 1:
            raise InputError("instance needs at least one user and one supporter")
        if len(self.capacities) != self.supporter_count:
            raise InputError("capacities length must equal supporter count")
        if any(c < 0 for c in self.capacities):
            raise InputError("capacities must be non-negative")
        if sum(self.capacities) > self.user_count:
            raise InputError(
                f"total capacity {sum(self.capacities)} exceeds user count {self.user_count}"
            )
        seen = set()
        edges = []
        for u, j, w in self.edges:
            if not (0 <= u < self.user_count and 0 <= j < self.supporter_count):
                raise InputError(f"edge ({u}, {j}) references invalid indices")
            if (u, j) in seen:
                raise InputError(f"duplicate edge ({u}, {j})")
            if w < 0:
                raise InputError(f"edge ({u}, {j}) has negative score {w}")
            seen.add((u, j))
            edges.append((int(u), int(j), float(w)))
        object.__setattr__(self, "edges", tuple(edges))
        object.__setattr__(self, "capacities", tuple(int(c) for c in self.capacities))

    def score_of(self) -> dict[tuple[int, int], float]:
        return {(u, j): w for u, j, w in self.edges}

    def edges_of_user(self, u: int) -> list[tuple[int, float]]:
        return [(j, w) for uu, j, w in self.edges if uu == u]

    def max_score(self) -> float:
        return max(w for _, _, w in self.edges) if self.edges else 0.0


@dataclass(frozen=True)
class Matching:
    """Partial assignment user -> supporter.

    Users decoded with several simultaneous partners are recorded in
    ``conflicts`` and kept out of ``assignment``.
    """

    assignment: dict[int, int]
    conflicts: frozenset = frozenset()


def matching_key(matching: Matching) -> tuple[tuple[int, int], ...]:
    """Canonical hashable form, for deduplication across sample sets."""
    return tuple(sorted(matching.assignment.items()))


def matching_score(instance: MatchingInstance, matching: Matching) -> float:
    """Sum of edge scores over assigned pairs; conflicted users contribute 0."""
    lookup = instance.score_of()
    total = 0.0
    for u, j in matching.assignment.items():
        if (u, j) not in lookup:
            raise InputError(f"assigned pair ({u}, {j}) is not an instance edge")
        total += lookup[(u, j)]
    return total


@dataclass(frozen=True)
class SolvabilityReport:
    perfect_matching_possible: bool
    witness: Matching | None = None
    blocking_users: tuple[int, ...] | None = None
    reason: str = ""


def item_score(resp_user: int, resp_supporter: int, levels: int = 4) -> int:
    """Agreement score for one item: (levels - 1) minus the response gap."""
    for name, value in (("user", resp_user), ("supporter", resp_supporter)):
        if not 1 <= value <= levels:
            raise InputError(f"{name} response {value} outside [1, {levels}]")
    return (levels - 1) - abs(resp_user - resp_supporter)


def compatibility_matrix(
    users: Sequence[ParticipantProfile],
    supporters: Sequence[ParticipantProfile],
    schema: QuestionnaireSchema,
) -> CompatibilityMatrix:
    """Pairwise sums of per-item agreement scores."""
    if not users:
        raise InputError("users list is empty")
    if not supporters:
        raise InputError("supporters list is empty")

    def resp(profile: ParticipantProfile, item: QuestionnaireItem) -> int:
        try:
            return profile.responses[item.item_id]
        except KeyError:
            raise InputError(
                f"participant {profile.id!r} has no response for item {item.item_id!r}"
            ) from None

    scores = np.zeros((len(users), len(supporters)))
    for i, u in enumerate(users):
        for j, s in enumerate(supporters):
            scores[i, j] = sum(
                item_score(resp(u, it), resp(s, it), it.levels) for it in schema.items
            )
    return CompatibilityMatrix(
        scores=scores,
        user_ids=tuple(u.id for u in users),
        supporter_ids=tuple(s.id for s in supporters),
    )


def availability_overlaps(user: ParticipantProfile, supporter: ParticipantProfile) -> bool:
    return bool(user.availability & supporter.availability)


def infant_care_compatible(user: ParticipantProfile, supporter: ParticipantProfile) -> bool:
    return (not user.needs_infant_care) or supporter.can_care_infant


DEFAULT_FILTER_RULES: tuple[Callable[[ParticipantProfile, ParticipantProfile], bool], ...] = (
    availability_overlaps,
    infant_care_compatible,
)


def balanced_capacities(user_count: int, supporter_count: int) -> tuple[int, ...]:
    """Even split of users over supporters; remainder goes to the lowest indices."""
    base, extra = divmod(user_count, supporter_count)
    return tuple(base + (1 if j < extra else 0) for j in range(supporter_count))


def feasible_pairs(
    matrix: CompatibilityMatrix,
    users: Sequence[ParticipantProfile],
    supporters: Sequence[ParticipantProfile],
    capacities: Sequence[int] | None = None,
    rules: Iterable[Callable[[ParticipantProfile, ParticipantProfile], bool]] = DEFAULT_FILTER_RULES,
) -> MatchingInstance:
    """Drop pairs failing any rule; keep the rest as scored edges.

    One rule evaluation per pair, so the whole pass is O(n*m) pair checks.
    An empty edge set is a valid (unmatchable) result.
    """
    n, m = len(users), len(supporters)
    if matrix.scores.shape != (n, m):
        raise InputError("matrix dimensions do not match profile lists")
    rules = tuple(rules)
    edges = []
    for i, u in enumerate(users):
        for j, s in enumerate(supporters):
            if all(rule(u, s) for rule in rules):
                edges.append((i, j, float(matrix.scores[i, j])))
    caps = tuple(capacities) if capacities is not None else balanced_capacities(n, m)
    return MatchingInstance(
        edges=tuple(edges), capacities=caps, user_count=n, supporter_count=m
    )


def check_solvability(instance: MatchingInstance) -> SolvabilityReport:
    """Decide whether every user can get exactly one supporter at the exact quotas.

    Augmenting-path matching on the capacity-expanded graph.  Returns a witness
    matching when possible, otherwise a set of users violating the (capacity
    generalized) Hall condition.
    """
    n, m = instance.user_count, instance.supporter_count
    total = sum(instance.capacities)
    if total != n:
        return SolvabilityReport(
            perfect_matching_possible=False,
            blocking_users=tuple(range(n)),
            reason=f"total capacity {total} != user count {n}",
        )

    slot_supporter = [j for j in range(m) for _ in range(instance.capacities[j])]
    slots_of = [[] for _ in range(m)]
    for idx, j in enumerate(slot_supporter):
        slots_of[j].append(idx)
    adj = [[] for _ in range(n)]
    for u, j, _ in sorted(instance.edges):
        adj[u].extend(slots_of[j])

    match_slot = [-1] * len(slot_supporter)

    def augment(u: int, seen: set[int]) -> bool:
        for s in adj[u]:
            if s in seen:
                continue
            seen.add(s)
            if match_slot[s] == -1 or augment(match_slot[s], seen):
                match_slot[s] = u
                return True
        return False

    matched = [False] * n
    for u in range(n):
        matched[u] = augment(u, set())

    if all(matched):
        assignment = {match_slot[s]: slot_supporter[s] for s in range(len(match_slot)) if match_slot[s] != -1}
        return SolvabilityReport(True, witness=Matching(dict(sorted(assignment.items()))))

    # Alternating BFS from every unmatched user yields a Hall violator:
    # supporters reachable from the set have total capacity < |set|.
    blocking = {u for u in range(n) if not matched[u]}
    frontier = list(blocking)
    seen_slots: set[int] = set()
    while frontier:
        nxt = []
        for u in frontier:
            for s in adj[u]:
                if s in seen_slots:
                    continue
                seen_slots.add(s)
                w = match_slot[s]
                if w != -1 and w not in blocking:
                    blocking.add(w)
                    nxt.append(w)
        frontier = nxt
    return SolvabilityReport(
        perfect_matching_possible=False,
        blocking_users=tuple(sorted(blocking)),
        reason="no perfect matching under capacities",
    )


# ---------------------------------------------------------------------------
# file formats

def schema_to_dict(schema: QuestionnaireSchema) -> dict:
    return {
        "items": [
            {
                "item_id": it.item_id,
                "category": it.category,
                "levels": it.levels,
                "scoring": it.scoring,
            }
            for it in schema.items
        ]
    }


def schema_from_dict(doc: Mapping) -> QuestionnaireSchema:
    try:
        items = doc["items"]
    except (KeyError, TypeError):
        raise InputError("schema: missing 'items'") from None
    return QuestionnaireSchema(
        items=tuple(
            QuestionnaireItem(
                item_id=str(item["item_id"]),
                category=str(item.get("category", "")),
                levels=int(item.get("levels", 4)),
                scoring=str(item.get("scoring", AGREEMENT)),
            )
            for item in items
        )
    )


def _profile_from_dict(doc: Mapping, role: str, availability_map: Mapping) -> ParticipantProfile:
    try:
        pid = str(doc["id"])
        responses = {str(k): int(v) for k, v in doc["responses"].items()}
    except (KeyError, TypeError) as exc:
        raise InputError(f"{role} record missing field: {exc}") from None
    slots = doc.get("availability", availability_map.get(pid, []))
    return ParticipantProfile(
        id=pid,
        role=role,
        responses=responses,
        availability=frozenset(slots),
        needs_infant_care=bool(doc.get("needs_infant_care", False)),
        can_care_infant=bool(doc.get("can_care_infant", False)),
    )


def load_instance_file(path: str | Path) -> tuple[
    QuestionnaireSchema,
    list[ParticipantProfile],
    list[ParticipantProfile],
    CompatibilityMatrix | None,
]:
    """Read the instance document: schema, profiles, and optional precomputed matrix.

    Availability may sit inline per profile or in a top-level ``availability``
    map keyed by participant id.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read instance file {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise InputError("instance file must contain a JSON object")
    for key in ("schema", "users", "supporters"):
        if key not in doc:
            raise InputError(f"instance file: missing '{key}'")
    schema = schema_from_dict(doc["schema"])
    avail = doc.get("availability", {})
    users = [_profile_from_dict(u, USER, avail) for u in doc["users"]]
    supporters = [_profile_from_dict(s, SUPPORTER, avail) for s in doc["supporters"]]
    if not users:
        raise InputError("instance file: 'users' is empty")
    if not supporters:
        raise InputError("instance file: 'supporters' is empty")
    matrix = None
    if "matrix" in doc and doc["matrix"] is not None:
        matrix = CompatibilityMatrix(
            scores=np.asarray(doc["matrix"], dtype=float),
            user_ids=tuple(u.id for u in users),
            supporter_ids=tuple(s.id for s in supporters),
        )
    return schema, users, supporters, matrix


def write_instance_file(
    path: str | Path,
    schema: QuestionnaireSchema,
    users: Sequence[ParticipantProfile],
    supporters: Sequence[ParticipantProfile],
    matrix: CompatibilityMatrix | None = None,
) -> None:
    doc = {
        "schema": schema_to_dict(schema),
        "users": [
            {
                "id": u.id,
                "responses": dict(sorted(u.responses.items())),
                "needs_infant_care": u.needs_infant_care,
            }
            for u in users
        ],
        "supporters": [
            {
                "id": s.id,
                "responses": dict(sorted(s.responses.items())),
                "can_care_infant": s.can_care_infant,
            }
            for s in supporters
        ],
        "availability": {
            p.id: sorted(p.availability) for p in [*users, *supporters]
        },
    }
    if matrix is not None:
        doc["matrix"] = matrix.scores.tolist()
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def instance_to_dict(instance: MatchingInstance) -> dict:
    return {
        "edges": [[u, j, w] for u, j, w in instance.edges],
        "capacities": list(instance.capacities),
        "user_count": instance.user_count,
        "supporter_count": instance.supporter_count,
    }


def instance_from_dict(doc: Mapping) -> MatchingInstance:
    try:
        return MatchingInstance(
            edges=tuple((int(u), int(j), float(w)) for u, j, w in doc["edges"]),
            capacities=tuple(int(c) for c in doc["capacities"]),
            user_count=int(doc["user_count"]),
            supporter_count=int(doc["supporter_count"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"malformed matching-instance document: {exc}") from None


def write_matching_instance(path: str | Path, instance: MatchingInstance) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(instance), indent=2, sort_keys=True) + "\n")


def load_matching_instance(path: str | Path) -> MatchingInstance:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read matching instance {path}: {exc}") from None
    return instance_from_dict(doc)


def write_matrix_csv(
    path: str | Path,
    matrix: CompatibilityMatrix,
    instance: MatchingInstance | None = None,
) -> None:
    """Header row of supporter ids, one row per user; filtered pairs left empty."""
    keep = None
    if instance is not None:
        keep = {(u, j) for u, j, _ in instance.edges}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["", *matrix.supporter_ids])
        for i, uid in enumerate(matrix.user_ids):
            row: list[str] = [uid]
            for j in range(len(matrix.supporter_ids)):
                if keep is not None and (i, j) not in keep:
                    row.append("")
                else:
                    row.append(repr(float(matrix.scores[i, j])))
            writer.writerow(row)
