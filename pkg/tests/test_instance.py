import itertools
import json

import numpy as np
import pytest

from matchanneal import instance as inst
from matchanneal.errors import InputError


def make_schema(num_items=10, levels=4):
    return inst.QuestionnaireSchema(
        items=tuple(
            inst.QuestionnaireItem(item_id=f"q{k}", category="c", levels=levels)
            for k in range(num_items)
        )
    )


def make_profile(pid, role, responses, slots=(1,), **kw):
    return inst.ParticipantProfile(
        id=pid, role=role, responses=responses, availability=frozenset(slots), **kw
    )


class TestItemScore:
    def test_exact_match(self):
        assert inst.item_score(2, 2, 4) == 3

    def test_maximal_difference(self):
        assert inst.item_score(1, 4, 4) == 0

    def test_one_point_difference(self):
        assert inst.item_score(3, 2, 4) == 2

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            levels = int(rng.integers(2, 8))
            a, b = rng.integers(1, levels + 1, size=2)
            s = inst.item_score(int(a), int(b), levels)
            assert s == inst.item_score(int(b), int(a), levels)
            assert 0 <= s <= levels - 1

    @pytest.mark.parametrize("bad", [(0, 2), (5, 2), (2, 0), (2, 5)])
    def test_out_of_range(self, bad):
        with pytest.raises(InputError):
            inst.item_score(bad[0], bad[1], 4)


class TestCompatibilityMatrix:
    def test_identical_responses_hit_max(self):
        schema = make_schema(10)
        responses = {f"q{k}": 2 for k in range(10)}
        users = [make_profile("u0", inst.USER, responses)]
        supporters = [make_profile("s0", inst.SUPPORTER, responses)]
        matrix = inst.compatibility_matrix(users, supporters, schema)
        assert matrix.scores[0, 0] == 30
        assert schema.max_score == 30

    def test_maximal_disagreement_is_zero(self):
        schema = make_schema(10)
        users = [make_profile("u0", inst.USER, {f"q{k}": 1 for k in range(10)})]
        supporters = [make_profile("s0", inst.SUPPORTER, {f"q{k}": 4 for k in range(10)})]
        matrix = inst.compatibility_matrix(users, supporters, schema)
        assert matrix.scores[0, 0] == 0

    def test_single_item(self):
        schema = make_schema(1)
        users = [make_profile("u0", inst.USER, {"q0": 1})]
        supporters = [make_profile("s0", inst.SUPPORTER, {"q0": 3})]
        matrix = inst.compatibility_matrix(users, supporters, schema)
        assert matrix.scores[0, 0] == 1

    def test_missing_response_names_participant_and_item(self):
        schema = make_schema(2)
        users = [make_profile("u7", inst.USER, {"q0": 1})]
        supporters = [make_profile("s0", inst.SUPPORTER, {"q0": 1, "q1": 1})]
        with pytest.raises(InputError, match="u7.*q1"):
            inst.compatibility_matrix(users, supporters, schema)

    def test_bounds_invariant(self):
        rng = np.random.default_rng(1)
        schema = make_schema(10)
        users = [
            make_profile(f"u{i}", inst.USER, {f"q{k}": int(rng.integers(1, 5)) for k in range(10)})
            for i in range(5)
        ]
        supporters = [
            make_profile(f"s{j}", inst.SUPPORTER, {f"q{k}": int(rng.integers(1, 5)) for k in range(10)})
            for j in range(4)
        ]
        matrix = inst.compatibility_matrix(users, supporters, schema)
        assert (matrix.scores >= 0).all() and (matrix.scores <= 30).all()


class TestFeasiblePairs:
    def _pair(self, user_slots, supp_slots, needs=False, can=False):
        schema = make_schema(1)
        users = [make_profile("u0", inst.USER, {"q0": 1}, slots=user_slots, needs_infant_care=needs)]
        supporters = [make_profile("s0", inst.SUPPORTER, {"q0": 1}, slots=supp_slots, can_care_infant=can)]
        matrix = inst.compatibility_matrix(users, supporters, schema)
        return inst.feasible_pairs(matrix, users, supporters)

    def test_overlap_retained(self):
        assert len(self._pair({1, 2}, {2, 3}).edges) == 1

    def test_disjoint_slots_dropped(self):
        assert len(self._pair({1}, {2}).edges) == 0

    def test_infant_care_rule(self):
        assert len(self._pair({1}, {1}, needs=True, can=False).edges) == 0
        assert len(self._pair({1}, {1}, needs=True, can=True).edges) == 1

    def test_subset_and_deterministic(self):
        rng = np.random.default_rng(2)
        schema = make_schema(2)
        users = [
            make_profile(
                f"u{i}", inst.USER,
                {"q0": int(rng.integers(1, 5)), "q1": int(rng.integers(1, 5))},
                slots=set(rng.choice(5, size=2, replace=False).tolist()),
            )
            for i in range(6)
        ]
        supporters = [
            make_profile(
                f"s{j}", inst.SUPPORTER,
                {"q0": int(rng.integers(1, 5)), "q1": int(rng.integers(1, 5))},
                slots=set(rng.choice(5, size=2, replace=False).tolist()),
            )
            for j in range(6)
        ]
        matrix = inst.compatibility_matrix(users, supporters, schema)
        first = inst.feasible_pairs(matrix, users, supporters)
        second = inst.feasible_pairs(matrix, users, supporters)
        assert first == second
        all_pairs = {(i, j) for i in range(6) for j in range(6)}
        assert {(u, j) for u, j, _ in first.edges} <= all_pairs


class TestBalancedCapacities:
    def test_divisible(self):
        assert inst.balanced_capacities(8, 4) == (2, 2, 2, 2)

    def test_remainder_to_lowest_indices(self):
        assert inst.balanced_capacities(7, 3) == (3, 2, 2)

    def test_one_to_one(self):
        assert inst.balanced_capacities(5, 5) == (1, 1, 1, 1, 1)


def brute_force_solvable(mi: inst.MatchingInstance) -> bool:
    """Oracle: enumerate every user->supporter map over instance edges."""
    adjacency = [[j for u, j, _ in mi.edges if u == uu] for uu in range(mi.user_count)]
    if not all(adjacency):
        return False
    for combo in itertools.product(*adjacency):
        loads = [0] * mi.supporter_count
        for j in combo:
            loads[j] += 1
        if tuple(loads) == mi.capacities:
            return True
    return False


class TestCheckSolvability:
    def test_witness_on_simple_instance(self):
        mi = inst.MatchingInstance(
            edges=((0, 0, 1.0), (1, 1, 1.0)), capacities=(1, 1), user_count=2, supporter_count=2
        )
        report = inst.check_solvability(mi)
        assert report.perfect_matching_possible
        assert report.witness.assignment == {0: 0, 1: 1}

    def test_capacity_deficit(self):
        mi = inst.MatchingInstance(
            edges=((0, 0, 1.0), (1, 0, 1.0)), capacities=(1,), user_count=2, supporter_count=1
        )
        report = inst.check_solvability(mi)
        assert not report.perfect_matching_possible
        assert report.blocking_users == (0, 1)

    def test_hall_violation_blocking_set(self):
        # users 0 and 1 both only reach supporter 0
        mi = inst.MatchingInstance(
            edges=((0, 0, 1.0), (1, 0, 1.0), (2, 1, 1.0)),
            capacities=(1, 1, 1),
            user_count=3,
            supporter_count=3,
        )
        report = inst.check_solvability(mi)
        assert not report.perfect_matching_possible
        blocking = set(report.blocking_users)
        assert {0, 1} <= blocking
        neighbor_capacity = sum(
            mi.capacities[j]
            for j in {j for u, j, _ in mi.edges if u in blocking}
        )
        assert neighbor_capacity < len(blocking)

    def test_agrees_with_exhaustive_enumeration(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n = int(rng.integers(1, 5))
            m = int(rng.integers(1, 5))
            mask = rng.random((n, m)) < 0.55
            edges = tuple(
                (i, j, float(rng.integers(1, 10)))
                for i in range(n)
                for j in range(m)
                if mask[i, j]
            )
            caps = list(inst.balanced_capacities(n, m))
            if not edges:
                continue
            mi = inst.MatchingInstance(
                edges=edges, capacities=tuple(caps), user_count=n, supporter_count=m
            )
            assert inst.check_solvability(mi).perfect_matching_possible == brute_force_solvable(mi)

    def test_field_scale_masks_typically_solvable(self):
        # 14x14 at the field study's 38% retention: the matching survives most masks
        rng = np.random.default_rng(4)
        ok = 0
        trials = 60
        for _ in range(trials):
            keep = rng.choice(196, size=74, replace=False)
            edges = tuple((int(k // 14), int(k % 14), 1.0) for k in sorted(keep))
            mi = inst.MatchingInstance(
                edges=edges, capacities=(1,) * 14, user_count=14, supporter_count=14
            )
            ok += inst.check_solvability(mi).perfect_matching_possible
        assert ok / trials >= 0.8


class TestInstanceValidation:
    def test_duplicate_edge_rejected(self):
        with pytest.raises(InputError, match="duplicate"):
            inst.MatchingInstance(
                edges=((0, 0, 1.0), (0, 0, 2.0)), capacities=(1,), user_count=1, supporter_count=1
            )

    def test_bad_index_rejected(self):
        with pytest.raises(InputError):
            inst.MatchingInstance(
                edges=((0, 5, 1.0),), capacities=(1,), user_count=1, supporter_count=1
            )

    def test_capacity_exceeding_users_rejected(self):
        with pytest.raises(InputError, match="capacity"):
            inst.MatchingInstance(
                edges=((0, 0, 1.0),), capacities=(3,), user_count=1, supporter_count=1
            )


class TestFileFormats:
    def _write_instance(self, path):
        schema = make_schema(2)
        users = [
            make_profile("u0", inst.USER, {"q0": 1, "q1": 2}, slots=(1, 2)),
            make_profile("u1", inst.USER, {"q0": 3, "q1": 4}, slots=(2,), needs_infant_care=True),
        ]
        supporters = [
            make_profile("s0", inst.SUPPORTER, {"q0": 2, "q1": 2}, slots=(2,), can_care_infant=True),
            make_profile("s1", inst.SUPPORTER, {"q0": 4, "q1": 1}, slots=(3,)),
        ]
        inst.write_instance_file(path, schema, users, supporters)
        return schema, users, supporters

    def test_instance_file_round_trip(self, tmp_path):
        path = tmp_path / "instance.json"
        schema, users, supporters, = self._write_instance(path)
        schema2, users2, supporters2, matrix = inst.load_instance_file(path)
        assert matrix is None
        assert schema2 == schema
        assert users2 == users
        assert supporters2 == supporters
        # rewrite must be byte-identical
        path2 = tmp_path / "again.json"
        inst.write_instance_file(path2, schema2, users2, supporters2)
        assert path.read_bytes() == path2.read_bytes()

    def test_missing_keys_rejected(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text(json.dumps({"schema": {"items": []}}))
        with pytest.raises(InputError, match="users"):
            inst.load_instance_file(path)

    def test_matching_instance_round_trip(self, tmp_path):
        mi = inst.MatchingInstance(
            edges=((0, 0, 2.5), (0, 1, 1.0), (1, 1, 3.0)),
            capacities=(1, 1),
            user_count=2,
            supporter_count=2,
        )
        path = tmp_path / "mi.json"
        inst.write_matching_instance(path, mi)
        assert inst.load_matching_instance(path) == mi
        path2 = tmp_path / "mi2.json"
        inst.write_matching_instance(path2, inst.load_matching_instance(path))
        assert path.read_bytes() == path2.read_bytes()

    def test_matrix_csv_masks_filtered_pairs(self, tmp_path):
        matrix = inst.CompatibilityMatrix(
            scores=np.array([[1.0, 2.0], [3.0, 4.0]]),
            user_ids=("u0", "u1"),
            supporter_ids=("s0", "s1"),
        )
        mi = inst.MatchingInstance(
            edges=((0, 0, 1.0), (1, 1, 4.0)), capacities=(1, 1), user_count=2, supporter_count=2
        )
        path = tmp_path / "matrix.csv"
        inst.write_matrix_csv(path, matrix, instance=mi)
        rows = [line.split(",") for line in path.read_text().strip().splitlines()]
        assert rows[0] == ["", "s0", "s1"]
        assert rows[1] == ["u0", "1.0", ""]
        assert rows[2] == ["u1", "", "4.0"]


class TestMatchingScore:
    def test_sums_assigned_edges(self):
        mi = inst.MatchingInstance(
            edges=((0, 0, 2.0), (1, 1, 3.0), (0, 1, 7.0)),
            capacities=(1, 1),
            user_count=2,
            supporter_count=2,
        )
        score = inst.matching_score(mi, inst.Matching(assignment={0: 0, 1: 1}))
        assert score == 5.0

    def test_rejects_non_edges(self):
        mi = inst.MatchingInstance(
            edges=((0, 0, 2.0),), capacities=(1,), user_count=1, supporter_count=1
        )
        with pytest.raises(InputError):
            inst.matching_score(mi, inst.Matching(assignment={0: 5}))
