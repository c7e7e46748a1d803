import csv
import json

import numpy as np

from matchanneal import bench, instance as inst
from matchanneal.cli import main


def write_field_study_file(path, n=14, m=14, items=10, seed=0, slots=3):
    rng = np.random.default_rng(seed)
    schema = inst.QuestionnaireSchema(
        items=tuple(inst.QuestionnaireItem(item_id=f"q{k}") for k in range(items))
    )

    def profile(pid, role):
        return inst.ParticipantProfile(
            id=pid,
            role=role,
            responses={f"q{k}": int(rng.integers(1, 5)) for k in range(items)},
            availability=frozenset(int(s) for s in rng.choice(slots, size=2, replace=False)),
        )

    users = [profile(f"u{i}", inst.USER) for i in range(n)]
    supporters = [profile(f"s{j}", inst.SUPPORTER) for j in range(m)]
    inst.write_instance_file(path, schema, users, supporters)
    return path


class TestScoreCommand:
    def test_field_study_shaped_matrix(self, tmp_path, capsys):
        instance_path = write_field_study_file(tmp_path / "instance.json")
        out = tmp_path / "matrix.csv"
        assert main(["score", str(instance_path), "--out", str(out)]) == 0
        with open(out, newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 15  # header + 14 users
        assert len(rows[0]) == 15
        values = [float(cell) for row in rows[1:] for cell in row[1:]]
        assert all(0 <= v <= 30 for v in values)
        assert "min=" in capsys.readouterr().out

    def test_empty_users_is_input_error(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text(
            json.dumps(
                {
                    "schema": {"items": [{"item_id": "q0"}]},
                    "users": [],
                    "supporters": [{"id": "s0", "responses": {"q0": 1}}],
                }
            )
        )
        assert main(["score", str(path), "--out", str(tmp_path / "m.csv")]) == 2

    def test_rerun_byte_identical(self, tmp_path):
        instance_path = write_field_study_file(tmp_path / "instance.json")
        out1, out2 = tmp_path / "m1.csv", tmp_path / "m2.csv"
        assert main(["score", str(instance_path), "--out", str(out1)]) == 0
        assert main(["score", str(instance_path), "--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()


class TestPipelineChain:
    def test_filter_build_solve_analyze(self, tmp_path):
        instance_path = write_field_study_file(tmp_path / "instance.json", n=5, m=5, items=3, seed=1)
        filtered = tmp_path / "filtered.json"
        masked = tmp_path / "masked.csv"
        assert main(["filter", str(instance_path), "--out", str(filtered),
                     "--matrix-csv", str(masked)]) == 0
        assert masked.exists()

        model_path = tmp_path / "model.json"
        assert main(["build", str(filtered), "--out", str(model_path)]) == 0
        doc = json.loads(model_path.read_text())
        assert doc["decode_kind"] == "naive"

        samples_path = tmp_path / "samples.jsonl"
        assert main([
            "solve", str(model_path), "--out", str(samples_path),
            "--num-reads", "100", "--num-sweeps", "200", "--seed", "7",
        ]) == 0
        assert samples_path.read_text().count("\n") == 101

        report_path = tmp_path / "report.json"
        assert main([
            "analyze", str(samples_path), "--model", str(model_path),
            "--instance", str(filtered), "--out", str(report_path),
            "--alpha", "1.0", "--R", "0.1",
        ]) == 0
        report = json.loads(report_path.read_text())
        assert report["feasibility_rate"] > 0

    def test_build_approx_formulation(self, tmp_path):
        instance_path = write_field_study_file(tmp_path / "instance.json", n=6, m=3, items=3, seed=2)
        filtered = tmp_path / "filtered.json"
        main(["filter", str(instance_path), "--out", str(filtered)])
        model_path = tmp_path / "approx.json"
        code = main(["build", str(filtered), "--out", str(model_path),
                     "--formulation", "approx", "--lambda", "40"])
        if code == 0:
            doc = json.loads(model_path.read_text())
            assert doc["decode_kind"] == "approx"
            assert doc["num_vars"] == doc["user_count"]
        else:
            assert code == 4  # a user kept fewer than two candidates after filtering

    def test_solve_seed_determinism(self, tmp_path):
        instance_path = write_field_study_file(tmp_path / "instance.json", n=4, m=4, items=3, seed=3)
        filtered = tmp_path / "filtered.json"
        main(["filter", str(instance_path), "--out", str(filtered)])
        model_path = tmp_path / "model.json"
        main(["build", str(filtered), "--out", str(model_path)])
        s1, s2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        args = ["--num-reads", "50", "--num-sweeps", "200", "--seed", "13"]
        main(["solve", str(model_path), "--out", str(s1), *args])
        main(["solve", str(model_path), "--out", str(s2), *args])
        a = s1.read_text().splitlines()
        b = s2.read_text().splitlines()
        assert a[1:] == b[1:]  # identical samples; header differs only in duration


class TestBenchCommand:
    def _config_file(self, tmp_path, **overrides):
        doc = dict(
            kind="scaling",
            sizes=[3, 4],
            instances_per_size=2,
            num_sweeps=200,
            num_reads=100,
            seed=5,
            label="cli",
        )
        doc.update(overrides)
        path = tmp_path / "config.json"
        path.write_text(json.dumps(doc))
        return path

    def test_scaling_config_produces_report(self, tmp_path):
        config = self._config_file(tmp_path)
        out = tmp_path / "reports"
        assert main(["bench", str(config), "--out", str(out)]) == 0
        csv_path = out / "scaling_cli.csv"
        with open(csv_path, newline="") as fh:
            rows = list(csv.reader(fh))
        sizes = {row[1] for row in rows[1:]}
        assert sizes == {"3", "4"}

    def test_diversity_config_emits_both_r_families(self, tmp_path):
        config = self._config_file(
            tmp_path, kind="diversity", sizes=[3], alpha_grid=[0.0, 1.0], r_values=[0.1, 0.5]
        )
        out = tmp_path / "reports"
        assert main(["bench", str(config), "--out", str(out)]) == 0
        with open(out / "diversity_cli.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        r_column = rows[0].index("r")
        assert {row[r_column] for row in rows[1:]} == {"0.1", "0.5"}

    def test_same_config_same_csv(self, tmp_path):
        config = self._config_file(tmp_path)
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["bench", str(config), "--out", str(out1)]) == 0
        assert main(["bench", str(config), "--out", str(out2)]) == 0
        assert bench.csv_rows_without_time(out1 / "scaling_cli.csv") == \
            bench.csv_rows_without_time(out2 / "scaling_cli.csv")

    def test_size_cap_exit_code_names_size(self, tmp_path, capsys):
        config = self._config_file(tmp_path, sizes=[500])
        assert main(["bench", str(config), "--out", str(tmp_path / "r")]) == 3
        assert "500" in capsys.readouterr().err

    def test_bad_config_exit_code(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"kind": "nope", "sizes": [3], "instances_per_size": 1}))
        assert main(["bench", str(path), "--out", str(tmp_path / "r")]) == 2


class TestWorkflowCommand:
    def test_end_to_end_report(self, tmp_path, capsys):
        mi = bench.gen_field_replica(seed=21, n=6, m=6, retention=0.7)
        instance_path = tmp_path / "replica.json"
        inst.write_matching_instance(instance_path, mi)
        out = tmp_path / "workflow.json"
        code = main([
            "workflow", str(instance_path), "--out", str(out),
            "--num-reads", "200", "--num-sweeps", "500", "--seed", "1",
        ])
        assert code == 0
        printed = capsys.readouterr().out
        assert "optimal matchings" in printed
        report = json.loads(out.read_text())
        assert report["recovered_all"] is True
        for matching in report["optimal_matchings"]:
            assert sorted(int(u) for u in matching) == list(range(6))

    def test_unsolvable_exit_code(self, tmp_path, capsys):
        mi = inst.MatchingInstance(
            edges=((0, 0, 5.0), (1, 0, 5.0)),
            capacities=(1, 1),
            user_count=2,
            supporter_count=2,
        )
        path = tmp_path / "blocked.json"
        inst.write_matching_instance(path, mi)
        assert main(["workflow", str(path), "--seed", "1"]) == 4
        assert "blocking" in capsys.readouterr().err

    def test_approx_flag_warns_soft_capacities(self, tmp_path, capsys):
        mi = bench.gen_field_replica(seed=22, n=6, m=6, retention=0.8)
        path = tmp_path / "replica.json"
        inst.write_matching_instance(path, mi)
        code = main([
            "workflow", str(path), "--formulation", "approx",
            "--num-reads", "100", "--num-sweeps", "200", "--seed", "2",
        ])
        assert code == 0
        assert "soft" in capsys.readouterr().err

    def test_seed_reproducibility(self, tmp_path):
        mi = bench.gen_field_replica(seed=23, n=6, m=6, retention=0.7)
        path = tmp_path / "replica.json"
        inst.write_matching_instance(path, mi)
        outs = []
        for name in ("a.json", "b.json"):
            out = tmp_path / name
            main([
                "workflow", str(path), "--out", str(out),
                "--num-reads", "100", "--num-sweeps", "200", "--seed", "3",
            ])
            doc = json.loads(out.read_text())
            doc.pop("duration_solve")
            outs.append(doc)
        assert outs[0] == outs[1]


class TestMissingInput:
    def test_nonexistent_file_is_input_error(self, tmp_path):
        assert main(["score", str(tmp_path / "ghost.json"), "--out", str(tmp_path / "m.csv")]) == 2
