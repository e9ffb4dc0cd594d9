import numpy as np
import pytest

from ktlab.data import (
    Interaction,
    build_dataset,
    content_hash,
    dataset_stats,
    filter_and_truncate,
    load_interactions,
    sample_cold_start,
    split_holdout,
    write_interactions_csv,
)
from ktlab.errors import (
    EmptyDatasetError,
    InfeasibleSampleError,
    InfeasibleSplitError,
    ParseError,
    SchemaError,
)
from ktlab.eval.synth import default_world, synth_generate


def make_csv(tmp_path, rows, header="student_id,step,exercise_id,kc_id,kc_name,correct"):
    path = tmp_path / "data.csv"
    path.write_text("\n".join([header] + rows) + "\n", encoding="utf-8")
    return path


def interactions_for(sid, corrects, kc="k1", name="fractions"):
    return [
        Interaction(sid, i, f"{kc}-e{i}", kc, name, c)
        for i, c in enumerate(corrects)
    ]


class TestLoadInteractions:
    def test_three_row_csv(self, tmp_path):
        path = make_csv(
            tmp_path,
            [
                "s1,0,e1,k1,fractions,1",
                "s1,1,e2,k1,fractions,0",
                "s1,2,e3,k2,decimals,1",
            ],
        )
        ds = load_interactions(path)
        assert ds.n_learners == 1
        assert ds.n_interactions == 3
        assert [it.correct for it in ds.histories["s1"].interactions] == [1, 0, 1]

    def test_non_binary_correct_cites_row(self, tmp_path):
        path = make_csv(tmp_path, ["s1,0,e1,k1,fractions,1", "s1,1,e2,k1,fractions,2"])
        with pytest.raises(ParseError) as err:
            load_interactions(path)
        assert err.value.row == 2

    def test_missing_column_named(self, tmp_path):
        path = make_csv(
            tmp_path, ["s1,0,e1,k1,fractions"], header="student_id,step,exercise_id,kc_id,kc_name"
        )
        with pytest.raises(SchemaError, match="correct"):
            load_interactions(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("", encoding="utf-8")
        with pytest.raises(EmptyDatasetError):
            load_interactions(path)

    def test_header_only(self, tmp_path):
        path = make_csv(tmp_path, [])
        with pytest.raises(EmptyDatasetError):
            load_interactions(path)

    def test_step_column_optional(self, tmp_path):
        path = make_csv(
            tmp_path,
            ["s1,e1,k1,fractions,1", "s1,e2,k1,fractions,0"],
            header="student_id,exercise_id,kc_id,kc_name,correct",
        )
        ds = load_interactions(path)
        assert [it.step for it in ds.histories["s1"].interactions] == [0, 1]

    def test_schema_mapping(self, tmp_path):
        path = make_csv(
            tmp_path,
            ["u7,0,q1,skill9,algebra,1"],
            header="user,step,item,skill,skill_name,outcome",
        )
        ds = load_interactions(
            path,
            schema={
                "student_id": "user",
                "exercise_id": "item",
                "kc_id": "skill",
                "kc_name": "skill_name",
                "correct": "outcome",
            },
        )
        assert "u7" in ds.histories

    def test_multi_kc_exercise_rejected(self, tmp_path):
        path = make_csv(tmp_path, ["s1,0,e1,k1,fractions,1", "s2,0,e1,k2,decimals,1"])
        with pytest.raises(SchemaError, match="multi"):
            load_interactions(path)

    def test_synthetic_round_trip(self, tmp_path):
        world = default_world(n_kcs=5, seed=3)
        ds = synth_generate(world, n_students=100, steps_per_student=8, seed=9)
        path = tmp_path / "round.csv"
        write_interactions_csv(ds, path)
        loaded = load_interactions(path)
        assert loaded.histories == ds.histories
        assert dict(loaded.kc_table) == dict(ds.kc_table)
        assert loaded.exercise_set == ds.exercise_set


class TestFilterAndTruncate:
    def test_exactly_five_removed(self):
        ds = build_dataset(interactions_for("s1", [1] * 5))
        assert filter_and_truncate(ds).n_learners == 0

    def test_six_retained_unchanged(self):
        ds = build_dataset(interactions_for("s1", [1, 0, 1, 0, 1, 0]))
        out = filter_and_truncate(ds)
        assert out.histories["s1"] == ds.histories["s1"]

    def test_long_history_truncated_to_first_50(self):
        ds = build_dataset(interactions_for("s1", [i % 2 for i in range(120)]))
        out = filter_and_truncate(ds)
        hist = out.histories["s1"].interactions
        assert len(hist) == 50
        assert [it.exercise_id for it in hist] == [f"k1-e{i}" for i in range(50)]

    def test_idempotent(self):
        its = interactions_for("s1", [i % 2 for i in range(80)]) + interactions_for(
            "s2", [1] * 9, kc="k2", name="decimals"
        )
        ds = build_dataset(its)
        once = filter_and_truncate(ds)
        twice = filter_and_truncate(once)
        assert once.histories == twice.histories


class TestSplitHoldout:
    def _dataset(self, n=100):
        its = []
        for s in range(n):
            its += interactions_for(f"s{s:03d}", [1, 0, 1])
        return build_dataset(its)

    def test_fraction_split_sizes_and_disjoint(self):
        ds = self._dataset(100)
        train, test = split_holdout(ds, 0.2, seed=7)
        assert train.n_learners == 80 and test.n_learners == 20
        assert not set(train.histories) & set(test.histories)

    def test_determinism(self):
        ds = self._dataset(50)
        a = split_holdout(ds, 0.2, seed=7)
        b = split_holdout(ds, 0.2, seed=7)
        assert set(a[1].histories) == set(b[1].histories)

    def test_floor_rule(self):
        ds = self._dataset(49)
        train, test = split_holdout(ds, 0.2, seed=1)
        assert test.n_learners == 9  # floor(0.2 * 49)

    def test_infeasible_count(self):
        ds = self._dataset(10)
        with pytest.raises(InfeasibleSplitError):
            split_holdout(ds, 11, seed=0)

    def test_provenance_tags(self):
        train, test = split_holdout(self._dataset(10), 0.2, seed=0)
        assert train.provenance["role"] == "train"
        assert test.provenance["role"] == "test"


class TestSampleColdStart:
    def _train(self, n=80):
        its = []
        for s in range(n):
            its += interactions_for(f"s{s:03d}", [1, 0, 1])
        return build_dataset(its, provenance={"role": "train"})

    def test_sample_is_subset(self):
        train = self._train()
        sample = sample_cold_start(train, 8, seed=3)
        assert sample.n_learners == 8
        assert set(sample.histories) <= set(train.histories)

    def test_full_size_is_identity_set(self):
        train = self._train(20)
        sample = sample_cold_start(train, 20, seed=3)
        assert set(sample.histories) == set(train.histories)

    def test_too_large(self):
        with pytest.raises(InfeasibleSampleError):
            sample_cold_start(self._train(10), 11, seed=0)

    def test_seeds_vary(self):
        train = self._train(80)
        picks = [frozenset(sample_cold_start(train, 8, seed=s).histories) for s in range(1, 6)]
        # all five samples identical would be astronomically unlikely
        assert len(set(picks)) > 1


class TestDatasetStats:
    def test_empty(self):
        report = dataset_stats(build_dataset([]))
        assert report.to_dict() == {
            "n_interactions": 0,
            "n_learners": 0,
            "n_exercises": 0,
            "n_kcs": 0,
            "median_interactions_per_learner": 0,
            "median_kcs_per_learner": 0,
        }

    def test_lower_median(self):
        its = interactions_for("s1", [1] * 10) + interactions_for("s2", [0] * 20, kc="k2", name="x")
        report = dataset_stats(build_dataset(its))
        assert report.median_interactions_per_learner == 10
        assert report.n_interactions == 30
        assert report.n_learners == 2

    def test_consistency_on_synthetic(self):
        ds = synth_generate(default_world(n_kcs=4, seed=1), 30, 7, seed=2)
        report = dataset_stats(ds)
        assert report.n_interactions == sum(len(h) for h in ds.histories.values())
        assert report.n_learners == len(ds.histories)
        assert report.n_kcs == len(ds.kc_table)


def test_content_hash_changes_with_content():
    a = build_dataset(interactions_for("s1", [1, 0]))
    b = build_dataset(interactions_for("s1", [1, 1]))
    assert content_hash(a) != content_hash(b)
    assert content_hash(a) == content_hash(build_dataset(interactions_for("s1", [1, 0])))
