"""Interaction data model, CSV ingestion, filtering, and split/sampling machinery.

The canonical on-disk form is a UTF-8 CSV with header
``student_id,step,exercise_id,kc_id,kc_name,correct`` where ``correct`` is 0
or 1 and ``step`` is optional (file order is used when absent). Everything
downstream (formatting, tracers, the evaluation harness) consumes the
immutable :class:`InteractionDataset` built here.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import (
    EmptyDatasetError,
    InfeasibleSampleError,
    InfeasibleSplitError,
    ParameterError,
    ParseError,
    SchemaError,
)

CANONICAL_COLUMNS = ("student_id", "step", "exercise_id", "kc_id", "kc_name", "correct")
REQUIRED_COLUMNS = ("student_id", "exercise_id", "kc_id", "kc_name", "correct")


@dataclass(frozen=True)
class Exercise:
    """An exercise reference: what a tracer is asked to predict about."""

    exercise_id: str
    kc_id: str
    kc_name: str


@dataclass(frozen=True)
class Interaction:
    """One graded attempt: a student answered an exercise on one KC."""

    student_id: str
    step: int
    exercise_id: str
    kc_id: str
    kc_name: str
    correct: int

    def __post_init__(self):
        if self.correct not in (0, 1):
            raise ParseError(f"correct must be 0 or 1, got {self.correct!r}")
        if self.step < 0:
            raise ParseError(f"step must be non-negative, got {self.step}")

    def exercise(self) -> Exercise:
        return Exercise(self.exercise_id, self.kc_id, self.kc_name)


@dataclass(frozen=True)
class StudentHistory:
    """A student's interactions, ordered by step ascending."""

    student_id: str
    interactions: tuple[Interaction, ...]

    def __len__(self) -> int:
        return len(self.interactions)

    def prefix(self, t: int) -> "StudentHistory":
        """History restricted to the first ``t`` interactions."""
        return StudentHistory(self.student_id, self.interactions[:t])


@runtime_checkable
class TracerContract(Protocol):
    """Every model in this repo predicts next-attempt correctness this way.

    ``predict`` must return a finite probability in [0, 1], be deterministic
    given fixed parameters and inputs, and must not mutate any state.
    """

    def predict(self, history: StudentHistory, target: Exercise) -> float: ...


@dataclass(frozen=True)
class StatsReport:
    n_interactions: int
    n_learners: int
    n_exercises: int
    n_kcs: int
    median_interactions_per_learner: int
    median_kcs_per_learner: int

    def to_dict(self) -> dict:
        return {
            "n_interactions": self.n_interactions,
            "n_learners": self.n_learners,
            "n_exercises": self.n_exercises,
            "n_kcs": self.n_kcs,
            "median_interactions_per_learner": self.median_interactions_per_learner,
            "median_kcs_per_learner": self.median_kcs_per_learner,
        }


@dataclass(frozen=True)
class InteractionDataset:
    """Immutable collection of per-student histories plus KC/exercise tables.

    ``provenance`` records how the dataset was derived (split role, seed) so
    the evaluation harness can assert that no test-student data reaches a
    fit call.
    """

    histories: Mapping[str, StudentHistory]
    kc_table: Mapping[str, str]
    exercise_set: frozenset[str]
    provenance: Mapping[str, object] = field(default_factory=dict)

    @property
    def n_learners(self) -> int:
        return len(self.histories)

    @property
    def n_interactions(self) -> int:
        return sum(len(h) for h in self.histories.values())

    def student_ids(self) -> list[str]:
        return sorted(self.histories)

    def all_interactions(self) -> Iterable[Interaction]:
        for sid in self.student_ids():
            yield from self.histories[sid].interactions

    def with_provenance(self, **kwargs) -> "InteractionDataset":
        prov = dict(self.provenance)
        prov.update(kwargs)
        return replace(self, provenance=prov)


def build_dataset(interactions: Sequence[Interaction], provenance: dict | None = None) -> InteractionDataset:
    """Assemble a dataset, re-indexing steps per student to 0..n-1.

    Interactions are ordered by their given step (stable), then re-indexed so
    steps are contiguous. Rejects exercises that map to more than one KC and
    KC ids that map to more than one name.
    """
    by_student: dict[str, list[Interaction]] = {}
    for it in interactions:
        by_student.setdefault(it.student_id, []).append(it)

    kc_table: dict[str, str] = {}
    exercise_kc: dict[str, str] = {}
    histories: dict[str, StudentHistory] = {}
    for sid, its in by_student.items():
        its.sort(key=lambda it: it.step)
        fixed = []
        for i, it in enumerate(its):
            if it.kc_id in kc_table and kc_table[it.kc_id] != it.kc_name:
                raise SchemaError(
                    f"kc_id {it.kc_id!r} maps to multiple names: "
                    f"{kc_table[it.kc_id]!r} and {it.kc_name!r}"
                )
            kc_table[it.kc_id] = it.kc_name
            if it.exercise_id in exercise_kc and exercise_kc[it.exercise_id] != it.kc_id:
                raise SchemaError(
                    f"exercise {it.exercise_id!r} is tagged with multiple KCs "
                    f"({exercise_kc[it.exercise_id]!r}, {it.kc_id!r}); "
                    "multi-KC exercises are not supported"
                )
            exercise_kc[it.exercise_id] = it.kc_id
            fixed.append(replace(it, step=i))
        histories[sid] = StudentHistory(sid, tuple(fixed))

    return InteractionDataset(
        histories=histories,
        kc_table=kc_table,
        exercise_set=frozenset(exercise_kc),
        provenance=provenance or {},
    )


def load_interactions(path, schema: Mapping[str, str] | None = None) -> InteractionDataset:
    """Load the canonical interaction CSV.

    ``schema`` maps canonical column names to the file's column names, e.g.
    ``{"student_id": "user"}``; unmapped columns use their canonical names.
    When the step column is absent, file order within each student is used.
    Row numbers in errors count data rows (header excluded, first data row
    is row 1).
    """
    colmap = {c: c for c in CANONICAL_COLUMNS}
    if schema:
        colmap.update(schema)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDatasetError(f"{path}: file is empty") from None
        index = {name: i for i, name in enumerate(header)}
        for canonical in REQUIRED_COLUMNS:
            if colmap[canonical] not in index:
                raise SchemaError(f"{path}: missing required column {colmap[canonical]!r}")
        has_step = colmap["step"] in index

        def col(row, canonical):
            return row[index[colmap[canonical]]]

        interactions: list[Interaction] = []
        order_within: dict[str, int] = {}
        for rownum, row in enumerate(reader, start=1):
            if not row:
                continue
            raw_correct = col(row, "correct").strip()
            if raw_correct not in ("0", "1"):
                raise ParseError(f"correct must be 0 or 1, got {raw_correct!r}", row=rownum)
            sid = col(row, "student_id")
            if has_step:
                raw_step = col(row, "step").strip()
                try:
                    step = int(raw_step)
                except ValueError:
                    raise ParseError(f"step must be an integer, got {raw_step!r}", row=rownum) from None
                if step < 0:
                    raise ParseError(f"step must be non-negative, got {step}", row=rownum)
            else:
                step = order_within.get(sid, 0)
                order_within[sid] = step + 1
            interactions.append(
                Interaction(
                    student_id=sid,
                    step=step,
                    exercise_id=col(row, "exercise_id"),
                    kc_id=col(row, "kc_id"),
                    kc_name=col(row, "kc_name"),
                    correct=int(raw_correct),
                )
            )

    if not interactions:
        raise EmptyDatasetError(f"{path}: no interaction rows")
    return build_dataset(interactions, provenance={"source": str(path)})


def write_interactions_csv(ds: InteractionDataset, path) -> None:
    """Write a dataset back to the canonical CSV form."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CANONICAL_COLUMNS)
        for it in ds.all_interactions():
            writer.writerow([it.student_id, it.step, it.exercise_id, it.kc_id, it.kc_name, it.correct])


def filter_and_truncate(
    ds: InteractionDataset, min_interactions: int = 6, max_interactions: int = 50
) -> InteractionDataset:
    """Drop students with fewer than ``min_interactions`` attempts and keep
    each remaining student's first ``max_interactions`` attempts.

    Idempotent: applying it twice equals applying it once.
    """
    if min_interactions < 1:
        raise ParameterError("min_interactions must be >= 1")
    kept: list[Interaction] = []
    for sid in ds.student_ids():
        hist = ds.histories[sid]
        if len(hist) < min_interactions:
            continue
        kept.extend(hist.interactions[:max_interactions])
    return build_dataset(kept, provenance=dict(ds.provenance))


def split_holdout(ds: InteractionDataset, test_spec, seed: int):
    """Learner-level holdout split.

    ``test_spec`` is either a fraction in (0, 1) of learners (floored to an
    integer count) or an absolute learner count. Membership is deterministic
    for a fixed seed and the two student sets are disjoint.
    """
    students = ds.student_ids()
    n = len(students)
    if isinstance(test_spec, float):
        if not 0.0 < test_spec < 1.0:
            raise InfeasibleSplitError(f"fraction must be in (0,1), got {test_spec}")
        n_test = int(np.floor(test_spec * n))
    else:
        n_test = int(test_spec)
    if n_test > n:
        raise InfeasibleSplitError(f"requested {n_test} test learners but only {n} available")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    test_ids = {students[i] for i in perm[:n_test]}

    src = content_hash(ds)
    train_its = [it for sid in students if sid not in test_ids for it in ds.histories[sid].interactions]
    test_its = [it for sid in students if sid in test_ids for it in ds.histories[sid].interactions]
    train = build_dataset(
        train_its, provenance={"role": "train", "split_seed": seed, "source_hash": src}
    )
    test = build_dataset(
        test_its, provenance={"role": "test", "split_seed": seed, "source_hash": src}
    )
    return train, test


def sample_cold_start(train: InteractionDataset, n_students: int, seed: int) -> InteractionDataset:
    """Uniform sample of ``n_students`` learners without replacement."""
    students = train.student_ids()
    if n_students > len(students):
        raise InfeasibleSampleError(
            f"requested {n_students} students but train pool has {len(students)}"
        )
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(students), size=n_students, replace=False)
    chosen = {students[i] for i in picked}
    its = [it for sid in students if sid in chosen for it in train.histories[sid].interactions]
    prov = dict(train.provenance)
    prov["cold_start_n"] = n_students
    prov["cold_start_seed"] = seed
    return build_dataset(its, provenance=prov)


def _lower_median(values: list[int]) -> int:
    if not values:
        return 0
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def dataset_stats(ds: InteractionDataset) -> StatsReport:
    """Exact counts plus lower-medians of the per-learner distributions."""
    per_learner_n = [len(h) for h in ds.histories.values()]
    per_learner_kcs = [len({it.kc_id for it in h.interactions}) for h in ds.histories.values()]
    return StatsReport(
        n_interactions=sum(per_learner_n),
        n_learners=len(per_learner_n),
        n_exercises=len(ds.exercise_set),
        n_kcs=len(ds.kc_table),
        median_interactions_per_learner=_lower_median(per_learner_n),
        median_kcs_per_learner=_lower_median(per_learner_kcs),
    )


def content_hash(ds: InteractionDataset) -> str:
    """Stable hash of dataset content, used for caching and provenance."""
    h = hashlib.sha256()
    for it in ds.all_interactions():
        h.update(
            json.dumps(
                [it.student_id, it.step, it.exercise_id, it.kc_id, it.kc_name, it.correct]
            ).encode()
        )
    return h.hexdigest()
