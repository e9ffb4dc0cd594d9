"""Experiment protocols: sequential scoring, the cold-start grid, cross-domain.

Scoring follows one-step-ahead prediction: every test interaction with at
least one preceding interaction is predicted from the student's true history
prefix. The grid runner caches finished cells by content hash so interrupted
runs resume instead of recomputing.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from ..data import InteractionDataset, TracerContract, content_hash, sample_cold_start
from ..errors import ProtocolViolationError, UndefinedAucError, UnsupportedConfigError
from .metrics import EvalRecord, auc, calibration


class TracerFactory(Protocol):
    """Builds a fitted tracer from a training dataset and a seed."""

    name: str

    def fit(self, train: InteractionDataset, seed: int) -> TracerContract: ...

    def fingerprint(self) -> str: ...


@dataclass(frozen=True)
class ExperimentGrid:
    datasets: tuple[str, ...]
    models: tuple[str, ...]
    sizes: tuple[int, ...] = (8, 16, 32, 64)
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    representation: str = "description"

    def __post_init__(self):
        if any(s < 1 for s in self.sizes):
            raise UnsupportedConfigError("cold-start sizes must be positive")
        if len(set(self.seeds)) != len(self.seeds):
            raise UnsupportedConfigError("grid seeds must be distinct")


@dataclass(frozen=True)
class CellResult:
    dataset: str
    model: str
    representation: str
    n_students: int
    seed: int
    auc: float | None
    valid: bool
    n_records: int
    ece: float | None = None

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "model": self.model,
            "representation": self.representation,
            "n_students": self.n_students,
            "seed": self.seed,
            "auc": self.auc,
            "valid": self.valid,
            "n_records": self.n_records,
            "ece": self.ece,
        }


@dataclass(frozen=True)
class AggregateRow:
    dataset: str
    model: str
    representation: str
    n_students: int
    mean_auc: float | None
    std_auc: float | None
    n_valid: int


@dataclass(frozen=True)
class ResultsTable:
    cells: tuple[CellResult, ...]
    aggregates: tuple[AggregateRow, ...]

    def cell(self, dataset: str, model: str, size: int, seed: int) -> CellResult:
        for c in self.cells:
            if (c.dataset, c.model, c.n_students, c.seed) == (dataset, model, size, seed):
                return c
        raise KeyError((dataset, model, size, seed))

    def aggregate(self, dataset: str, model: str, size: int) -> AggregateRow:
        for a in self.aggregates:
            if (a.dataset, a.model, a.n_students) == (dataset, model, size):
                return a
        raise KeyError((dataset, model, size))


def predict_targets(tracer: TracerContract, pairs) -> np.ndarray:
    """Probabilities for (history prefix, target exercise) pairs.

    Uses a tracer's vectorized path when it has one, otherwise loops.
    """
    batch = getattr(tracer, "predict_batch", None)
    if batch is not None:
        return np.asarray(batch(pairs), dtype=np.float64)
    return np.array([tracer.predict(h, t) for h, t in pairs], dtype=np.float64)


def score_dataset(tracer: TracerContract, ds: InteractionDataset, min_step: int = 1) -> list[EvalRecord]:
    """One EvalRecord per test interaction with step >= min_step, predicted
    from the student's true preceding history."""
    pairs = []
    truth = []
    for sid in ds.student_ids():
        hist = ds.histories[sid]
        for t in range(min_step, len(hist)):
            target = hist.interactions[t]
            pairs.append((hist.prefix(t), target.exercise()))
            truth.append(target)
    scores = predict_targets(tracer, pairs)
    return [
        EvalRecord(
            y_true=it.correct,
            y_score=float(np.clip(s, 0.0, 1.0)),
            student_id=it.student_id,
            step=it.step,
            kc_id=it.kc_id,
        )
        for it, s in zip(truth, scores)
    ]


def assert_split_hygiene(train: InteractionDataset, test: InteractionDataset) -> None:
    if train.provenance.get("role") != "train":
        raise ProtocolViolationError("training pool is not tagged as a train split")
    if test.provenance.get("role") != "test":
        raise ProtocolViolationError("test set is not tagged as a test split")
    overlap = set(train.histories) & set(test.histories)
    if overlap:
        raise ProtocolViolationError(f"{len(overlap)} students appear in both splits")


def _cell_key(dataset_hash, model, fingerprint, size, seed, representation):
    payload = json.dumps(
        [dataset_hash, model, fingerprint, size, seed, representation], sort_keys=True
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def _atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def run_cold_start(
    grid: ExperimentGrid,
    splits: dict[str, tuple[InteractionDataset, InteractionDataset]],
    factories: dict[str, TracerFactory],
    cache_dir: str | None = None,
    with_ece: bool = True,
    log=None,
) -> ResultsTable:
    """Fit each (dataset, model, size, seed) cell and score the test split.

    A cell with undefined AUC (single-class test labels) is marked invalid
    and the run continues. Cells are cached under ``cache_dir`` keyed by the
    content hash of (dataset, model fingerprint, size, seed, representation).
    """
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
    cells: list[CellResult] = []
    for dataset_name in grid.datasets:
        train_pool, test = splits[dataset_name]
        assert_split_hygiene(train_pool, test)
        ds_hash = content_hash(train_pool) + content_hash(test)
        for model_name in grid.models:
            factory = factories[model_name]
            for size in grid.sizes:
                for seed in grid.seeds:
                    key = _cell_key(
                        ds_hash, model_name, factory.fingerprint(), size, seed, grid.representation
                    )
                    cache_path = os.path.join(cache_dir, key + ".json") if cache_dir else None
                    if cache_path and os.path.exists(cache_path):
                        with open(cache_path, encoding="utf-8") as fh:
                            cells.append(CellResult(**json.load(fh)))
                        continue
                    sample = sample_cold_start(train_pool, size, seed)
                    tracer = factory.fit(sample, seed)
                    records = score_dataset(tracer, test)
                    try:
                        cell_auc = auc(records)
                        valid = True
                    except UndefinedAucError:
                        cell_auc = None
                        valid = False
                    ece = calibration(records).ece if (with_ece and records) else None
                    cell = CellResult(
                        dataset=dataset_name,
                        model=model_name,
                        representation=grid.representation,
                        n_students=size,
                        seed=seed,
                        auc=cell_auc,
                        valid=valid,
                        n_records=len(records),
                        ece=ece,
                    )
                    cells.append(cell)
                    if cache_path:
                        _atomic_write_text(cache_path, json.dumps(cell.to_dict()))
                    if log:
                        log(f"{dataset_name}/{model_name} size={size} seed={seed} auc={cell_auc}")
    return ResultsTable(cells=tuple(cells), aggregates=tuple(_aggregate(cells)))


def _aggregate(cells: Sequence[CellResult]) -> list[AggregateRow]:
    keys = []
    for c in cells:
        k = (c.dataset, c.model, c.representation, c.n_students)
        if k not in keys:
            keys.append(k)
    rows = []
    for dataset, model, representation, size in keys:
        aucs = [
            c.auc
            for c in cells
            if (c.dataset, c.model, c.representation, c.n_students)
            == (dataset, model, representation, size)
            and c.valid
        ]
        if aucs:
            mean = float(np.mean(aucs))
            std = float(np.std(aucs, ddof=1)) if len(aucs) > 1 else 0.0
        else:
            mean = std = None
        rows.append(
            AggregateRow(
                dataset=dataset,
                model=model,
                representation=representation,
                n_students=size,
                mean_auc=mean,
                std_auc=std,
                n_valid=len(aucs),
            )
        )
    return rows


def write_results_csv(table: ResultsTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "model", "representation", "n_students", "seed", "auc"])
        for c in table.cells:
            writer.writerow(
                [c.dataset, c.model, c.representation, c.n_students, c.seed,
                 repr(c.auc) if c.auc is not None else ""]
            )


def write_aggregate_csv(table: ResultsTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", "model", "representation", "n_students", "mean_auc", "std_auc"])
        for a in table.aggregates:
            writer.writerow(
                [a.dataset, a.model, a.representation, a.n_students,
                 repr(a.mean_auc) if a.mean_auc is not None else "",
                 repr(a.std_auc) if a.std_auc is not None else ""]
            )


def evaluate_split(
    ds: InteractionDataset,
    factory: TracerFactory,
    test_spec=0.2,
    split_seed: int = 0,
    n_students: int | None = None,
    sample_seed: int = 0,
) -> dict:
    """In-domain evaluation: split, fit on train (optionally cold-start
    sampled), score the test split."""
    return run_cross_domain(
        ds, ds, factory,
        test_spec=test_spec, split_seed=split_seed,
        n_students=n_students, sample_seed=sample_seed,
    )


def run_cross_domain(
    source: InteractionDataset,
    target: InteractionDataset,
    factory: TracerFactory,
    test_spec=0.2,
    split_seed: int = 0,
    n_students: int | None = None,
    sample_seed: int = 0,
) -> dict:
    """Fit on the source domain's train split, score the target domain's
    test split. With source == target this is exactly the in-domain result.

    An id-representation factory over disjoint KC id spaces cannot transfer
    anything and is rejected.
    """
    from ..data import split_holdout  # local import to keep module load light

    representation = getattr(factory, "representation", None)
    if representation == "id":
        shared = set(source.kc_table) & set(target.kc_table)
        if not shared:
            raise UnsupportedConfigError(
                "id-based representation cannot transfer across disjoint KC id spaces"
            )

    with_tables = getattr(factory, "with_vocab_tables", None)
    if with_tables is not None:
        factory = with_tables([dict(source.kc_table), dict(target.kc_table)])

    train_s, _ = split_holdout(source, test_spec, split_seed)
    _, test_t = split_holdout(target, test_spec, split_seed)
    if n_students is not None:
        train_s = sample_cold_start(train_s, n_students, sample_seed)
    if content_hash(source) == content_hash(target):
        # same domain: the usual holdout hygiene applies
        assert_split_hygiene(train_s, test_t)
    tracer = factory.fit(train_s, sample_seed)
    records = score_dataset(tracer, test_t)
    try:
        value = auc(records)
    except UndefinedAucError:
        value = None
    return {
        "source": source.provenance.get("source", "source"),
        "target": target.provenance.get("source", "target"),
        "model": factory.name,
        "n_students": n_students,
        "auc": value,
        "n_records": len(records),
        "ece": calibration(records).ece if records else None,
    }
