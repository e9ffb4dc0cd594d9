"""Per-KC mastery trajectories: probe a tracer after each interaction.

Row t holds, for every tracked KC, the tracer's predicted correctness on a
canonical probe exercise of that KC given the history prefix through
interaction t. The delta matrix subtracts the previous row (the first row
subtracts the empty-history baseline), matching the heat-map reading "how
did this interaction move each KC".
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..data import Exercise, StudentHistory, TracerContract
from ..errors import KtlabError, ParameterError


@dataclass(frozen=True)
class TrajectoryMatrix:
    student_id: str
    tracked_kcs: tuple[str, ...]
    values: np.ndarray  # (history length, n tracked), NaN for missing columns
    deltas: np.ndarray  # same shape; row 0 is relative to the empty-history baseline
    answered_kc: tuple[str, ...]
    correct: tuple[int, ...]
    missing: frozenset[str] = frozenset()

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]


def probe_exercise(kc_id: str, kc_name: str) -> Exercise:
    """Canonical synthetic probe: KC identity with a fresh exercise id."""
    return Exercise(exercise_id=f"probe-{kc_id}", kc_id=kc_id, kc_name=kc_name)


def extract_trajectory(
    tracer: TracerContract,
    history: StudentHistory,
    tracked_kcs: list[str],
    kc_names: dict[str, str],
) -> TrajectoryMatrix:
    """Mastery matrix over history prefixes; columns a tracer cannot score
    are marked missing (NaN) rather than failing the extraction."""
    if not tracked_kcs:
        raise ParameterError("tracked_kcs must be non-empty")
    n = len(history)
    probes = []
    for kc in tracked_kcs:
        if kc not in kc_names:
            raise ParameterError(f"no KC name known for {kc!r}")
        probes.append(probe_exercise(kc, kc_names[kc]))

    missing: set[str] = set()
    grid = np.full((n + 1, len(tracked_kcs)), np.nan)
    for j, probe in enumerate(probes):
        try:
            for t in range(0, n + 1):
                grid[t, j] = tracer.predict(history.prefix(t), probe)
        except KtlabError:
            missing.add(tracked_kcs[j])
            grid[:, j] = np.nan
    values = grid[1:]
    deltas = grid[1:] - grid[:-1]
    return TrajectoryMatrix(
        student_id=history.student_id,
        tracked_kcs=tuple(tracked_kcs),
        values=values,
        deltas=deltas,
        answered_kc=tuple(it.kc_id for it in history.interactions),
        correct=tuple(it.correct for it in history.interactions),
        missing=frozenset(missing),
    )


def write_trajectory_csv(matrix: TrajectoryMatrix, path, deltas: bool = False) -> None:
    """``step,answered_kc,correct`` then one mastery column per tracked KC."""
    data = matrix.deltas if deltas else matrix.values
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "answered_kc", "correct", *matrix.tracked_kcs])
        for t in range(matrix.n_steps):
            row = [t, matrix.answered_kc[t], matrix.correct[t]]
            row.extend("" if np.isnan(v) else repr(float(v)) for v in data[t])
            writer.writerow(row)
