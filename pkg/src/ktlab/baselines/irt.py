"""One-parameter logistic (Rasch) tracer: ability minus difficulty.

Fitting maximizes the L2-regularized Bernoulli log-likelihood by full-batch
gradient ascent. Students or exercises unseen at prediction time get
ability/difficulty zero, which cold-start evaluation hits constantly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from ..data import Exercise, InteractionDataset, StudentHistory
from ..errors import OptimizationError

logger = logging.getLogger(__name__)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class IrtParams:
    theta: dict[str, float] = field(default_factory=dict)  # per-student ability
    b: dict[str, float] = field(default_factory=dict)  # per-exercise difficulty
    lam: float = 0.0


def irt_predict(theta: float, b: float) -> float:
    return float(sigmoid(theta - b))


def irt_fit(
    ds: InteractionDataset,
    lam: float = 0.05,
    learning_rate: float = 1.0,
    iters: int = 300,
) -> IrtParams:
    """Gradient ascent on sum log p(y | sigma(theta_s - b_e)) - lam/2 * ||.||^2.

    The gradient is preconditioned per coordinate by the curvature bound
    count/4 + lam, which keeps the fixed step stable for any interaction
    count per student or exercise.
    """
    students = ds.student_ids()
    exercises = sorted(ds.exercise_set)
    s_index = {s: i for i, s in enumerate(students)}
    e_index = {e: i for i, e in enumerate(exercises)}

    rows = list(ds.all_interactions())
    si = np.array([s_index[it.student_id] for it in rows])
    ei = np.array([e_index[it.exercise_id] for it in rows])
    y = np.array([it.correct for it in rows], dtype=np.float64)

    precond_s = np.bincount(si, minlength=len(students)) / 4.0 + lam + 1e-12
    precond_e = np.bincount(ei, minlength=len(exercises)) / 4.0 + lam + 1e-12

    theta = np.zeros(len(students))
    b = np.zeros(len(exercises))
    for _ in range(iters):
        p = sigmoid(theta[si] - b[ei])
        resid = y - p
        g_theta = np.bincount(si, weights=resid, minlength=len(students)) - lam * theta
        g_b = np.bincount(ei, weights=-resid, minlength=len(exercises)) - lam * b
        theta += learning_rate * g_theta / precond_s
        b += learning_rate * g_b / precond_e
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(b))):
            raise OptimizationError("IRT fit diverged (non-finite parameters)")
    return IrtParams(
        theta={s: float(theta[i]) for s, i in s_index.items()},
        b={e: float(b[i]) for e, i in e_index.items()},
        lam=lam,
    )


class IrtTracer:
    """Stateless: the prediction uses only (student, exercise) identities."""

    def __init__(self, params: IrtParams):
        self.params = params
        self._warned: set[str] = set()

    def predict(self, history: StudentHistory, target: Exercise) -> float:
        theta = self.params.theta.get(history.student_id)
        if theta is None:
            theta = 0.0
            if history.student_id not in self._warned:
                logger.debug("IRT: unseen student %r, using ability 0", history.student_id)
                self._warned.add(history.student_id)
        b = self.params.b.get(target.exercise_id, 0.0)
        return irt_predict(theta, b)


def fit_irt_tracer(ds: InteractionDataset, lam: float = 0.05) -> IrtTracer:
    return IrtTracer(irt_fit(ds, lam=lam))


def save_irt_json(tracer: IrtTracer, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "model": "irt",
                "lam": tracer.params.lam,
                "theta": dict(sorted(tracer.params.theta.items())),
                "b": dict(sorted(tracer.params.b.items())),
            },
            fh,
            indent=1,
        )


def load_irt_json(path) -> IrtTracer:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return IrtTracer(IrtParams(theta=payload["theta"], b=payload["b"], lam=payload.get("lam", 0.0)))
