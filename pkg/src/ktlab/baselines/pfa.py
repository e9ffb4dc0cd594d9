"""Count-feature logistic tracer: easiness plus weighted success/failure counts.

For a target on KC k with s prior successes and f prior failures on that KC,
the logit is beta_k + gamma_k * s + rho_k * f. One regression per KC, fitted
by regularized full-batch gradient ascent. Counts always come strictly from
interactions before the target step.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from ..data import Exercise, InteractionDataset, StudentHistory
from ..errors import OptimizationError
from .irt import sigmoid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PfaKcParams:
    beta: float
    gamma: float
    rho: float


@dataclass
class PfaParams:
    by_kc: dict[str, PfaKcParams] = field(default_factory=dict)
    lam: float = 0.0


def prior_counts(history: StudentHistory, kc_id: str, before_step: int | None = None):
    """(successes, failures) on one KC strictly before ``before_step``."""
    s = f = 0
    for it in history.interactions:
        if before_step is not None and it.step >= before_step:
            break
        if it.kc_id == kc_id:
            if it.correct:
                s += 1
            else:
                f += 1
    return s, f


def pfa_predict(params: PfaKcParams, s: int, f: int) -> float:
    return float(sigmoid(params.beta + params.gamma * s + params.rho * f))


def _fit_logistic_3(x_s, x_f, y, lam, iters=50, tol=1e-10):
    """Newton/IRLS on the 3-parameter regularized logistic likelihood."""
    w = np.zeros(3)  # beta, gamma, rho
    feats = np.stack([np.ones_like(x_s), x_s, x_f], axis=1)
    reg = lam * np.eye(3)
    for _ in range(iters):
        p = sigmoid(feats @ w)
        grad = feats.T @ (y - p) - lam * w
        hess = feats.T @ (feats * (p * (1 - p))[:, None]) + reg + 1e-9 * np.eye(3)
        step = np.linalg.solve(hess, grad)
        w = w + step
        if not np.all(np.isfinite(w)):
            raise OptimizationError("PFA fit diverged (non-finite parameters)")
        if np.abs(step).max() < tol:
            break
    return w


def pfa_fit(ds: InteractionDataset, lam: float = 0.1, iters: int = 50) -> PfaParams:
    feats: dict[str, list[tuple[int, int, int]]] = {}
    for sid in ds.student_ids():
        hist = ds.histories[sid]
        running: dict[str, list[int]] = {}
        for it in hist.interactions:
            s, f = running.get(it.kc_id, [0, 0])
            feats.setdefault(it.kc_id, []).append((s, f, it.correct))
            if it.correct:
                running[it.kc_id] = [s + 1, f]
            else:
                running[it.kc_id] = [s, f + 1]

    by_kc = {}
    for kc_id in sorted(feats):
        rows = feats[kc_id]
        x_s = np.array([r[0] for r in rows], dtype=np.float64)
        x_f = np.array([r[1] for r in rows], dtype=np.float64)
        y = np.array([r[2] for r in rows], dtype=np.float64)
        w = _fit_logistic_3(x_s, x_f, y, lam, iters)
        by_kc[kc_id] = PfaKcParams(beta=float(w[0]), gamma=float(w[1]), rho=float(w[2]))
    return PfaParams(by_kc=by_kc, lam=lam)


class PfaTracer:
    """Order-invariant: only the success/failure counts enter the logit."""

    def __init__(self, params: PfaParams):
        self.params = params
        self._warned: set[str] = set()

    def predict(self, history: StudentHistory, target: Exercise) -> float:
        kc_params = self.params.by_kc.get(target.kc_id)
        if kc_params is None:
            if target.kc_id not in self._warned:
                logger.debug("PFA: unseen KC %r, falling back to 0.5", target.kc_id)
                self._warned.add(target.kc_id)
            return 0.5
        s, f = prior_counts(history, target.kc_id)
        return pfa_predict(kc_params, s, f)


def fit_pfa_tracer(ds: InteractionDataset, lam: float = 0.1) -> PfaTracer:
    return PfaTracer(pfa_fit(ds, lam=lam))


def save_pfa_json(tracer: PfaTracer, path) -> None:
    payload = {
        kc: {"beta": p.beta, "gamma": p.gamma, "rho": p.rho}
        for kc, p in sorted(tracer.params.by_kc.items())
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"model": "pfa", "lam": tracer.params.lam, "params": payload}, fh, indent=1)


def load_pfa_json(path) -> PfaTracer:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return PfaTracer(
        PfaParams(
            by_kc={
                kc: PfaKcParams(v["beta"], v["gamma"], v["rho"])
                for kc, v in payload["params"].items()
            },
            lam=payload.get("lam", 0.0),
        )
    )
