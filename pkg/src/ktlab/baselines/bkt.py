"""Per-KC two-state hidden Markov tracer with EM fitting.

State 0 is "not mastered", state 1 is "mastered"; mastery is absorbing with
learn rate p_t, observations are corrupted by guess p_g and slip p_s. One
independent model is fitted per KC. EM runs unclamped (aside from numeric
guards) so the likelihood is non-decreasing; identifiability clamps are
applied to the returned parameters.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from ..data import Exercise, InteractionDataset, StudentHistory, TracerContract
from ..errors import MissingKcError, ParameterError

logger = logging.getLogger(__name__)

_GUARD = 1e-4  # in-loop numeric guard keeping EM away from exact 0/1
_CLAMP_LO, _CLAMP_HI = 0.001, 0.999
_NOISE_CAP = 0.499  # guess and slip stay strictly below one half


@dataclass(frozen=True)
class BktParams:
    p_l0: float
    p_t: float
    p_g: float
    p_s: float

    def __post_init__(self):
        for name in ("p_l0", "p_t", "p_g", "p_s"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0) or not np.isfinite(v):
                raise ParameterError(f"{name} must be in [0, 1], got {v}")

    def as_tuple(self):
        return (self.p_l0, self.p_t, self.p_g, self.p_s)


def bkt_predict_and_update(params: BktParams, p_l: float, correct: int):
    """One filter step: predicted P(correct) from the current state, then the
    Bayes-updated and learn-advanced state given the observation."""
    if not 0.0 <= p_l <= 1.0:
        raise ParameterError(f"state must be in [0, 1], got {p_l}")
    l0, t, g, s = params.as_tuple()
    p_correct = p_l * (1 - s) + (1 - p_l) * g
    if correct:
        posterior = p_l * (1 - s) / max(p_correct, 1e-300)
    else:
        p_wrong = p_l * s + (1 - p_l) * (1 - g)
        posterior = p_l * s / max(p_wrong, 1e-300)
    updated = posterior + (1 - posterior) * t
    return p_correct, updated


def kc_sequences(ds: InteractionDataset, kc_id: str) -> list[np.ndarray]:
    """Per-student correctness sequences restricted to one KC, step order."""
    seqs = []
    for sid in ds.student_ids():
        obs = [it.correct for it in ds.histories[sid].interactions if it.kc_id == kc_id]
        if obs:
            seqs.append(np.asarray(obs, dtype=np.int64))
    return seqs


def fit_bkt_sequences(
    seqs: list[np.ndarray],
    init: BktParams = BktParams(0.5, 0.1, 0.2, 0.1),
    max_iters: int = 100,
    tol: float = 1e-6,
):
    """Baum-Welch over correctness sequences; returns (params, ll_history).

    The log-likelihood history is non-decreasing: an M-step that would lower
    the likelihood (possible only when numeric guards bind) reverts and
    stops.
    """
    if not seqs:
        raise MissingKcError("no sequences to fit")
    groups: dict[int, np.ndarray] = {}
    for L in sorted({len(s) for s in seqs}):
        groups[L] = np.stack([s for s in seqs if len(s) == L])

    l0, t, g, s = init.as_tuple()
    ll_history: list[float] = []
    best = (l0, t, g, s)
    for _ in range(max_iters):
        ll = 0.0
        sum_gamma0_m = 0.0
        n_seqs = 0
        xi_01 = 0.0
        gamma_not_pre = 0.0  # occupancy of state 0 before the final step
        gamma_not = 0.0
        gamma_not_correct = 0.0
        gamma_m = 0.0
        gamma_m_wrong = 0.0

        for L, ys in groups.items():
            n, _ = ys.shape
            emis = np.empty((n, L, 2))
            emis[..., 0] = np.where(ys == 1, g, 1 - g)
            emis[..., 1] = np.where(ys == 1, 1 - s, s)

            alpha = np.empty((n, L, 2))
            c = np.empty((n, L))
            alpha[:, 0, 0] = (1 - l0) * emis[:, 0, 0]
            alpha[:, 0, 1] = l0 * emis[:, 0, 1]
            c[:, 0] = alpha[:, 0].sum(axis=1)
            alpha[:, 0] /= c[:, 0, None]
            for k in range(1, L):
                pred0 = alpha[:, k - 1, 0] * (1 - t)
                pred1 = alpha[:, k - 1, 0] * t + alpha[:, k - 1, 1]
                alpha[:, k, 0] = pred0 * emis[:, k, 0]
                alpha[:, k, 1] = pred1 * emis[:, k, 1]
                c[:, k] = alpha[:, k].sum(axis=1)
                alpha[:, k] /= c[:, k, None]
            ll += float(np.log(c).sum())

            beta = np.empty((n, L, 2))
            beta[:, L - 1] = 1.0
            for k in range(L - 2, -1, -1):
                b_next = beta[:, k + 1] * emis[:, k + 1]
                beta[:, k, 0] = ((1 - t) * b_next[:, 0] + t * b_next[:, 1]) / c[:, k + 1]
                beta[:, k, 1] = b_next[:, 1] / c[:, k + 1]

            gamma = alpha * beta
            sum_gamma0_m += float(gamma[:, 0, 1].sum())
            n_seqs += n
            gamma_not += float(gamma[..., 0].sum())
            gamma_not_correct += float((gamma[..., 0] * ys).sum())
            gamma_m += float(gamma[..., 1].sum())
            gamma_m_wrong += float((gamma[..., 1] * (1 - ys)).sum())
            if L > 1:
                # xi for the 0 -> 1 transition at steps k -> k+1
                xi = alpha[:, :-1, 0] * t * emis[:, 1:, 1] * beta[:, 1:, 1] / c[:, 1:]
                xi_01 += float(xi.sum())
                gamma_not_pre += float(gamma[:, :-1, 0].sum())

        if ll_history and ll < ll_history[-1] - 1e-9:
            # numeric guards bent the M-step away from the EM optimum; keep
            # the previous (higher-likelihood) parameters
            l0, t, g, s = best
            break
        ll_history.append(ll)
        best = (l0, t, g, s)

        new_l0 = sum_gamma0_m / n_seqs
        new_t = xi_01 / gamma_not_pre if gamma_not_pre > 0 else t
        new_g = gamma_not_correct / gamma_not if gamma_not > 0 else g
        new_s = gamma_m_wrong / gamma_m if gamma_m > 0 else s
        new = tuple(float(np.clip(v, _GUARD, 1 - _GUARD)) for v in (new_l0, new_t, new_g, new_s))
        delta = max(abs(a - b) for a, b in zip(new, (l0, t, g, s)))
        l0, t, g, s = new
        if delta < tol:
            break

    l0, t, g, s = (float(np.clip(v, _CLAMP_LO, _CLAMP_HI)) for v in (l0, t, g, s))
    g = min(g, _NOISE_CAP)
    s = min(s, _NOISE_CAP)
    return BktParams(l0, t, g, s), ll_history


def bkt_fit_em(
    ds: InteractionDataset, kc_id: str, max_iters: int = 100, tol: float = 1e-6
) -> BktParams:
    seqs = kc_sequences(ds, kc_id)
    if not seqs:
        raise MissingKcError(f"no interactions for KC {kc_id!r}")
    params, _ = fit_bkt_sequences(seqs, max_iters=max_iters, tol=tol)
    return params


class BktTracer:
    """TracerContract over a per-KC parameter table.

    Learning happens only when the KC is practiced (classical formulation):
    a KC the student never touches keeps its prior state. KCs absent from
    the table fall back to 0.5 and are logged once.
    """

    def __init__(self, params_by_kc: dict[str, BktParams]):
        self.params_by_kc = dict(params_by_kc)
        self._warned: set[str] = set()

    def predict(self, history: StudentHistory, target: Exercise) -> float:
        params = self.params_by_kc.get(target.kc_id)
        if params is None:
            if target.kc_id not in self._warned:
                logger.debug("BKT: unseen KC %r, falling back to 0.5", target.kc_id)
                self._warned.add(target.kc_id)
            return 0.5
        state = params.p_l0
        for it in history.interactions:
            if it.kc_id == target.kc_id:
                _, state = bkt_predict_and_update(params, state, it.correct)
        return state * (1 - params.p_s) + (1 - state) * params.p_g


def fit_bkt_tracer(ds: InteractionDataset, max_iters: int = 100, tol: float = 1e-6) -> BktTracer:
    table = {}
    for kc_id in sorted(ds.kc_table):
        try:
            table[kc_id] = bkt_fit_em(ds, kc_id, max_iters=max_iters, tol=tol)
        except MissingKcError:
            continue
    return BktTracer(table)


def save_bkt_json(tracer: BktTracer, path) -> None:
    payload = {
        kc: {"p_l0": p.p_l0, "p_t": p.p_t, "p_g": p.p_g, "p_s": p.p_s}
        for kc, p in sorted(tracer.params_by_kc.items())
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"model": "bkt", "params": payload}, fh, indent=1)


def load_bkt_json(path) -> BktTracer:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return BktTracer(
        {kc: BktParams(v["p_l0"], v["p_t"], v["p_g"], v["p_s"]) for kc, v in payload["params"].items()}
    )
