"""Synthetic student simulator with known per-KC guess/slip/learn dynamics.

Each student is an independent two-state process per KC: a latent mastery
bit that flips on with the KC's learn rate after each practice, observed
through guess/slip noise. Because the generating parameters are known, the
simulator doubles as an oracle tracer and as recovery ground truth for the
fitting code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..baselines.bkt import BktParams, bkt_predict_and_update
from ..data import Exercise, Interaction, InteractionDataset, StudentHistory, build_dataset
from ..errors import ParameterError


@dataclass(frozen=True)
class SyntheticWorld:
    """Ground truth: per-KC names and BKT parameters plus student priors.

    ``prior_spread`` shifts each student's initial-mastery probability by a
    uniform offset in [-prior_spread, +prior_spread] (clipped), modelling
    stronger and weaker students. ``kc_weights`` biases which KCs a student
    practices; ``run_length`` controls how many consecutive attempts stay on
    the same KC (students practice in bursts, which gives histories their
    temporal structure).
    """

    kc_names: dict[str, str]
    kc_params: dict[str, BktParams]
    prior_spread: float = 0.1
    kc_weights: dict[str, float] | None = None
    mean_run_length: float = 3.0
    exercises_per_kc: int = 3

    def __post_init__(self):
        if set(self.kc_names) != set(self.kc_params):
            raise ParameterError("kc_names and kc_params must cover the same KC ids")
        if not self.kc_names:
            raise ParameterError("world needs at least one KC")
        if self.kc_weights is not None and set(self.kc_weights) != set(self.kc_names):
            raise ParameterError("kc_weights must cover the same KC ids")
        if not 0 <= self.prior_spread <= 0.5:
            raise ParameterError("prior_spread must be in [0, 0.5]")
        if self.mean_run_length < 1:
            raise ParameterError("mean_run_length must be >= 1")

    def kc_ids(self) -> list[str]:
        return sorted(self.kc_names)

    def to_dict(self) -> dict:
        return {
            "kc_names": dict(sorted(self.kc_names.items())),
            "kc_params": {
                kc: {"p_l0": p.p_l0, "p_t": p.p_t, "p_g": p.p_g, "p_s": p.p_s}
                for kc, p in sorted(self.kc_params.items())
            },
            "prior_spread": self.prior_spread,
            "kc_weights": dict(sorted(self.kc_weights.items())) if self.kc_weights else None,
            "mean_run_length": self.mean_run_length,
            "exercises_per_kc": self.exercises_per_kc,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SyntheticWorld":
        return cls(
            kc_names=payload["kc_names"],
            kc_params={kc: BktParams(**v) for kc, v in payload["kc_params"].items()},
            prior_spread=payload.get("prior_spread", 0.1),
            kc_weights=payload.get("kc_weights"),
            mean_run_length=payload.get("mean_run_length", 3.0),
            exercises_per_kc=payload.get("exercises_per_kc", 3),
        )


def save_world(world: SyntheticWorld, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(world.to_dict(), fh, indent=1)


def load_world(path) -> SyntheticWorld:
    with open(path, encoding="utf-8") as fh:
        return SyntheticWorld.from_dict(json.load(fh))


def default_world(
    n_kcs: int = 12,
    seed: int = 0,
    prior_spread: float = 0.1,
    kc_weights: dict[str, float] | None = None,
) -> SyntheticWorld:
    """A mixed-difficulty world with single-word KC names.

    Parameters are drawn once from the seed: priors span weak to strong KCs
    and guess/slip vary enough that per-KC base rates are genuinely
    different, which is what makes the world learnable from few students.
    """
    names = [
        "fractions", "decimals", "ratios", "percents", "geometry", "algebra",
        "equations", "graphs", "exponents", "probability", "statistics",
        "measurement", "polynomials", "inequalities", "sequences", "angles",
    ]
    if n_kcs > len(names):
        raise ParameterError(f"default world supports at most {len(names)} KCs")
    rng = np.random.default_rng(seed)
    kc_names = {f"kc{i:02d}": names[i] for i in range(n_kcs)}
    kc_params = {}
    # spread priors across the full range so per-KC base rates genuinely
    # differ; guess/slip stay moderate so the history still carries signal.
    # The overall correct rate lands around 0.65, like real tutoring data.
    prior_grid = np.linspace(0.12, 0.95, n_kcs)
    for i, kc in enumerate(sorted(kc_names)):
        kc_params[kc] = BktParams(
            p_l0=float(prior_grid[i]),
            p_t=float(rng.uniform(0.1, 0.3)),
            p_g=float(rng.uniform(0.08, 0.45)),
            p_s=float(rng.uniform(0.02, 0.22)),
        )
    return SyntheticWorld(
        kc_names=kc_names,
        kc_params=kc_params,
        prior_spread=prior_spread,
        kc_weights=kc_weights,
    )


def synth_generate(
    world: SyntheticWorld,
    n_students: int,
    steps_per_student: int,
    seed: int = 0,
    student_prefix: str = "s",
) -> InteractionDataset:
    """Simulate students; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    kcs = world.kc_ids()
    weights = np.array(
        [world.kc_weights[kc] for kc in kcs] if world.kc_weights else [1.0] * len(kcs)
    )
    weights = weights / weights.sum()
    p_continue = 1.0 - 1.0 / world.mean_run_length

    interactions: list[Interaction] = []
    for s in range(n_students):
        sid = f"{student_prefix}{s:05d}"
        offset = rng.uniform(-world.prior_spread, world.prior_spread)
        mastered = {
            kc: rng.random() < np.clip(world.kc_params[kc].p_l0 + offset, 0.01, 0.99)
            for kc in kcs
        }
        kc = kcs[rng.choice(len(kcs), p=weights)]
        for step in range(steps_per_student):
            params = world.kc_params[kc]
            p_correct = (1 - params.p_s) if mastered[kc] else params.p_g
            correct = int(rng.random() < p_correct)
            ex_idx = int(rng.integers(world.exercises_per_kc))
            interactions.append(
                Interaction(
                    student_id=sid,
                    step=step,
                    exercise_id=f"ex-{kc}-{ex_idx}",
                    kc_id=kc,
                    kc_name=world.kc_names[kc],
                    correct=correct,
                )
            )
            if not mastered[kc] and rng.random() < params.p_t:
                mastered[kc] = True
            if rng.random() >= p_continue:
                kc = kcs[rng.choice(len(kcs), p=weights)]
    return build_dataset(interactions, provenance={"source": "synthetic", "seed": seed})


class GroundTruthTracer:
    """History-based oracle: the generating parameters run a Bayes filter.

    Student prior offsets stay latent, so this is the best predictor that
    sees only the observable history, which is exactly what fitted models
    should be compared against.
    """

    def __init__(self, world: SyntheticWorld):
        self.world = world

    def predict(self, history: StudentHistory, target: Exercise) -> float:
        params = self.world.kc_params.get(target.kc_id)
        if params is None:
            return 0.5
        state = params.p_l0
        for it in history.interactions:
            if it.kc_id == target.kc_id:
                _, state = bkt_predict_and_update(params, state, it.correct)
        return state * (1 - params.p_s) + (1 - state) * params.p_g


def generate_irt_dataset(
    n_students: int = 500,
    n_exercises: int = 50,
    seed: int = 0,
):
    """Rasch-world data for difficulty-recovery tests.

    Every student attempts every exercise once in a random order; returns
    (dataset, true difficulty dict).
    """
    rng = np.random.default_rng(seed)
    theta = rng.normal(0, 1, size=n_students)
    b = rng.normal(0, 1, size=n_exercises)
    interactions = []
    for s in range(n_students):
        order = rng.permutation(n_exercises)
        for step, e in enumerate(order):
            logit = theta[s] - b[e]
            p = 1.0 / (1.0 + np.exp(-logit))
            interactions.append(
                Interaction(
                    student_id=f"s{s:04d}",
                    step=step,
                    exercise_id=f"e{e:03d}",
                    kc_id=f"kc{e % 10:02d}",
                    kc_name=f"skill {e % 10}",
                    correct=int(rng.random() < p),
                )
            )
    ds = build_dataset(interactions, provenance={"source": "synthetic-irt", "seed": seed})
    truth = {f"e{e:03d}": float(b[e]) for e in range(n_exercises)}
    return ds, truth
