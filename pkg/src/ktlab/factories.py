"""Fit-function registry used by the experiment runners and the CLI.

Each factory freezes a model configuration; ``fit(train, seed)`` produces a
tracer. ``fingerprint()`` feeds the grid cache key, so two factories with
the same configuration hit the same cached cells.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

from .baselines import (
    DktConfig,
    fit_bkt_tracer,
    fit_dkt_tracer,
    fit_irt_tracer,
    fit_pfa_tracer,
)
from .data import InteractionDataset
from .errors import UnsupportedConfigError
from .eval.synth import GroundTruthTracer, SyntheticWorld
from .ktlp import PromptTemplate, RepresentationMode, format_dataset
from .lm import LmConfig, TrainConfig, init_params, lora_attach, lora_merge, train_clm, train_lora
from .lm.tracer import LmTracer
from .vocab import build_domain_vocab


@dataclass(frozen=True)
class BktFactory:
    name: str = "bkt"
    max_iters: int = 100
    tol: float = 1e-6

    def fingerprint(self) -> str:
        return json.dumps(["bkt", self.max_iters, self.tol])

    def fit(self, train: InteractionDataset, seed: int):
        return fit_bkt_tracer(train, max_iters=self.max_iters, tol=self.tol)


@dataclass(frozen=True)
class IrtFactory:
    name: str = "irt"
    lam: float = 0.05

    def fingerprint(self) -> str:
        return json.dumps(["irt", self.lam])

    def fit(self, train: InteractionDataset, seed: int):
        return fit_irt_tracer(train, lam=self.lam)


@dataclass(frozen=True)
class PfaFactory:
    name: str = "pfa"
    lam: float = 0.1

    def fingerprint(self) -> str:
        return json.dumps(["pfa", self.lam])

    def fit(self, train: InteractionDataset, seed: int):
        return fit_pfa_tracer(train, lam=self.lam)


@dataclass(frozen=True)
class DktFactory:
    name: str = "dkt"
    config: DktConfig = DktConfig()
    kc_universe: tuple[str, ...] | None = None

    def fingerprint(self) -> str:
        return json.dumps(["dkt", vars(self.config), self.kc_universe], default=str, sort_keys=True)

    def fit(self, train: InteractionDataset, seed: int):
        cfg = replace(self.config, seed=seed)
        return fit_dkt_tracer(train, cfg, kc_universe=self.kc_universe)


@dataclass(frozen=True)
class OracleFactory:
    """Generator-side oracle for synthetic worlds; ignores the train sample."""

    world: SyntheticWorld
    name: str = "oracle"

    def fingerprint(self) -> str:
        return json.dumps(["oracle", self.world.to_dict()], sort_keys=True)

    def fit(self, train: InteractionDataset, seed: int):
        return GroundTruthTracer(self.world)


@dataclass(frozen=True)
class LmFactory:
    """KTLP-tuned tiny LM; full fine-tuning or adapter-only when rank is set.

    The vocabulary is built from KC tables (domain schema), never from
    student interactions: ``vocab_tables`` defaults to the train split's own
    table, and cross-domain runs swap in the union of both domains.
    """

    name: str = "lm"
    representation: str = "description"
    template: PromptTemplate = PromptTemplate()
    n_layers: int = 2
    n_heads: int = 4
    embed_dim: int = 64
    mlp_dim: int = 256
    context_len: int = 192
    dtype: str = "float64"
    train_config: TrainConfig = TrainConfig(epochs=15)
    adapter_rank: int | None = None
    adapter_alpha: float = 16.0
    vocab_tables: tuple[tuple[tuple[str, str], ...], ...] | None = None
    # optional (learner count -> epochs) overrides: smaller cold-start
    # samples need proportionally longer training
    epochs_by_size: tuple[tuple[int, int], ...] | None = None

    def fingerprint(self) -> str:
        return json.dumps(
            [
                "lm", self.representation, asdict(self.template),
                self.n_layers, self.n_heads, self.embed_dim, self.mlp_dim,
                self.context_len, self.dtype, asdict(self.train_config),
                self.adapter_rank, self.adapter_alpha, self.vocab_tables,
                self.epochs_by_size,
            ],
            sort_keys=True, default=str,
        )

    def with_vocab_tables(self, tables: list[dict[str, str]]) -> "LmFactory":
        frozen = tuple(tuple(sorted(t.items())) for t in tables)
        return replace(self, vocab_tables=frozen)

    def fit(self, train: InteractionDataset, seed: int):
        mode = RepresentationMode(self.representation)
        tables = (
            [dict(t) for t in self.vocab_tables]
            if self.vocab_tables is not None
            else [dict(train.kc_table)]
        )
        vocab = build_domain_vocab(tables, self.template, mode)
        config = LmConfig(
            vocab_size=vocab.size,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            embed_dim=self.embed_dim,
            mlp_dim=self.mlp_dim,
            context_len=self.context_len,
            dtype=self.dtype,
        )
        examples = format_dataset(train, mode, self.template)
        params = init_params(config, seed=seed)
        tcfg = replace(self.train_config, seed=seed)
        if self.epochs_by_size:
            for size, epochs in self.epochs_by_size:
                if size == train.n_learners:
                    tcfg = replace(tcfg, epochs=epochs)
                    break
        if self.adapter_rank is not None:
            base, adapter = lora_attach(params, self.adapter_rank, self.adapter_alpha, seed=seed)
            tuned, _ = train_lora(base, adapter, examples, vocab, tcfg)
            params = lora_merge(base, tuned)
        else:
            params, _ = train_clm(params, examples, vocab, tcfg)
        return LmTracer(params, vocab, self.template, mode)


def build_factory(name: str, **kwargs):
    registry = {
        "bkt": BktFactory,
        "irt": IrtFactory,
        "pfa": PfaFactory,
        "dkt": DktFactory,
        "lm": LmFactory,
        "oracle": OracleFactory,
    }
    if name not in registry:
        raise UnsupportedConfigError(
            f"unknown model {name!r}; choose from {sorted(registry)}"
        )
    return registry[name](**kwargs)
