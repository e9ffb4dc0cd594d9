"""Causal-LM training over formatted examples, full-parameter or adapter-only.

The loss covers only output-segment tokens: every input token is masked out,
so optimization targets exactly the answer words. Batch order and
initialization are seeded, making runs bit-reproducible on one platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import DivergenceError, ParameterError
from ..ktlp import KtlpExample
from ..optim import AdamW
from ..vocab import TokenizerVocab, encode
from .lora import LoraAdapter, adapter_grads_from_weight_grads, effective_tensors
from .model import LmParams, loss_and_grads


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-3
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    warmup_steps: int = 0
    lr_schedule: str = "constant"  # or "cosine" (decays to 10% of peak)
    dropout: float = 0.0
    word_dropout: float = 0.0  # input tokens swapped to <unk> during training
    label_smoothing: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ParameterError("learning_rate, batch_size must be positive; epochs non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ParameterError("betas must lie in [0, 1)")
        if self.clip_norm <= 0:
            raise ParameterError("clip_norm must be positive")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ParameterError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.warmup_steps < 0:
            raise ParameterError("warmup_steps must be non-negative")
        if not 0.0 <= self.dropout < 1.0 or not 0.0 <= self.label_smoothing < 1.0:
            raise ParameterError("dropout and label_smoothing must lie in [0, 1)")
        if not 0.0 <= self.word_dropout < 1.0:
            raise ParameterError("word_dropout must lie in [0, 1)")


def _lr_at(config: TrainConfig, step: int, total_steps: int) -> float:
    lr = config.learning_rate
    if config.warmup_steps > 0 and step < config.warmup_steps:
        lr *= (step + 1) / config.warmup_steps
    elif config.lr_schedule == "cosine" and total_steps > config.warmup_steps:
        progress = (step - config.warmup_steps) / max(total_steps - config.warmup_steps, 1)
        lr *= 0.1 + 0.9 * 0.5 * (1 + math.cos(math.pi * min(progress, 1.0)))
    return lr


def encode_example(ex: KtlpExample, vocab: TokenizerVocab, context_len: int):
    """Token ids plus the index where the output segment starts.

    Sequences longer than the context are left-truncated (keeping <bos> and
    the tail, so the target segment and answer always survive).
    """
    input_ids = encode(ex.input_text, vocab)
    output_ids = encode(ex.output_text, vocab)
    if not output_ids:
        raise ParameterError(f"example has empty output text: {ex!r}")
    ids = [vocab.bos_id] + input_ids + output_ids
    out_start = 1 + len(input_ids)
    if len(ids) > context_len:
        drop = len(ids) - context_len
        ids = [vocab.bos_id] + ids[1 + drop :]
        out_start -= drop
        if out_start < 1:
            raise ParameterError("output segment does not fit in the context window")
    return ids, out_start


def _corrupt_inputs(ids, loss_mask, p, unk_id, pad_id, rng):
    """Swap a fraction of input tokens to <unk>; answer and pad positions stay."""
    noisy = ids.copy()
    hit = (rng.random(ids.shape) < p) & ~loss_mask & (ids != pad_id)
    hit[:, 0] = False  # keep <bos>
    noisy[hit] = unk_id
    return noisy


def _make_batches(examples, vocab, context_len, order, batch_size, pad_id):
    encoded = [encode_example(examples[i], vocab, context_len) for i in order]
    for start in range(0, len(encoded), batch_size):
        chunk = encoded[start : start + batch_size]
        maxlen = max(len(ids) for ids, _ in chunk)
        ids = np.full((len(chunk), maxlen), pad_id, dtype=np.int64)
        mask = np.zeros((len(chunk), maxlen), dtype=bool)
        for r, (seq, out_start) in enumerate(chunk):
            ids[r, : len(seq)] = seq
            mask[r, out_start : len(seq)] = True
        yield ids, mask


def _make_optimizer(shapes, config: TrainConfig) -> AdamW:
    return AdamW(
        shapes,
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
        weight_decay=config.weight_decay,
        clip_norm=config.clip_norm,
    )


def train_clm(
    params: LmParams,
    examples: Sequence[KtlpExample],
    vocab: TokenizerVocab,
    config: TrainConfig = TrainConfig(),
) -> tuple[LmParams, list[float]]:
    """Fine-tune every parameter on the KTLP examples.

    Returns (trained params, per-epoch mean loss per output token). The
    input params are not modified; zero epochs returns an identical copy.
    """
    if not examples:
        raise ParameterError("no training examples")
    trained = params.copy()
    rng = np.random.default_rng(config.seed)
    drop_rng = np.random.default_rng((config.seed, 0xD20))
    opt = _make_optimizer(trained.tensors, config)
    n_batches = (len(examples) + config.batch_size - 1) // config.batch_size
    total_steps = n_batches * config.epochs
    step = 0
    curve: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(examples))
        loss_sum, tok_sum = 0.0, 0.0
        for bi, (ids, mask) in enumerate(
            _make_batches(examples, vocab, params.config.context_len, order, config.batch_size, vocab.pad_id)
        ):
            if config.word_dropout > 0.0:
                ids = _corrupt_inputs(ids, mask, config.word_dropout, vocab.unk_id, vocab.pad_id, drop_rng)
            loss, grads = loss_and_grads(
                trained, ids, mask,
                label_smoothing=config.label_smoothing,
                dropout=config.dropout, dropout_rng=drop_rng,
            )
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {bi}")
            opt.lr = _lr_at(config, step, total_steps)
            step += 1
            opt.step(trained.tensors, grads)
            n_tok = float(mask[:, 1:].sum())
            loss_sum += loss * n_tok
            tok_sum += n_tok
        curve.append(loss_sum / tok_sum)
    return trained, curve


def train_lora(
    base: LmParams,
    adapter: LoraAdapter,
    examples: Sequence[KtlpExample],
    vocab: TokenizerVocab,
    config: TrainConfig = TrainConfig(),
) -> tuple[LoraAdapter, list[float]]:
    """Train only the adapter's A/B matrices; base tensors are never written.

    Returns (trained adapter, per-epoch mean loss). The input adapter is not
    modified.
    """
    if not examples:
        raise ParameterError("no training examples")
    tuned = LoraAdapter(
        rank=adapter.rank,
        alpha=adapter.alpha,
        matrices={k: (a.copy(), b.copy()) for k, (a, b) in adapter.matrices.items()},
    )
    flat = {}
    for name, (a, b) in tuned.matrices.items():
        flat[name + "#A"] = a
        flat[name + "#B"] = b
    rng = np.random.default_rng(config.seed)
    drop_rng = np.random.default_rng((config.seed, 0xD20))
    opt = _make_optimizer(flat, config)
    n_batches = (len(examples) + config.batch_size - 1) // config.batch_size
    total_steps = n_batches * config.epochs
    step = 0
    curve: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(examples))
        loss_sum, tok_sum = 0.0, 0.0
        for bi, (ids, mask) in enumerate(
            _make_batches(examples, vocab, base.config.context_len, order, config.batch_size, vocab.pad_id)
        ):
            if config.word_dropout > 0.0:
                ids = _corrupt_inputs(ids, mask, config.word_dropout, vocab.unk_id, vocab.pad_id, drop_rng)
            tensors = effective_tensors(base, tuned)
            loss, weight_grads = loss_and_grads(
                base, ids, mask, tensors=tensors,
                label_smoothing=config.label_smoothing,
                dropout=config.dropout, dropout_rng=drop_rng,
            )
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {bi}")
            ab_grads = adapter_grads_from_weight_grads(tuned, weight_grads)
            flat_grads = {}
            for name, (da, db) in ab_grads.items():
                flat_grads[name + "#A"] = da
                flat_grads[name + "#B"] = db
            opt.lr = _lr_at(config, step, total_steps)
            step += 1
            opt.step(flat, flat_grads)
            n_tok = float(mask[:, 1:].sum())
            loss_sum += loss * n_tok
            tok_sum += n_tok
        curve.append(loss_sum / tok_sum)
    return tuned, curve
