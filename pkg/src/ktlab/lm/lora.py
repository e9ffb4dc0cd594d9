"""Low-rank adapters on the attention projections of the tiny LM.

Each targeted weight W (d_out x d_in) gets trainable A (r x d_in) and
B (d_out x r); the effective weight is W + (alpha/r) * B @ A. B starts at
zero so a freshly attached adapter is an exact identity delta, and the base
weights are never written to by adapter training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import MergeError, RankError
from .model import ATTN_PROJECTIONS, LmParams

# weights an adapter may wrap: the four attention projections, the MLP
# matrices, and the output head. Tiny randomly-seeded backbones concentrate
# their leverage in the readout, so single-example adaptation usually needs
# "out_proj" in the target set (requires an untied output head).
ADAPTER_TARGETS = ATTN_PROJECTIONS + ("mlp.w1", "mlp.w2", "out_proj")


@dataclass
class LoraAdapter:
    rank: int
    alpha: float
    # name -> (A, B) where name is the full tensor key of the adapted weight
    matrices: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    consumed: bool = False

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def n_parameters(self) -> int:
        return sum(a.size + b.size for a, b in self.matrices.values())

    def delta(self, name: str) -> np.ndarray:
        a, b = self.matrices[name]
        return self.scaling * (b @ a)


def lora_attach(
    params: LmParams,
    rank: int,
    alpha: float,
    targets: tuple[str, ...] = ("wq", "wv"),
    seed: int = 0,
) -> tuple[LmParams, LoraAdapter]:
    """Create a zero-delta adapter over the chosen attention projections.

    Returns the (unmodified) base params and the adapter. A is a small
    seeded uniform init, B is zeros, so attaching changes nothing until
    training moves B.
    """
    if rank < 1:
        raise RankError(f"rank must be >= 1, got {rank}")
    unknown = set(targets) - set(ADAPTER_TARGETS)
    if unknown:
        raise RankError(f"unknown adapter targets {sorted(unknown)}; valid: {ADAPTER_TARGETS}")
    if alpha <= 0:
        raise RankError(f"alpha must be positive, got {alpha}")

    if "out_proj" in targets and params.config.tie_embeddings:
        raise RankError(
            "adapting out_proj requires an untied output head (tie_embeddings=False)"
        )

    rng = np.random.default_rng(seed)
    adapter = LoraAdapter(rank=rank, alpha=float(alpha))
    names = []
    for w in targets:
        if w == "out_proj":
            names.append("out_proj")
            continue
        for i in range(params.config.n_layers):
            names.append(f"layers.{i}.{w if '.' in w else 'attn.' + w}")
    for name in names:
        weight = params.tensors[name]
        d_out, d_in = weight.shape
        if rank > min(d_out, d_in):
            raise RankError(f"rank {rank} exceeds min dimension of {name} ({min(d_out, d_in)})")
        a = rng.uniform(-0.01, 0.01, size=(rank, d_in)).astype(weight.dtype)
        b = np.zeros((d_out, rank), dtype=weight.dtype)
        adapter.matrices[name] = (a, b)
    return params, adapter


def effective_tensors(base: LmParams, adapter: LoraAdapter) -> dict[str, np.ndarray]:
    """Base tensors with adapted weights replaced by W + (alpha/r) B A."""
    out = dict(base.tensors)
    for name in adapter.matrices:
        out[name] = base.tensors[name] + adapter.delta(name)
    return out


def adapter_grads_from_weight_grads(
    adapter: LoraAdapter, weight_grads: dict[str, np.ndarray]
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Map d(loss)/d(W_eff) into gradients on A and B.

    With W_eff = W + s * B @ A: dA = s * B^T @ dW, dB = s * dW @ A^T.
    """
    s = adapter.scaling
    out = {}
    for name, (a, b) in adapter.matrices.items():
        dw = weight_grads[name]
        out[name] = (s * (b.T @ dw), s * (dw @ a.T))
    return out


def lora_merge(base: LmParams, adapter: LoraAdapter) -> LmParams:
    """Fold the adapter into a fresh parameter set; consumes the adapter.

    Merging twice would silently double the delta, so a consumed adapter
    refuses a second merge.
    """
    if adapter.consumed:
        raise MergeError("adapter already merged; merging again would double the delta")
    merged = base.copy()
    for name in adapter.matrices:
        if name not in merged.tensors:
            raise MergeError(f"adapter targets unknown tensor {name!r}")
        if adapter.delta(name).shape != merged.tensors[name].shape:
            raise MergeError(f"shape mismatch merging {name!r}")
        merged.tensors[name] = merged.tensors[name] + adapter.delta(name)
    adapter.consumed = True
    return merged
