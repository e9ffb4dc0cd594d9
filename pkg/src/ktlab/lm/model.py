"""Tiny causal transformer in plain numpy with hand-written backprop.

Pre-norm GPT layout: token + position embeddings, multi-head causal
self-attention, GELU MLP, learned layer norms, and an output projection.
float64 by default so gradient checks against central finite differences are
meaningful; float32 is available for the larger benchmark runs.

The forward/backward pair here is the single code path used for full
training, adapter training (via effective weights), and inference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ParameterError, SequenceLengthError, VocabError
from ..ktlp import PromptTemplate
from ..vocab import TokenizerVocab, encode


@dataclass(frozen=True)
class LmConfig:
    vocab_size: int
    n_layers: int = 2
    n_heads: int = 4
    embed_dim: int = 128
    mlp_dim: int = 512
    context_len: int = 512
    dtype: str = "float64"
    tie_embeddings: bool = True  # output projection shares the token embedding
    recency_bias: bool = True  # fixed per-head linear distance penalty on attention

    def __post_init__(self):
        if self.embed_dim % self.n_heads != 0:
            raise ParameterError(
                f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}"
            )
        for name in ("vocab_size", "n_layers", "n_heads", "embed_dim", "mlp_dim", "context_len"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "embed_dim": self.embed_dim,
            "mlp_dim": self.mlp_dim,
            "context_len": self.context_len,
            "dtype": self.dtype,
            "tie_embeddings": self.tie_embeddings,
            "recency_bias": self.recency_bias,
        }


ATTN_PROJECTIONS = ("wq", "wk", "wv", "wo")


@dataclass
class LmParams:
    """Named parameter tensors plus the config that shapes them."""

    config: LmConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "LmParams":
        return LmParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def n_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def flat_names(self) -> list[str]:
        return sorted(self.tensors)


def parameter_names(config: LmConfig) -> list[str]:
    names = ["tok_emb", "pos_emb"]
    for i in range(config.n_layers):
        p = f"layers.{i}."
        names += [p + "ln1.g", p + "ln1.b"]
        names += [p + "attn." + w for w in ATTN_PROJECTIONS]
        names += [p + "ln2.g", p + "ln2.b", p + "mlp.w1", p + "mlp.b1", p + "mlp.w2", p + "mlp.b2"]
    names += ["ln_f.g", "ln_f.b"]
    if not config.tie_embeddings:
        names.append("out_proj")
    return names


def init_params(config: LmConfig, seed: int = 0) -> LmParams:
    """Gaussian(0, 0.02) init for projections, zeros/ones for norms and biases."""
    rng = np.random.default_rng(seed)
    d, m, v, c = config.embed_dim, config.mlp_dim, config.vocab_size, config.context_len
    dt = config.np_dtype

    def gauss(*shape):
        return (rng.normal(0.0, 0.02, size=shape)).astype(dt)

    t: dict[str, np.ndarray] = {}
    t["tok_emb"] = gauss(v, d)
    t["pos_emb"] = gauss(c, d)
    for i in range(config.n_layers):
        p = f"layers.{i}."
        t[p + "ln1.g"] = np.ones(d, dtype=dt)
        t[p + "ln1.b"] = np.zeros(d, dtype=dt)
        for w in ATTN_PROJECTIONS:
            t[p + "attn." + w] = gauss(d, d)
        t[p + "ln2.g"] = np.ones(d, dtype=dt)
        t[p + "ln2.b"] = np.zeros(d, dtype=dt)
        t[p + "mlp.w1"] = gauss(m, d)
        t[p + "mlp.b1"] = np.zeros(m, dtype=dt)
        t[p + "mlp.w2"] = gauss(d, m)
        t[p + "mlp.b2"] = np.zeros(d, dtype=dt)
    t["ln_f.g"] = np.ones(d, dtype=dt)
    t["ln_f.b"] = np.zeros(d, dtype=dt)
    if not config.tie_embeddings:
        t["out_proj"] = gauss(v, d)
    return LmParams(config, t)


# ---------------------------------------------------------------------------
# primitive forward/backward pieces


def _layernorm(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * rstd
    return xhat * g + b, (xhat, rstd, g)

def _layernorm_backward(dy, cache):
    xhat, rstd, g = cache
    dgamma = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    dbeta = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


_GELU_C = math.sqrt(2.0 / math.pi)

def _gelu(u):
    u2 = u * u
    t = np.tanh(_GELU_C * u * (1.0 + 0.044715 * u2))
    return 0.5 * u * (1.0 + t), (u, u2, t)

def _gelu_backward(dy, cache):
    u, u2, t = cache
    dz = _GELU_C * (1.0 + 3 * 0.044715 * u2)
    return dy * (0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * dz)


def _softmax_last(x):
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)

def _merge_heads(x):
    b, h, t, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * hd)


# ---------------------------------------------------------------------------
# full forward / backward


def _forward_internal(
    params: LmParams,
    ids: np.ndarray,
    tensors: dict[str, np.ndarray],
    with_cache: bool,
    dropout: float = 0.0,
    dropout_rng: np.random.Generator | None = None,
):
    cfg = params.config
    b, t = ids.shape
    if t > cfg.context_len:
        raise SequenceLengthError(f"sequence length {t} exceeds context_len {cfg.context_len}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise VocabError(f"token id out of range for vocab_size {cfg.vocab_size}")

    neg = np.array(-np.inf, dtype=cfg.np_dtype)
    causal = np.triu(np.full((t, t), neg), k=1)
    if cfg.recency_bias:
        # per-head linear distance penalty (geometric slopes, ALiBi-style):
        # heads start out attending locally, which puts the target segment in
        # view of the answer position from the first step
        slopes = 2.0 ** (-8.0 * (np.arange(cfg.n_heads) + 1) / cfg.n_heads)
        dist = np.maximum(np.arange(t)[:, None] - np.arange(t)[None, :], 0)
        causal = causal[None, :, :] - (
            slopes[:, None, None] * dist[None, :, :]
        ).astype(cfg.np_dtype)
    scale = 1.0 / math.sqrt(cfg.head_dim)

    def drop(z):
        # inverted dropout; the mask is recorded for the backward pass
        if dropout <= 0.0:
            return z, None
        mask = (dropout_rng.random(z.shape) >= dropout).astype(z.dtype) / (1.0 - dropout)
        return z * mask, mask

    x = tensors["tok_emb"][ids] + tensors["pos_emb"][:t]
    x, emb_mask = drop(x)
    caches = []
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        a, ln1_cache = _layernorm(x, tensors[p + "ln1.g"], tensors[p + "ln1.b"])
        q = a @ tensors[p + "attn.wq"].T
        k = a @ tensors[p + "attn.wk"].T
        v = a @ tensors[p + "attn.wv"].T
        qh, kh, vh = (_split_heads(z, cfg.n_heads) for z in (q, k, v))
        scores = qh @ kh.transpose(0, 1, 3, 2) * scale + causal
        attnw = _softmax_last(scores)
        ctx = _merge_heads(attnw @ vh)
        o = ctx @ tensors[p + "attn.wo"].T
        o, attn_mask = drop(o)
        x2 = x + o
        h, ln2_cache = _layernorm(x2, tensors[p + "ln2.g"], tensors[p + "ln2.b"])
        u = h @ tensors[p + "mlp.w1"].T + tensors[p + "mlp.b1"]
        gact, gelu_cache = _gelu(u)
        mlp_out = gact @ tensors[p + "mlp.w2"].T + tensors[p + "mlp.b2"]
        mlp_out, mlp_mask = drop(mlp_out)
        x_new = x2 + mlp_out
        if with_cache:
            caches.append(
                dict(
                    a=a, ln1=ln1_cache, qh=qh, kh=kh, vh=vh, attnw=attnw, ctx=ctx,
                    ln2=ln2_cache, h=h, gelu=gelu_cache, gact=gact,
                    attn_mask=attn_mask, mlp_mask=mlp_mask,
                )
            )
        x = x_new
    xf, lnf_cache = _layernorm(x, tensors["ln_f.g"], tensors["ln_f.b"])
    out_w = tensors["tok_emb"] if cfg.tie_embeddings else tensors["out_proj"]
    logits = xf @ out_w.T
    if not with_cache:
        return logits, None
    return logits, dict(
        ids=ids, xf=xf, lnf=lnf_cache, layers=caches, scale=scale, emb_mask=emb_mask
    )


def forward(params: LmParams, ids: Sequence[int], tensors: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """Logits matrix (T, V) for one token-id sequence; row t sees tokens <= t."""
    arr = np.asarray(ids, dtype=np.int64).reshape(1, -1)
    logits, _ = _forward_internal(params, arr, tensors or params.tensors, with_cache=False)
    return logits[0]


def forward_batch(params: LmParams, ids: np.ndarray, tensors: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """Logits (B, T, V) for a padded batch of sequences."""
    logits, _ = _forward_internal(params, np.asarray(ids, dtype=np.int64), tensors or params.tensors, with_cache=False)
    return logits


def loss_and_grads(
    params: LmParams,
    ids: np.ndarray,
    loss_mask: np.ndarray,
    tensors: dict[str, np.ndarray] | None = None,
    label_smoothing: float = 0.0,
    dropout: float = 0.0,
    dropout_rng: np.random.Generator | None = None,
):
    """Masked next-token cross-entropy and gradients for every tensor.

    ``loss_mask`` has the same shape as ``ids``; position t contributes when
    ``loss_mask[b, t]`` is set, in which case the model's row t-1 must
    predict ``ids[b, t]``. The loss is the mean over contributing tokens.
    Dropout is train-time only and requires a generator.
    """
    cfg = params.config
    tensors = tensors or params.tensors
    ids = np.asarray(ids, dtype=np.int64)
    loss_mask = np.asarray(loss_mask)
    if dropout > 0.0 and dropout_rng is None:
        raise ParameterError("dropout requires a random generator")
    logits, cache = _forward_internal(
        params, ids, tensors, with_cache=True, dropout=dropout, dropout_rng=dropout_rng
    )
    b, t, vsz = logits.shape

    pred = logits[:, :-1, :]
    targets = ids[:, 1:]
    w = loss_mask[:, 1:].astype(cfg.np_dtype)
    n_tokens = w.sum()
    if n_tokens == 0:
        raise ParameterError("loss mask selects no tokens")

    probs = _softmax_last(pred)
    tiny = np.finfo(cfg.np_dtype).tiny
    tgt_p = np.take_along_axis(probs, targets[..., None], axis=-1)[..., 0]
    losses = -np.log(np.maximum(tgt_p, tiny))
    if label_smoothing > 0.0:
        smooth = -np.log(np.maximum(probs, tiny)).mean(axis=-1)
        losses = (1.0 - label_smoothing) * losses + label_smoothing * smooth
    loss = float((losses * w).sum() / n_tokens)

    dpred = probs
    if label_smoothing > 0.0:
        dpred -= label_smoothing / vsz
        dpred[np.arange(b)[:, None], np.arange(t - 1)[None, :], targets] -= 1.0 - label_smoothing
    else:
        dpred[np.arange(b)[:, None], np.arange(t - 1)[None, :], targets] -= 1.0
    dpred *= (w / n_tokens)[..., None]
    dlogits = np.zeros_like(logits)
    dlogits[:, :-1, :] = dpred

    grads = _backward_internal(params, dlogits, cache, tensors)
    return loss, grads


def _backward_internal(params, dlogits, cache, tensors):
    cfg = params.config
    ids = cache["ids"]
    b, t = ids.shape
    grads: dict[str, np.ndarray] = {}

    xf = cache["xf"]
    out_w = tensors["tok_emb"] if cfg.tie_embeddings else tensors["out_proj"]
    d_out_w = dlogits.reshape(-1, cfg.vocab_size).T @ xf.reshape(-1, cfg.embed_dim)
    if not cfg.tie_embeddings:
        grads["out_proj"] = d_out_w
    dxf = dlogits @ out_w
    dx, dg, dbeta = _layernorm_backward(dxf, cache["lnf"])
    grads["ln_f.g"], grads["ln_f.b"] = dg, dbeta

    scale = cache["scale"]
    for i in reversed(range(cfg.n_layers)):
        p = f"layers.{i}."
        c = cache["layers"][i]
        # mlp branch: x = x2 + gelu(ln2(x2) @ w1.T + b1) @ w2.T + b2
        dmlp_out = dx if c["mlp_mask"] is None else dx * c["mlp_mask"]
        grads[p + "mlp.w2"] = dmlp_out.reshape(-1, cfg.embed_dim).T @ c["gact"].reshape(-1, cfg.mlp_dim)
        grads[p + "mlp.b2"] = dmlp_out.sum(axis=(0, 1))
        dgact = dmlp_out @ tensors[p + "mlp.w2"]
        du = _gelu_backward(dgact, c["gelu"])
        grads[p + "mlp.w1"] = du.reshape(-1, cfg.mlp_dim).T @ c["h"].reshape(-1, cfg.embed_dim)
        grads[p + "mlp.b1"] = du.sum(axis=(0, 1))
        dh = du @ tensors[p + "mlp.w1"]
        dx2_from_mlp, dg2, db2 = _layernorm_backward(dh, c["ln2"])
        grads[p + "ln2.g"], grads[p + "ln2.b"] = dg2, db2
        dx2 = dx + dx2_from_mlp

        # attention branch: x2 = x + merge(softmax(qk/sqrt)·v) @ wo.T
        do = dx2 if c["attn_mask"] is None else dx2 * c["attn_mask"]
        grads[p + "attn.wo"] = do.reshape(-1, cfg.embed_dim).T @ c["ctx"].reshape(-1, cfg.embed_dim)
        dctx = do @ tensors[p + "attn.wo"]
        dctx_h = _split_heads(dctx, cfg.n_heads)
        dattnw = dctx_h @ c["vh"].transpose(0, 1, 3, 2)
        dvh = c["attnw"].transpose(0, 1, 3, 2) @ dctx_h
        # softmax backward over the last axis
        dscores = c["attnw"] * (dattnw - (dattnw * c["attnw"]).sum(axis=-1, keepdims=True))
        dqh = dscores @ c["kh"] * scale
        dkh = dscores.transpose(0, 1, 3, 2) @ c["qh"] * scale
        dq, dk, dv = (_merge_heads(z) for z in (dqh, dkh, dvh))
        a = c["a"]
        a_flat = a.reshape(-1, cfg.embed_dim)
        grads[p + "attn.wq"] = dq.reshape(-1, cfg.embed_dim).T @ a_flat
        grads[p + "attn.wk"] = dk.reshape(-1, cfg.embed_dim).T @ a_flat
        grads[p + "attn.wv"] = dv.reshape(-1, cfg.embed_dim).T @ a_flat
        da = dq @ tensors[p + "attn.wq"] + dk @ tensors[p + "attn.wk"] + dv @ tensors[p + "attn.wv"]
        dx_from_attn, dg1, db1 = _layernorm_backward(da, c["ln1"])
        grads[p + "ln1.g"], grads[p + "ln1.b"] = dg1, db1
        dx = dx2 + dx_from_attn

    if cache["emb_mask"] is not None:
        dx = dx * cache["emb_mask"]
    grads["tok_emb"] = np.zeros_like(tensors["tok_emb"])
    np.add.at(grads["tok_emb"], ids.reshape(-1), dx.reshape(-1, cfg.embed_dim))
    if cfg.tie_embeddings:
        grads["tok_emb"] += d_out_w
    grads["pos_emb"] = np.zeros_like(tensors["pos_emb"])
    grads["pos_emb"][:t] = dx.sum(axis=0)
    return grads


# ---------------------------------------------------------------------------
# prediction-side operations


def next_token_distribution(logits_row: np.ndarray) -> np.ndarray:
    """Stable softmax of one logits row; non-negative and sums to 1."""
    row = np.asarray(logits_row, dtype=np.float64)
    if not np.all(np.isfinite(row)):
        raise ParameterError("logits must be finite")
    row = row - row.max()
    e = np.exp(row)
    return e / e.sum()


def sample_token(distribution: np.ndarray, rng) -> int:
    """Draw a token id from a probability vector; ``rng`` is a seed or Generator."""
    dist = np.asarray(distribution, dtype=np.float64)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return int(rng.choice(len(dist), p=dist / dist.sum()))


def yes_no_probability(l_yes: float, l_no: float) -> float:
    """Two-way softmax over the answer-word logits, computed as a stable sigmoid."""
    diff = float(l_yes) - float(l_no)
    if diff >= 0:
        return 1.0 / (1.0 + math.exp(-diff))
    e = math.exp(diff)
    return e / (1.0 + e)


def encode_for_model(text: str, vocab: TokenizerVocab, config: LmConfig) -> list[int]:
    """<bos> + token ids, left-truncated to the context window.

    Truncation drops the oldest tokens so the target segment and answer cue
    always survive.
    """
    ids = [vocab.bos_id] + encode(text, vocab)
    if len(ids) > config.context_len:
        ids = [vocab.bos_id] + ids[-(config.context_len - 1):]
    return ids


def predict_correctness(
    params: LmParams,
    input_text: str,
    vocab: TokenizerVocab,
    template: PromptTemplate = PromptTemplate(),
    tensors: dict[str, np.ndarray] | None = None,
) -> float:
    """Probability that the answer is the positive word, from final-row logits."""
    no_id, yes_id = vocab.answer_ids(template)
    ids = encode_for_model(input_text, vocab, params.config)
    logits = forward(params, ids, tensors=tensors)
    last = logits[-1]
    return yes_no_probability(last[yes_id], last[no_id])


def predict_correctness_batch(
    params: LmParams,
    texts: Sequence[str],
    vocab: TokenizerVocab,
    template: PromptTemplate = PromptTemplate(),
    tensors: dict[str, np.ndarray] | None = None,
    batch_size: int = 128,
) -> np.ndarray:
    """Vectorized ``predict_correctness`` over many prompts.

    Prompts are sorted by length into padded batches; right padding cannot
    influence earlier rows because attention is causal.
    """
    no_id, yes_id = vocab.answer_ids(template)
    encoded = [encode_for_model(t, vocab, params.config) for t in texts]
    order = sorted(range(len(encoded)), key=lambda i: len(encoded[i]))
    out = np.empty(len(encoded), dtype=np.float64)
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        maxlen = max(len(encoded[i]) for i in chunk)
        batch = np.full((len(chunk), maxlen), vocab.pad_id, dtype=np.int64)
        for r, i in enumerate(chunk):
            batch[r, : len(encoded[i])] = encoded[i]
        logits = forward_batch(params, batch, tensors=tensors)
        for r, i in enumerate(chunk):
            last = logits[r, len(encoded[i]) - 1]
            out[i] = yes_no_probability(last[yes_id], last[no_id])
    return out
