"""Recurrent tracer: one LSTM layer over (KC, correctness) one-hots.

The step-t input is a one-hot of size 2K at index kc_t + K * correct_t; the
output layer gives K per-KC correctness probabilities. Training minimizes
binary cross-entropy of output[t][kc_{t+1}] against correct_{t+1}.
Everything is float64 numpy with hand-written BPTT so gradients can be
checked against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data import Exercise, InteractionDataset, StudentHistory
from ..errors import DivergenceError, MissingKcError, ParameterError, UnknownKcError
from ..optim import AdamW

_SIG_CLIP = 1e-12


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True)
class DktConfig:
    hidden_size: int = 64
    learning_rate: float = 5e-3
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.hidden_size < 1 or self.learning_rate <= 0 or self.epochs < 0:
            raise ParameterError("invalid DKT config")


@dataclass
class DktParams:
    kc_ids: tuple[str, ...]
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_kcs(self) -> int:
        return len(self.kc_ids)

    @property
    def hidden_size(self) -> int:
        return self.tensors["w_h"].shape[1]

    def kc_index(self, kc_id: str) -> int:
        try:
            return self.kc_ids.index(kc_id)
        except ValueError:
            raise UnknownKcError(f"KC {kc_id!r} is outside the model's universe") from None


def init_dkt_params(kc_ids: tuple[str, ...], hidden_size: int, seed: int = 0) -> DktParams:
    rng = np.random.default_rng(seed)
    k = len(kc_ids)
    h = hidden_size
    scale_x = 1.0 / np.sqrt(2 * k)
    scale_h = 1.0 / np.sqrt(h)
    t = {
        "w_x": rng.normal(0, scale_x, size=(4 * h, 2 * k)),
        "w_h": rng.normal(0, scale_h, size=(4 * h, h)),
        "b": np.zeros(4 * h),
        "w_out": rng.normal(0, scale_h, size=(k, h)),
        "b_out": np.zeros(k),
    }
    t["b"][h : 2 * h] = 1.0  # forget-gate bias starts open
    return DktParams(kc_ids=kc_ids, tensors=t)


def encode_input_index(kc_index: int, correct: int, n_kcs: int) -> int:
    """Index of the single 1 in the 2K one-hot for (kc, correctness)."""
    return kc_index + n_kcs * correct


def _lstm_forward(params: DktParams, inputs: np.ndarray, with_cache: bool = False):
    """inputs: (B, T) int indices into the 2K one-hot; returns per-step
    hidden states (B, T, H) plus caches for BPTT."""
    t = params.tensors
    h_size = params.hidden_size
    b, steps = inputs.shape
    h = np.zeros((b, h_size))
    c = np.zeros((b, h_size))
    hs = np.empty((b, steps, h_size))
    caches = []
    wx_t = t["w_x"].T  # (2K, 4H): row lookup replaces the one-hot matmul
    for k in range(steps):
        z = wx_t[inputs[:, k]] + h @ t["w_h"].T + t["b"]
        i = _sigmoid(z[:, :h_size])
        f = _sigmoid(z[:, h_size : 2 * h_size])
        g = np.tanh(z[:, 2 * h_size : 3 * h_size])
        o = _sigmoid(z[:, 3 * h_size :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        if with_cache:
            caches.append((h, c, i, f, g, o, tc))
        h, c = h_new, c_new
        hs[:, k] = h
    return hs, caches


def dkt_loss_and_grads(params: DktParams, inputs, target_kc, target_y, mask):
    """Mean masked BCE and gradients.

    ``inputs`` (B, T) are one-hot indices; position t's output is scored on
    unit ``target_kc[b, t]`` against ``target_y[b, t]`` wherever ``mask`` is
    set.
    """
    t = params.tensors
    h_size = params.hidden_size
    b, steps = inputs.shape
    hs, caches = _lstm_forward(params, inputs, with_cache=True)

    logits = hs @ t["w_out"].T + t["b_out"]  # (B, T, K)
    probs = _sigmoid(logits)
    rows = np.arange(b)[:, None], np.arange(steps)[None, :]
    p_sel = probs[rows[0], rows[1], target_kc]
    w = mask.astype(np.float64)
    n = w.sum()
    if n == 0:
        raise ParameterError("loss mask selects no positions")
    eps = _SIG_CLIP
    losses = -(target_y * np.log(np.maximum(p_sel, eps)) + (1 - target_y) * np.log(np.maximum(1 - p_sel, eps)))
    loss = float((losses * w).sum() / n)

    dlogit_sel = (p_sel - target_y) * w / n  # (B, T)
    dlogits = np.zeros_like(probs)
    dlogits[rows[0], rows[1], target_kc] = dlogit_sel

    grads = {k: np.zeros_like(v) for k, v in t.items()}
    flat_h = hs.reshape(-1, h_size)
    grads["w_out"] = dlogits.reshape(-1, params.n_kcs).T @ flat_h
    grads["b_out"] = dlogits.sum(axis=(0, 1))
    dh_from_out = dlogits @ t["w_out"]  # (B, T, H)

    dh_next = np.zeros((b, h_size))
    dc_next = np.zeros((b, h_size))
    dz_all = np.empty((b, steps, 4 * h_size))
    for k in range(steps - 1, -1, -1):
        h_prev, c_prev, i, f, g, o, tc = caches[k]
        dh = dh_from_out[:, k] + dh_next
        do = dh * tc
        dc = dh * o * (1 - tc * tc) + dc_next
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dc_next = dc * f
        dz = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1
        )
        dz_all[:, k] = dz
        grads["w_h"] += dz.T @ h_prev
        dh_next = dz @ t["w_h"]
    grads["b"] = dz_all.sum(axis=(0, 1))
    np.add.at(grads["w_x"].T, inputs.reshape(-1), dz_all.reshape(-1, 4 * h_size))
    return loss, grads


def _dataset_to_arrays(ds: InteractionDataset, kc_index: dict[str, int]):
    """Pad per-student (input index, target kc, target y) arrays."""
    seqs = []
    for sid in ds.student_ids():
        hist = ds.histories[sid]
        if len(hist) < 2:
            continue
        idx = [kc_index[it.kc_id] for it in hist.interactions]
        ys = [it.correct for it in hist.interactions]
        k = len(kc_index)
        inputs = [encode_input_index(idx[t], ys[t], k) for t in range(len(hist) - 1)]
        seqs.append((np.array(inputs), np.array(idx[1:]), np.array(ys[1:], dtype=np.float64)))
    return seqs


def _pad_batch(seqs):
    b = len(seqs)
    steps = max(len(s[0]) for s in seqs)
    inputs = np.zeros((b, steps), dtype=np.int64)
    target_kc = np.zeros((b, steps), dtype=np.int64)
    target_y = np.zeros((b, steps))
    mask = np.zeros((b, steps), dtype=bool)
    for r, (inp, tkc, ty) in enumerate(seqs):
        n = len(inp)
        inputs[r, :n] = inp
        target_kc[r, :n] = tkc
        target_y[r, :n] = ty
        mask[r, :n] = True
    return inputs, target_kc, target_y, mask


def dkt_train(
    ds: InteractionDataset,
    config: DktConfig = DktConfig(),
    kc_universe: tuple[str, ...] | None = None,
) -> tuple[DktParams, list[float]]:
    """Train on every student with at least two interactions.

    ``kc_universe`` fixes the KC index space before training (defaults to the
    dataset's KC table); prediction on KCs outside it raises UnknownKcError.
    """
    kc_ids = tuple(kc_universe) if kc_universe is not None else tuple(sorted(ds.kc_table))
    if not kc_ids:
        raise MissingKcError("empty KC universe")
    kc_index = {kc: i for i, kc in enumerate(kc_ids)}
    for kc in ds.kc_table:
        if kc not in kc_index:
            raise UnknownKcError(f"dataset KC {kc!r} missing from the fixed universe")
    seqs = _dataset_to_arrays(ds, kc_index)
    if not seqs:
        raise ParameterError("no trainable sequences (all histories shorter than 2)")

    params = init_dkt_params(kc_ids, config.hidden_size, seed=config.seed)
    opt = AdamW(params.tensors, learning_rate=config.learning_rate, clip_norm=config.clip_norm)
    rng = np.random.default_rng(config.seed)
    curve = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(seqs))
        loss_sum = n_sum = 0.0
        for start in range(0, len(order), config.batch_size):
            chunk = [seqs[i] for i in order[start : start + config.batch_size]]
            inputs, target_kc, target_y, mask = _pad_batch(chunk)
            loss, grads = dkt_loss_and_grads(params, inputs, target_kc, target_y, mask)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}")
            opt.step(params.tensors, grads)
            n = float(mask.sum())
            loss_sum += loss * n
            n_sum += n
        curve.append(loss_sum / n_sum)
    return params, curve


def dkt_predict(params: DktParams, history: StudentHistory, target_kc_id: str) -> float:
    """Probability for the target KC read from the last history step's output."""
    kc = params.kc_index(target_kc_id)
    t = params.tensors
    if len(history) == 0:
        h = np.zeros((1, params.hidden_size))
    else:
        idx = []
        for it in history.interactions:
            idx.append(encode_input_index(params.kc_index(it.kc_id), it.correct, params.n_kcs))
        hs, _ = _lstm_forward(params, np.array(idx)[None, :])
        h = hs[:, -1]
    logit = float(h[0] @ t["w_out"][kc] + t["b_out"][kc])
    return float(_sigmoid(np.array([logit]))[0])


class DktTracer:
    def __init__(self, params: DktParams):
        self.params = params

    def predict(self, history: StudentHistory, target: Exercise) -> float:
        return dkt_predict(self.params, history, target.kc_id)


def fit_dkt_tracer(
    ds: InteractionDataset,
    config: DktConfig = DktConfig(),
    kc_universe: tuple[str, ...] | None = None,
) -> DktTracer:
    params, _ = dkt_train(ds, config, kc_universe=kc_universe)
    return DktTracer(params)
