from .model import (
    LmConfig,
    LmParams,
    encode_for_model,
    forward,
    forward_batch,
    init_params,
    loss_and_grads,
    next_token_distribution,
    predict_correctness,
    predict_correctness_batch,
    sample_token,
    yes_no_probability,
)
from .lora import LoraAdapter, effective_tensors, lora_attach, lora_merge
from .train import TrainConfig, encode_example, train_clm, train_lora
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "LmConfig",
    "LmParams",
    "LoraAdapter",
    "TrainConfig",
    "encode_example",
    "encode_for_model",
    "effective_tensors",
    "forward",
    "forward_batch",
    "init_params",
    "load_checkpoint",
    "lora_attach",
    "lora_merge",
    "loss_and_grads",
    "next_token_distribution",
    "predict_correctness",
    "predict_correctness_batch",
    "sample_token",
    "save_checkpoint",
    "train_clm",
    "train_lora",
    "yes_no_probability",
]
