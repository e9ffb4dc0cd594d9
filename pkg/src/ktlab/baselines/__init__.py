from .bkt import (
    BktParams,
    BktTracer,
    bkt_fit_em,
    bkt_predict_and_update,
    fit_bkt_sequences,
    fit_bkt_tracer,
    kc_sequences,
    load_bkt_json,
    save_bkt_json,
)
from .irt import IrtParams, IrtTracer, fit_irt_tracer, irt_fit, irt_predict, load_irt_json, save_irt_json
from .pfa import (
    PfaKcParams,
    PfaParams,
    PfaTracer,
    fit_pfa_tracer,
    load_pfa_json,
    pfa_fit,
    pfa_predict,
    prior_counts,
    save_pfa_json,
)
from .dkt import (
    DktConfig,
    DktParams,
    DktTracer,
    dkt_loss_and_grads,
    dkt_predict,
    dkt_train,
    encode_input_index,
    fit_dkt_tracer,
    init_dkt_params,
)

__all__ = [
    "BktParams",
    "BktTracer",
    "DktConfig",
    "DktParams",
    "DktTracer",
    "IrtParams",
    "IrtTracer",
    "PfaKcParams",
    "PfaParams",
    "PfaTracer",
    "bkt_fit_em",
    "bkt_predict_and_update",
    "dkt_loss_and_grads",
    "dkt_predict",
    "dkt_train",
    "encode_input_index",
    "fit_bkt_sequences",
    "fit_bkt_tracer",
    "fit_dkt_tracer",
    "fit_irt_tracer",
    "fit_pfa_tracer",
    "init_dkt_params",
    "irt_fit",
    "irt_predict",
    "kc_sequences",
    "load_bkt_json",
    "load_irt_json",
    "load_pfa_json",
    "pfa_fit",
    "pfa_predict",
    "prior_counts",
    "save_bkt_json",
    "save_irt_json",
    "save_pfa_json",
]
