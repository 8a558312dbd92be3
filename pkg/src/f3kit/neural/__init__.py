"""Minimal tensor layer: numpy forward passes with hand-derived backward
passes, an AdamW optimizer with warmup-cosine scheduling, and a central
finite-difference gradient checker."""

from .ops import (
    ParamStore,
    bigru,
    bigru_backward,
    conv_backbone,
    conv_backbone_backward,
    gru_cell,
    gru_cell_backward,
    gru_sequence,
    gru_sequence_backward,
    init_bigru_params,
    init_conv_backbone_params,
    init_gru_params,
    init_linear_params,
    linear,
    linear_backward,
    sigmoid,
    softmax_cross_entropy,
    tsm_shift,
    tsm_shift_backward,
    weighted_bce,
)
from .optim import AdamW, warmup_cosine
from .gradcheck import grad_check

__all__ = [
    "AdamW",
    "ParamStore",
    "bigru",
    "bigru_backward",
    "conv_backbone",
    "conv_backbone_backward",
    "grad_check",
    "gru_cell",
    "gru_cell_backward",
    "gru_sequence",
    "gru_sequence_backward",
    "init_bigru_params",
    "init_conv_backbone_params",
    "init_gru_params",
    "init_linear_params",
    "linear",
    "linear_backward",
    "sigmoid",
    "softmax_cross_entropy",
    "tsm_shift",
    "tsm_shift_backward",
    "warmup_cosine",
    "weighted_bce",
]
