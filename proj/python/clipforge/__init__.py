# Copyright (c) 2026, The clipforge Authors
# SPDX-License-Identifier: Apache-2.0
"""Contrastive image-text training at desk scale."""

from clipforge._clipforge import (
    ClipforgeError,
    clip_loss,
    count_params,
    detokenize,
    layer_scales,
    lr_at,
    recall_at_k,
    robustness_gap,
    round1,
    run_cli,
    tokenize,
)

__all__ = [
    "ClipforgeError",
    "clip_loss",
    "count_params",
    "detokenize",
    "layer_scales",
    "lr_at",
    "recall_at_k",
    "robustness_gap",
    "round1",
    "run_cli",
    "tokenize",
]
__version__ = "0.1.0"
