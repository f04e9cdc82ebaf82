# Copyright (c) 2026, The clipforge Authors
# SPDX-License-Identifier: Apache-2.0

import math
import os

import numpy as np
import pytest

import clipforge


def test_tokenizer_round_trip():
    ids = clipforge.tokenize("a photo of a cat.", 32)
    assert len(ids) == 32
    assert clipforge.detokenize(ids) == "a photo of a cat."


def test_uniform_logits_give_log_batch():
    assert clipforge.clip_loss(np.zeros((8, 8))) == pytest.approx(math.log(8), abs=1e-5)


def test_robustness_gap_rows():
    g = clipforge.robustness_gap(80.4, [82.9, 93.2, 73.8, 68.9, 78.4])
    assert g["avg_1dp"] == 79.6
    assert g["delta_1dp"] == 0.8
    with pytest.raises(clipforge.ClipforgeError):
        clipforge.robustness_gap(50.0, [101.0])


def test_recall_identity():
    r = clipforge.recall_at_k(np.eye(4), [[0], [1], [2], [3]], [1])
    assert r == {1: 100.0}


def test_schedule_and_layer_scales():
    assert clipforge.lr_at(2000, 4000, "cosine", 1.0, 1000) == pytest.approx(0.5)
    scales = clipforge.layer_scales(0.75, 12)
    assert len(scales) == 14
    assert scales[-1] == 1.0
    assert scales[0] == pytest.approx(0.75**13)


def test_count_params_base():
    image, text = clipforge.count_params("b16")
    assert abs(image - 86e6) <= 0.02 * 86e6
    assert abs(text - 63e6) <= 0.02 * 63e6


def test_cli_unknown_override(tmp_path, monkeypatch):
    monkeypatch.setenv("CLIPFORGE_RUN_ROOT", str(tmp_path))
    status, _, err = clipforge.run_cli(["train", "--set", "nonsense=1"])
    assert status == 1
    assert "nonsense" in err
    assert os.path.isdir(tmp_path)
