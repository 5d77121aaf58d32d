# Copyright 2026 The fedshield Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import csv
import math

import numpy as np
import pytest

import fedshield


def tiny_user(defense, out):
    return {
        "output_dir": str(out),
        "dataset": {
            "max_train": 48,
            "max_test": 24,
            "synthetic": {"channels": 2, "height": 9, "width": 9, "num_classes": 3},
        },
        "arch": {"width_divisor": 16},
        "federation": {"num_clients": 2, "rounds": 2, "batch_size": 8},
        "defense": {"kind": defense, "pretrain": {"epochs": 2, "batch_size": 8}},
        "attack": {"batch_size": 4, "local_epochs": 1, "iterations": 10},
    }


def test_metrics_match_numpy():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(2, 3, 4, 4))
    m = np.mean((x - y) ** 2)
    assert fedshield.mse(x, y) == pytest.approx(m, rel=1e-12)
    assert fedshield.psnr(x, y, 2.0) == pytest.approx(10 * math.log10(4.0 / m), rel=1e-12)
    assert fedshield.accuracy([1, 1, 0, 0], [1, 0, 0, 0]) == 0.75
    assert fedshield.f1_macro([1, 1, 0, 0], [1, 0, 0, 0]) == pytest.approx(11 / 15)
    a, b = rng.normal(size=50), rng.normal(size=50)
    assert fedshield.pearson(list(a), list(b)) == pytest.approx(np.corrcoef(a, b)[0, 1], abs=1e-12)


def test_errors_map_to_python_exceptions():
    with pytest.raises(fedshield.ShapeError):
        fedshield.mse(np.zeros(2), np.zeros(3))
    with pytest.raises(fedshield.ConfigError, match="federation.roundz"):
        fedshield.resolve_config({"federation": {"roundz": 3}})
    assert issubclass(fedshield.ConfigError, fedshield.Error)


def test_config_round_trip():
    doc = fedshield.default_config("paper", "cifar10", "proposed_fixed")
    assert doc["profile"] == "paper"
    resolved = fedshield.resolve_config({"seed": 3}, profile="desk", threads=1)
    assert resolved["seed"] == 3 and resolved["threads"] == 1
    assert fedshield.metrics_columns()[0] == "dataset"


def test_npz_reader_matches_numpy(tmp_path):
    path = tmp_path / "blood.npz"
    fedshield.write_synthetic_bloodmnist(path, 12, 4, 6, 1, side=8)
    ours = fedshield.read_npz(path)
    with np.load(path) as ref:
        assert sorted(ours) == sorted(ref.files)
        for key in ref.files:
            np.testing.assert_array_equal(ours[key], ref[key])
    assert ours["train_images"].shape == (12, 8, 8, 3)
    assert ours["train_images"].dtype == np.uint8


def test_synthetic_is_seeded():
    a, la = fedshield.make_synthetic(10, 2, 5, 5, 3, seed=4)
    b, lb = fedshield.make_synthetic(10, 2, 5, 5, 3, seed=4)
    assert a.shape == (10, 2, 5, 5)
    np.testing.assert_array_equal(a, b)
    assert la == lb and set(la) <= {0, 1, 2}


def test_run_writes_metrics_row(tmp_path):
    resolved = fedshield.resolve_config(tiny_user("proposed_fixed", tmp_path / "run"), threads=1)
    summary = fedshield.run(resolved)
    assert summary["attacked"]
    assert 0.0 <= summary["client_acc"] <= 1.0
    assert math.isfinite(summary["recon_psnr_db"])
    with open(tmp_path / "run" / "metrics.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert list(rows[0]) == fedshield.metrics_columns()
    assert float(rows[0]["client_acc"]) == pytest.approx(summary["client_acc"])
