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

"""Federated learning harness for gradient inversion attacks and defenses."""

import json
import os

import numpy as np

from . import _core
from ._core import (
    ConfigError,
    ConstructionError,
    Error,
    IngestError,
    NumericError,
    ShapeError,
    accuracy,
    f1_macro,
    hsic,
    make_synthetic,
    metrics_columns,
    mse,
    pearson,
    psnr,
    total_variation,
    write_synthetic_bloodmnist,
)

__all__ = [
    "ConfigError", "ConstructionError", "Error", "IngestError", "NumericError", "ShapeError",
    "accuracy", "default_config", "f1_macro", "hsic", "make_synthetic", "metrics_columns",
    "mse", "pearson", "plot", "pretrain", "psnr", "read_npz", "resolve_config", "run", "sweep",
    "total_variation", "write_synthetic_bloodmnist",
]


def default_config(profile="desk", dataset="synthetic", defense="none"):
    return json.loads(_core.default_config(profile, dataset, defense))


def resolve_config(user=None, profile=None, seed=None, out=None, threads=None):
    """Merges `user` over the defaults and validates it."""
    text = json.dumps(user or {})
    out = os.fspath(out) if out is not None else None
    return json.loads(_core.resolve_config(text, profile, seed, out, threads))


def pretrain(resolved):
    return _core.pretrain(json.dumps(resolved))


def run(resolved):
    return _core.run(json.dumps(resolved))


def sweep(resolved):
    return _core.sweep(json.dumps(resolved))


def plot(csvs, out):
    _core.plot([os.fspath(c) for c in csvs], os.fspath(out))


def read_npz(path):
    """Reads every member of a .npz archive into numpy arrays."""
    return {
        key: np.frombuffer(raw, dtype=np.dtype(descr)).reshape(shape).copy()
        for key, (descr, shape, raw) in _core.read_npz(os.fspath(path)).items()
    }
