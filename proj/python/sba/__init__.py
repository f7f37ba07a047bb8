# Copyright 2026 The SBA Authors.
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

"""Python bindings for the Stiefel-manifold Bayesian adapter library."""

import json

from . import _sba
from ._sba import (
    ConfigError,
    SbaError,
    auroc,
    calibration,
    check_stiefel,
    decompose_uncertainty,
    haar_sample,
    log_normalizer_mc,
    log_normalizer_saddlepoint,
    log_stiefel_volume,
    manifold_dim,
    ood_auroc,
    polar_project,
    qr_retract,
    run_geometry_suite,
    tangent_project,
)

__all__ = [
    "ConfigError",
    "SbaError",
    "auroc",
    "calibration",
    "check_stiefel",
    "config_hash",
    "decompose_uncertainty",
    "default_config",
    "generate_dataset",
    "haar_sample",
    "log_normalizer_mc",
    "log_normalizer_saddlepoint",
    "log_stiefel_volume",
    "manifold_dim",
    "ood_auroc",
    "polar_project",
    "qr_retract",
    "run_geometry_suite",
    "tangent_project",
    "train_eval",
]


def default_config():
    return json.loads(_sba.default_config())


def config_hash(config):
    return _sba.config_hash(json.dumps(config))


def generate_dataset(spec=None):
    return _sba.generate_dataset(json.dumps(spec or {}))


def train_eval(config, seed=0):
    """Trains the configured method for one seed and returns its metrics."""
    return json.loads(_sba.train_eval(json.dumps(config), seed))
