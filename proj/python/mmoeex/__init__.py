# Copyright (C) 2026 The MMoEEx Lab Authors. Licensed under the Apache License, Version 2.0.
"""Multi-task mixture-of-experts lab."""

import json as _json

from ._core import (
    ConfigError,
    ContractError,
    DataError,
    DomainError,
    Error,
    IoError,
    NumericalError,
    ShapeError,
    UndefinedMetricError,
    build_mask,
    cohen_kappa,
    delta_improvement,
    diversity_report,
    gradcheck,
    learning_rate,
    negative_transfer,
    roc_auc,
)
from . import _core


def generate(generator="tabular", **params):
    """Synthetic suite as a dict of flat lists."""
    return _core.generate(generator, _json.dumps(params))


def run_experiment(config, write_outputs=False):
    """Train one configuration; `config` is a dict or a JSON string."""
    if not isinstance(config, str):
        config = _json.dumps(config)
    return _core.run_experiment(config, write_outputs)


__all__ = [
    "ConfigError", "ContractError", "DataError", "DomainError", "Error",
    "IoError", "NumericalError", "ShapeError", "UndefinedMetricError",
    "build_mask", "cohen_kappa", "delta_improvement", "diversity_report",
    "generate", "gradcheck", "learning_rate", "negative_transfer", "roc_auc",
    "run_experiment",
]
