# Copyright (C) 2026 The MMoEEx Lab Authors. Licensed under the Apache License, Version 2.0.
import itertools
import math
import random

import pytest

import mmoeex


def pair_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0
               for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_roc_auc_matches_pair_counting():
    rng = random.Random(4)
    for _ in range(20):
        n = rng.randint(2, 15)
        scores = [rng.randint(0, 4) / 4 for _ in range(n)]
        labels = [rng.randint(0, 1) for _ in range(n)]
        labels[0], labels[1] = 0, 1
        assert mmoeex.roc_auc(scores, labels) == pair_auc(scores, labels)


def test_single_class_auc_raises():
    with pytest.raises(mmoeex.UndefinedMetricError):
        mmoeex.roc_auc([0.1, 0.2], [1, 1])


def test_kappa_identity_and_delta():
    assert mmoeex.cohen_kappa([0, 1, 2, 1], [0, 1, 2, 1]) == 1.0
    stl, mtl = [88.95, 97.48, 87.23], [92.51, 98.47, 87.19]
    assert abs(mmoeex.delta_improvement(stl, mtl) - 1.657) < 0.001
    assert mmoeex.negative_transfer(stl, mtl) == 1


def test_mask_shape():
    rows = mmoeex.build_mask(4, 12, 0.5, "exclusivity", seed=3)
    assert len(rows) == 4 and all(len(r) == 12 for r in rows)
    columns = [sum(r[e] for r in rows) for e in range(12)]
    assert columns.count(1) == 6
    with pytest.raises(mmoeex.ConfigError):
        mmoeex.build_mask(4, 12, 0.5, "sideways")


def test_diversity_report():
    r = mmoeex.diversity_report([[0, 0], [3, 4], [6, 8]], 2)
    assert r["distances"][2] == 1.0
    assert math.isclose(r["d_bar"], 2 / 3)


def test_generate_and_run():
    d = mmoeex.generate("tabular", samples=300, features=4, tasks=2, seed=1)
    assert d["samples"] == 300
    assert len(d["x"]) == 300 * 4
    assert len(d["train"]) + len(d["validation"]) + len(d["test"]) == 300
    config = {
        "dataset": {"generator": "tabular",
                    "params": {"samples": 300, "features": 4, "tasks": 2}},
        "model": {"kind": "mmoeex", "experts": 3, "hidden_dim": 4,
                  "alpha": 0.5, "mask_mode": "exclusivity"},
        "training": {"epochs": 2, "batch_size": 64, "lr": 0.01},
    }
    a = mmoeex.run_experiment(config)
    b = mmoeex.run_experiment(config)
    assert a["complete"]
    assert len(a["history"]) == 2
    assert a["test"] == b["test"]
    assert a["diversity"]["experts"] == 3
    config["training"]["epochz"] = 1
    with pytest.raises(mmoeex.ConfigError):
        mmoeex.run_experiment(config)


def test_schedule_and_gradcheck():
    assert mmoeex.learning_rate(0.001, 0.9, 10, 10) == pytest.approx(0.0009)
    rows = mmoeex.gradcheck(seed=1, instances=1)
    assert rows and all(r["passed"] for r in rows)
