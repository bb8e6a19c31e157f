import csv
import io

import numpy as np
import pytest

from selar.errors import SplitError, StateError, UndefinedMetricError
from selar.metrics import SplitSpec, auc, f1, loss_grid, split, weight_curve_dump, weight_curve_rows
from selar.weighting import init_weight_net


def auc_pairwise(scores, labels):
    pos, neg = scores[labels == 1], scores[labels == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def random_auc_case(rng):
    n = int(rng.integers(2, 60))
    labels = rng.integers(0, 2, n)
    labels[:2] = [0, 1]
    # coarse scores force plenty of ties
    scores = rng.integers(0, 6, n) / 5.0 if rng.random() < 0.5 else rng.random(n)
    return scores, labels


def test_auc_examples():
    assert auc([0.9, 0.1], [1, 0]) == 1.0
    assert auc([0.3] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2], [1, 1])


def test_auc_matches_pairwise_oracle_50():
    rng = np.random.default_rng(0)
    s, y = rng.random(50), rng.integers(0, 2, 50)
    assert abs(auc(s, y) - auc_pairwise(s, y)) <= 1e-12


def test_auc_matches_pairwise_oracle_1000_cases():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        s, y = random_auc_case(rng)
        worst = max(worst, abs(auc(s, y) - auc_pairwise(s, y)))
    assert worst <= 1e-12


def test_f1_examples():
    assert f1([0, 1, 2], [0, 1, 2], 3) == (1.0, 1.0)
    micro, _ = f1([1, 1, 1], [0, 2, 0], 3)
    assert micro == 0.0
    with pytest.raises(UndefinedMetricError):
        f1([], [], 3)


def test_f1_hand_fixture():
    true = [0, 0, 0, 1, 1, 1, 1, 2, 2, 2]
    pred = [0, 1, 0, 1, 1, 2, 1, 2, 0, 2]
    # class 0: tp 2, predicted 3, true 3 -> p 2/3, r 2/3, f1 2/3
    # class 1: tp 3, predicted 4, true 4 -> f1 3/4
    # class 2: tp 2, predicted 3, true 3 -> f1 2/3
    # micro: 7 correct of 10 -> 0.7
    micro, macro = f1(pred, true, 3)
    assert micro == 0.7
    assert macro == (2 / 3 + 3 / 4 + 2 / 3) / 3


def test_split_sizes_and_determinism():
    a = split(10, SplitSpec(0.8, 0.1, 0.1, seed=3))
    assert [len(p) for p in a] == [8, 1, 1]
    assert sorted(np.concatenate(a).tolist()) == list(range(10))
    b = split(10, SplitSpec(0.8, 0.1, 0.1, seed=3))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_split_stratified_balance():
    labels = np.array([0, 1] * 50)
    parts = split(100, SplitSpec(0.5, 0.25, 0.25, seed=0, stratified=True), labels)
    for p in parts:
        assert abs(labels[p].sum() - len(p) / 2) <= 1


def test_split_errors():
    with pytest.raises(SplitError):
        SplitSpec(0.5, 0.5, 0.5)
    with pytest.raises(SplitError):
        split(4, SplitSpec(0.6, 0.2, 0.2, stratified=True), [0, 0, 1, 1])


def test_weight_dump_rows_and_neutral_values():
    theta = init_weight_net(np.random.default_rng(0), 5 + 2, neutral=True)
    grid = loss_grid(0.0, 5.0, 0.05)
    assert len(grid) == 101
    rows = weight_curve_rows(theta, 5, grid)
    assert len(rows) == (5 + 1) * 2 * 101
    for task, label, loss, v, adjusted in rows:
        assert v == 0.5 and adjusted == 0.5 * loss
    text = weight_curve_dump(theta, 5, grid)
    parsed = list(csv.reader(io.StringIO(text)))
    assert parsed[0] == ["task", "label", "loss", "weight", "adjusted_loss"]
    assert len(parsed) == 1213


def test_weight_dump_hint_columns():
    rng = np.random.default_rng(0)
    theta = init_weight_net(rng, 2 + 3)
    theta_h = init_weight_net(rng, 2 + 3, "theta_h")
    text = weight_curve_dump(theta, 2, loss_grid(0, 1, 0.5), theta_h)
    assert text.splitlines()[0].endswith("hint_gate")


def test_weight_dump_needs_theta():
    with pytest.raises(StateError):
        weight_curve_rows({}, 3)
    with pytest.raises(StateError):
        weight_curve_rows(init_weight_net(np.random.default_rng(0), 9), 3)
