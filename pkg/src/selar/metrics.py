"""Metrics, data splits and the weighting-function dump."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import SplitError, StateError, UndefinedMetricError


@dataclass
class SplitSpec:
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2
    seed: int = 0
    stratified: bool = False

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise SplitError(f"split fractions must be positive and sum to 1, got {fr}")


@dataclass
class MetricReport:
    loss: float
    count: int
    auc: float | None = None
    f1_micro: float | None = None
    f1_macro: float | None = None


def auc(scores, labels) -> float:
    """Mann-Whitney AUC; ties between a positive and a negative count one half."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise UndefinedMetricError("scores and labels must have equal length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)  # average ranks for ties
    u_stat = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


def f1(pred_classes, true_classes, n_classes: int) -> tuple[float, float]:
    """(micro, macro) F1. Classes absent from both predictions and truth score 0 in the macro mean."""
    pred = np.asarray(pred_classes, dtype=np.int64).ravel()
    true = np.asarray(true_classes, dtype=np.int64).ravel()
    if pred.size == 0 or pred.shape != true.shape:
        raise UndefinedMetricError("F1 needs equal-length, non-empty inputs")
    if min(pred.min(), true.min()) < 0 or max(pred.max(), true.max()) >= n_classes:
        raise UndefinedMetricError(f"class ids must lie in [0, {n_classes})")
    tp = np.bincount(true[pred == true], minlength=n_classes).astype(np.float64)
    pred_count = np.bincount(pred, minlength=n_classes).astype(np.float64)
    true_count = np.bincount(true, minlength=n_classes).astype(np.float64)
    denom = pred_count + true_count
    per_class = np.divide(2 * tp, denom, out=np.zeros(n_classes), where=denom > 0)
    micro_denom = pred_count.sum() + true_count.sum()
    micro = float(2 * tp.sum() / micro_denom)
    return micro, float(per_class.mean())


def _sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    n_train = int(round(spec.train * n))
    n_val = int(round(spec.val * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def split(items, spec: SplitSpec, labels=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Disjoint train/val/test index arrays covering ``range(len(items))``.

    ``items`` may be a length or a sequence. Stratified mode splits every
    label class separately with the same fractions.
    """
    n = items if isinstance(items, (int, np.integer)) else len(items)
    rng = np.random.default_rng(spec.seed)
    if not spec.stratified:
        sizes = _sizes(n, spec)
        if min(sizes) == 0:
            raise SplitError(f"{n} items cannot fill three non-empty splits {sizes}")
        perm = rng.permutation(n)
        return perm[:sizes[0]], perm[sizes[0]:sizes[0] + sizes[1]], perm[sizes[0] + sizes[1]:]
    if labels is None:
        raise SplitError("stratified split needs labels")
    labels = np.asarray(labels)
    if len(labels) != n:
        raise SplitError("one label per item required")
    parts: list[list[np.ndarray]] = [[], [], []]
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if len(members) < 3:
            raise SplitError(f"class {cls!r} has {len(members)} items; cannot stratify into three splits")
        members = members[rng.permutation(len(members))]
        a, b, _ = _sizes(len(members), spec)
        parts[0].append(members[:a])
        parts[1].append(members[a:a + b])
        parts[2].append(members[a + b:])
    out = tuple(np.sort(np.concatenate(p)) for p in parts)
    if any(len(p) == 0 for p in out):
        raise SplitError("stratification left a split empty")
    return tuple(p[rng.permutation(len(p))] for p in out)


def loss_grid(start: float = 0.0, stop: float = 5.0, step: float = 0.05) -> np.ndarray:
    n = int(round((stop - start) / step)) + 1
    return start + step * np.arange(n)


def weight_curve_rows(theta: dict[str, np.ndarray] | None, n_aux: int, grid=None,
                      theta_h: dict[str, np.ndarray] | None = None) -> list[tuple]:
    """Rows ``(task, label, loss, V, V*loss[, V_H])`` over a loss grid.

    In hint mode the hint-loss slot of the embedding is set equal to the loss.
    """
    from . import autodiff as ad
    from .weighting import make_embeddings, weights

    if not theta:
        raise StateError("no trained weighting network")
    grid = loss_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    width = theta["theta.W1"].shape[0]
    hint = width == n_aux + 3
    if not hint and width != n_aux + 2:
        raise StateError(f"weighting net width {width} does not fit {n_aux} auxiliary tasks")
    rows = []
    with ad.no_grad():
        params = {k: ad.Tensor(v) for k, v in theta.items()}
        if theta_h:
            params.update({k: ad.Tensor(v) for k, v in theta_h.items()})
        for t in range(n_aux + 1):
            for y in (0, 1):
                n = len(grid)
                xi = make_embeddings(np.full(n, t), grid, np.full(n, float(y)), n_aux, grid if hint else None)
                v = weights(xi, params, "theta").data
                vh = weights(xi, params, "theta_h").data if theta_h else None
                for i, loss in enumerate(grid):
                    row = (t, y, float(loss), float(v[i]), float(v[i] * loss))
                    if vh is not None:
                        row += (float(vh[i]),)
                    rows.append(row)
    return rows


def weight_curve_dump(theta, n_aux: int, grid=None, theta_h=None) -> str:
    """CSV text of weight_curve_rows with a header; floats at 6 significant digits."""
    rows = weight_curve_rows(theta, n_aux, grid, theta_h)
    header = ["task", "label", "loss", "weight", "adjusted_loss"] + (["hint_gate"] if theta_h else [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([row[0], row[1]] + [fmt(x) for x in row[2:]])
    return buf.getvalue()


def fmt(x: float) -> str:
    return f"{x:.6g}"
