"""Sample embeddings, the weighting network and the hint gate.

A sample embedding is ``[loss; (hint_loss); task_code; label]`` with width
``T + 2`` (``T + 3`` with hints) for ``T`` auxiliary tasks. The task code has
``T`` slots: auxiliary task ``t`` sets slot ``t - 1``, the primary task is the
all-zero code. Its entries are plain numbers: no gradient flows from the embedding back into the
model weights. The weighting network maps it through one hidden ReLU layer of
width 100 to a sigmoid output in (0, 1).
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ModeError, ShapeError
from .gnn import glorot

HIDDEN = 100


def embedding_width(n_aux: int, hint: bool) -> int:
    return n_aux + 3 if hint else n_aux + 2


def make_embedding(task_id: int, loss_value: float, label: float, n_aux: int,
                   hint_loss: float | None = None, hint: bool = False) -> np.ndarray:
    if not 0 <= task_id <= n_aux:
        raise ModeError(f"task id {task_id} outside [0, {n_aux}]")
    if loss_value < 0:
        raise ModeError("loss must be non-negative")
    if hint_loss is not None and not hint:
        raise ModeError("hint loss given outside hint mode")
    if hint and hint_loss is None:
        raise ModeError("hint mode needs a hint loss")
    return make_embeddings(np.array([task_id]), np.array([loss_value]), np.array([label]), n_aux,
                           None if hint_loss is None else np.array([hint_loss]))[0]


def make_embeddings(task_ids, losses, labels, n_aux: int, hint_losses=None) -> np.ndarray:
    """Batch version of make_embedding; returns an ``(N, width)`` constant matrix."""
    task_ids = np.asarray(task_ids, dtype=np.int64)
    losses = np.asarray(losses, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if task_ids.size and (task_ids.min() < 0 or task_ids.max() > n_aux):
        raise ModeError(f"task id outside [0, {n_aux}]")
    onehot = np.zeros((len(task_ids), n_aux + 1))
    onehot[np.arange(len(task_ids)), task_ids] = 1.0
    onehot = onehot[:, 1:]  # primary is the reference code
    cols = [losses[:, None]]
    if hint_losses is not None:
        cols.append(np.asarray(hint_losses, dtype=np.float64)[:, None])
    cols += [onehot, labels[:, None]]
    return np.hstack(cols)


def init_weight_net(rng: np.random.Generator, width: int, prefix: str = "theta",
                    neutral: bool = False) -> dict[str, np.ndarray]:
    """Glorot init with zero biases; ``neutral`` also zeroes W2 so every weight is exactly 0.5."""
    w1 = glorot(rng, width, HIDDEN)
    w2 = glorot(rng, HIDDEN, 1)
    return {
        f"{prefix}.W1": w1,
        f"{prefix}.b1": np.zeros(HIDDEN),
        f"{prefix}.W2": np.zeros((HIDDEN, 1)) if neutral else w2,
        f"{prefix}.b2": np.zeros(1),
    }


def weights(xi, params: dict[str, Tensor], prefix: str = "theta") -> Tensor:
    """``sigmoid(W2 relu(W1 xi + b1) + b2)`` for each row of ``xi``; returns shape (N,)."""
    xi = ad.as_tensor(xi)
    if xi.ndim == 1:
        xi = ad.reshape(xi, (1, xi.shape[0]))
    w1 = params[f"{prefix}.W1"]
    if xi.shape[1] != w1.shape[0]:
        raise ShapeError(f"embedding width {xi.shape[1]} != weight net input {w1.shape[0]}")
    hidden = ad.relu(ad.add(ad.matmul(xi, w1), params[f"{prefix}.b1"]))
    out = ad.add(ad.matmul(hidden, params[f"{prefix}.W2"]), params[f"{prefix}.b2"])
    return ad.sigmoid(ad.reshape(out, (xi.shape[0],)))


def weight(xi, params: dict[str, Tensor], prefix: str = "theta") -> Tensor:
    """Weight of a single sample embedding as a 0-d tensor."""
    return ad.reshape(weights(xi, params, prefix), ())


def combine_with_hint(y_learner, y_hint, gate):
    """Convex combination ``gate * learner + (1 - gate) * hint``.

    Works on per-sample probabilities (gate shape (N,)) or probability
    matrices (gate broadcast across classes), and on plain floats/arrays.
    """
    if not isinstance(y_learner, Tensor) and not isinstance(y_hint, Tensor) and not isinstance(gate, Tensor):
        a, b = np.asarray(y_learner, dtype=np.float64), np.asarray(y_hint, dtype=np.float64)
        if a.shape != b.shape:
            raise ContractError(f"learner answer {a.shape} and hint answer {b.shape} differ in kind")
        g = float(gate) if np.ndim(gate) == 0 else np.asarray(gate, dtype=np.float64)
        if np.any(np.asarray(g) < 0) or np.any(np.asarray(g) > 1):
            raise ContractError("gate must lie in [0, 1]")
        if a.ndim == 2 and np.ndim(g) == 1:
            g = g[:, None]
        out = g * a + (1.0 - g) * b
        return float(out) if out.ndim == 0 else out
    a, b, g = ad.as_tensor(y_learner), ad.as_tensor(y_hint), ad.as_tensor(gate)
    if a.shape != b.shape:
        raise ContractError(f"learner answer {a.shape} and hint answer {b.shape} differ in kind")
    if a.ndim == 2 and g.ndim == 1:
        g = ad.reshape(g, (g.shape[0], 1))
    return ad.add(ad.mul(g, a), ad.mul(ad.sub(1.0, g), b))
