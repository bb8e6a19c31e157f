"""Training strategies and the bi-level meta-learning loop.

One iteration of the meta-learned strategies:

1. draw a primary mini-batch and one mini-batch per auxiliary task;
2. for each cross-validation fold ``c``: take a lookahead step
   ``w_hat = w - alpha * grad_w L_train(w; theta)`` on the other primary folds
   plus the auxiliary batch, keeping the graph so ``w_hat`` is a function of
   ``theta``; score ``w_hat`` with the unweighted primary loss on fold ``c``
   and differentiate that back to ``theta``;
3. ``theta -= beta * sum_c g_c``;
4. ``w -= alpha * grad_w L_train(w; theta)`` on the full mini-batch.

With hints, a second encoder runs on the hub-augmented graph and its answer
is mixed into the learner's answer during training only.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import BatchError, ConfigError, SplitError
from .gnn import (
    EncoderConfig,
    GraphContext,
    TaskHead,
    class_logits,
    init_class_head,
    init_encoder,
    init_pair_head,
    pair_probabilities,
    encode,
)
from .hetgraph import HeteroGraph, PairLabelSet
from .metrics import auc, f1
from .weighting import combine_with_hint, embedding_width, init_weight_net, make_embeddings, weights

log = logging.getLogger(__name__)


class Strategy(str, enum.Enum):
    VANILLA = "vanilla"
    NO_METAPATH = "no-metapath"
    WITH_METAPATH = "with-metapath"
    SELAR = "selar"
    SELAR_HINT = "selar-hint"

    @property
    def uses_aux(self) -> bool:
        return self in (Strategy.WITH_METAPATH, Strategy.SELAR, Strategy.SELAR_HINT)

    @property
    def meta_learned(self) -> bool:
        return self in (Strategy.NO_METAPATH, Strategy.SELAR, Strategy.SELAR_HINT)

    @property
    def uses_hint(self) -> bool:
        return self is Strategy.SELAR_HINT

    @classmethod
    def parse(cls, value) -> Strategy:
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "-").replace("+", "-")
        aliases = {"w/o-meta-path": "no-metapath", "w/-meta-path": "with-metapath",
                   "nometapath": "no-metapath", "withmetapath": "with-metapath", "selarhint": "selar-hint"}
        key = aliases.get(key, key)
        for s in cls:
            if s.value == key:
                return s
        raise ConfigError(f"unknown strategy {value!r}; choose from {[s.value for s in cls]}")


@dataclass
class TrainConfig:
    alpha: float = 0.1
    beta: float = 0.05
    max_iters: int = 200
    folds: int = 3
    n_pr: int = 64
    n_au: int = 64
    strategy: Strategy = Strategy.SELAR
    seed: int = 0
    eval_every: int = 10
    patience: int = 10
    average_folds: bool = False
    fixed_weight: float | None = None
    resample_negatives: bool = False
    neutral_theta: bool = False

    def __post_init__(self):
        self.strategy = Strategy.parse(self.strategy)
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigError("alpha and beta must be positive")
        if self.folds < 1:
            raise ConfigError("folds must be >= 1")
        if self.n_pr < self.folds:
            raise ConfigError("n_pr must be >= folds so every fold is non-empty")
        if self.n_au < 0 or self.max_iters < 0:
            raise ConfigError("n_au and max_iters must be non-negative")
        if self.eval_every < 1 or self.patience < 1:
            raise ConfigError("eval_every and patience must be >= 1")
        if self.fixed_weight is not None and not 0.0 <= self.fixed_weight <= 1.0:
            raise ConfigError("fixed_weight must lie in [0, 1]")


@dataclass
class NodeLabelSet:
    """Labelled nodes for a node-classification primary task."""

    nodes: np.ndarray
    classes: np.ndarray
    task_id: int = 0

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.int64)
        self.classes = np.asarray(self.classes, dtype=np.int64)
        if self.nodes.shape != self.classes.shape:
            raise BatchError("nodes and classes must align")

    def __len__(self):
        return len(self.nodes)

    def subset(self, idx) -> NodeLabelSet:
        idx = np.asarray(idx, dtype=np.int64)
        return NodeLabelSet(self.nodes[idx], self.classes[idx], self.task_id)


Samples = PairLabelSet | NodeLabelSet


@dataclass
class PrimaryTask:
    kind: str  # "link" or "node"
    train: Samples
    val: Samples
    test: Samples
    n_classes: int = 2

    def __post_init__(self):
        if self.kind not in ("link", "node"):
            raise ConfigError(f"primary kind must be 'link' or 'node', got {self.kind!r}")
        if self.kind == "node" and self.n_classes < 2:
            raise ConfigError("node classification needs at least two classes")


@dataclass
class Problem:
    graph: HeteroGraph
    primary: PrimaryTask
    aux: list[PairLabelSet] = field(default_factory=list)
    aug_graph: HeteroGraph | None = None
    # rebuilds auxiliary sets with fresh negatives: (epoch) -> list[PairLabelSet]
    aux_factory: Callable[[int], list[PairLabelSet]] | None = None

    @property
    def n_aux(self) -> int:
        return len(self.aux)


@dataclass
class TrainState:
    w: dict[str, np.ndarray]
    theta: dict[str, np.ndarray] = field(default_factory=dict)
    k: int = 0

    @property
    def theta_h(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.theta.items() if k.startswith("theta_h.")}

    def copy(self) -> TrainState:
        return TrainState({k: v.copy() for k, v in self.w.items()},
                          {k: v.copy() for k, v in self.theta.items()}, self.k)

    def arrays(self) -> dict[str, np.ndarray]:
        return {**self.w, **self.theta}


@dataclass
class FitResult:
    state: TrainState
    best: TrainState
    history: list[dict] = field(default_factory=list)
    best_val: float | None = None
    test_at_best: float | None = None


Batch = dict[int, Samples]


class MiniBatchSampler:
    """Primary batches without replacement per epoch; auxiliary batches redrawn every call."""

    def __init__(self, n_primary: int, batch_size: int, rng: np.random.Generator):
        if n_primary == 0:
            raise BatchError("empty primary training set")
        self.n = n_primary
        self.batch_size = min(batch_size, n_primary)
        self.rng = rng
        self.epoch = 0
        self._perm = rng.permutation(n_primary)
        self._pos = 0

    def primary(self) -> np.ndarray:
        if self._pos + self.batch_size > self.n:
            self.epoch += 1
            self._perm = self.rng.permutation(self.n)
            self._pos = 0
        idx = self._perm[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx

    def auxiliary(self, size: int, batch_size: int) -> np.ndarray:
        if batch_size >= size:
            return self.rng.permutation(size)
        return self.rng.choice(size, size=batch_size, replace=False)


def cv_split(n: int, folds: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """(train, meta) index pairs over a shuffled primary batch.

    ``folds == 1`` degenerates to meta = train = the whole batch.
    """
    idx = np.arange(n)
    if folds == 1:
        if n == 0:
            raise SplitError("empty primary batch")
        return [(idx, idx)]
    parts = np.array_split(idx, folds)
    if any(len(p) == 0 for p in parts):
        raise SplitError(f"{n} primary samples cannot fill {folds} folds")
    return [(np.setdiff1d(idx, p), p) for p in parts]


class Trainer:
    """Owns the model definition and implements every training strategy."""

    def __init__(self, problem: Problem, encoder: EncoderConfig, config: TrainConfig):
        self.problem = problem
        self.encoder = encoder
        self.config = config
        self.strategy = config.strategy
        self.hint = self.strategy.uses_hint
        if self.hint and problem.aug_graph is None:
            raise ConfigError("selar-hint needs the hub-augmented graph")
        self.n_aux = problem.n_aux if self.strategy.uses_aux else 0
        self.ctx = GraphContext(problem.graph)
        self.hint_ctx = GraphContext(problem.aug_graph) if self.hint else None
        self.primary_kind = problem.primary.kind
        self.xi_width = embedding_width(self.n_aux, self.hint)

    # ------------------------------------------------------------ parameters

    def init_state(self, rng: np.random.Generator | None = None) -> TrainState:
        rng = rng if rng is not None else np.random.default_rng([self.config.seed, 0])
        w = self._init_model(rng, self.problem.graph, "")
        theta = {}
        if self.strategy.meta_learned:
            theta.update(init_weight_net(rng, self.xi_width, "theta", self.config.neutral_theta))
        if self.hint:
            w.update(self._init_model(rng, self.problem.aug_graph, "hint."))
            theta.update(init_weight_net(rng, self.xi_width, "theta_h", self.config.neutral_theta))
        return TrainState(w, theta, 0)

    def _init_model(self, rng, graph: HeteroGraph, prefix: str) -> dict[str, np.ndarray]:
        params = init_encoder(self.encoder, graph, rng, prefix=f"{prefix}enc")
        d = self.encoder.hidden_dim
        # every task, including ones this strategy skips, gets a head so all strategies share one init
        n_heads = self.problem.n_aux + 1
        for t in range(n_heads):
            if t == 0 and self.primary_kind == "node":
                head = init_class_head(rng, d, self.problem.primary.n_classes)
            else:
                head = init_pair_head(rng, d)
            params[f"{prefix}head.t{t}.W"] = head["W"]
            params[f"{prefix}head.t{t}.b"] = head["b"]
        return params

    @staticmethod
    def tensors(arrays: dict[str, np.ndarray]) -> dict[str, Tensor]:
        return ad.parameters(arrays)

    # ------------------------------------------------------------ forward

    def _head(self, params, t: int, prefix: str) -> TaskHead:
        kind = "class" if t == 0 and self.primary_kind == "node" else "pair"
        return TaskHead.from_params(params, f"{prefix}head.t{t}", kind)

    def _answers(self, params, batch: Batch, prefix: str, ctx: GraphContext) -> dict[int, Tensor]:
        """Per-task answers: pair probabilities (N,) or class logits (N, C)."""
        Z = encode(ctx, self.encoder, params, prefix=f"{prefix}enc")
        out = {}
        for t, samples in batch.items():
            head = self._head(params, t, prefix)
            if isinstance(samples, NodeLabelSet):
                out[t] = class_logits(Z, samples.nodes, head)
            else:
                out[t] = pair_probabilities(Z, samples.u, samples.v, head)
        return out

    @staticmethod
    def _loss_from_logits_or_probs(answer: Tensor, samples: Samples, probs: bool = False) -> Tensor:
        if isinstance(samples, NodeLabelSet):
            if probs:
                return ad.nll_from_probs(answer, samples.classes)
            return ad.softmax_cross_entropy(answer, samples.classes)
        return ad.binary_cross_entropy(answer, Tensor(samples.y))

    @staticmethod
    def _labels(samples: Samples) -> np.ndarray:
        # multi-class primary samples use label slot 1
        return np.ones(len(samples)) if isinstance(samples, NodeLabelSet) else samples.y

    def per_sample(self, params: dict[str, Tensor], batch: Batch):
        """Per-sample training losses plus the matching sample embeddings.

        Returns ``(losses, xi, coef)``: losses (N,) on the tape; xi (N, width)
        constant; coef (N,) the 1/N_t reduction constants.
        """
        batch = {t: s for t, s in sorted(batch.items()) if len(s) > 0}
        if not batch:
            raise BatchError("batch has no samples for any task")
        learner = self._answers(params, batch, "", self.ctx)
        hint = self._answers(params, batch, "hint.", self.hint_ctx) if self.hint else None
        losses, task_ids, labels, coef, l_own, l_hint = [], [], [], [], [], []
        for t, samples in batch.items():
            n_t = len(samples)
            own = self._loss_from_logits_or_probs(learner[t], samples)
            if self.hint:
                p_learn = learner[t] if not isinstance(samples, NodeLabelSet) else ad.softmax(learner[t])
                p_hint = hint[t] if not isinstance(samples, NodeLabelSet) else ad.softmax(hint[t])
                hint_loss = self._loss_from_logits_or_probs(p_hint, samples, probs=True)
                l_hint.append(hint_loss.data)
                losses.append((t, samples, p_learn, p_hint))
            else:
                losses.append(own)
            l_own.append(own.data)
            task_ids.append(np.full(n_t, t))
            labels.append(self._labels(samples))
            coef.append(np.full(n_t, 1.0 / n_t))
        xi = make_embeddings(np.concatenate(task_ids), np.concatenate(l_own), np.concatenate(labels),
                             self.n_aux, np.concatenate(l_hint) if self.hint else None)
        if self.hint:
            gate = weights(Tensor(xi), params, "theta_h")
            parts, start = [], 0
            for t, samples, p_learn, p_hint in losses:
                n_t = len(samples)
                g = ad.row_gather(gate, np.arange(start, start + n_t))
                mixed = combine_with_hint(p_learn, p_hint, g)
                parts.append(self._loss_from_logits_or_probs(mixed, samples, probs=True))
                start += n_t
            loss_vec = ad.concat(parts) if len(parts) > 1 else parts[0]
        else:
            loss_vec = ad.concat(losses) if len(losses) > 1 else losses[0]
        return loss_vec, xi, np.concatenate(coef)

    def sample_weights(self, params: dict[str, Tensor], xi: np.ndarray) -> Tensor:
        if self.config.fixed_weight is not None:
            return Tensor(np.full(xi.shape[0], self.config.fixed_weight))
        return weights(Tensor(xi), params, "theta")

    def train_loss(self, params: dict[str, Tensor], batch: Batch, weighted: bool) -> Tensor:
        """``sum_t 1/N_t sum_i V_i * loss_i`` (or unweighted) over the batch."""
        loss_vec, xi, coef = self.per_sample(params, batch)
        if weighted:
            loss_vec = ad.mul(loss_vec, self.sample_weights(params, xi))
        return ad.sum(ad.mul(loss_vec, Tensor(coef)))

    def primary_loss(self, params: dict[str, Tensor], samples: Samples) -> Tensor:
        """Unweighted mean primary loss of the learner alone (the meta objective)."""
        if len(samples) == 0:
            raise BatchError("empty meta fold")
        answer = self._answers(params, {0: samples}, "", self.ctx)[0]
        return ad.mean(self._loss_from_logits_or_probs(answer, samples))

    # ------------------------------------------------------------ bi-level steps

    def inner_update(self, state: TrainState, train_fold: Batch, alpha: float | None = None,
                     params: dict[str, Tensor] | None = None) -> tuple[dict[str, Tensor], dict[str, Tensor]]:
        """Lookahead weights ``w - alpha * grad_w L_train`` still connected to theta.

        Returns ``(w_hat, params)``; ``params`` holds the leaf tensors (w and theta)
        the lookahead was built from.
        """
        if not self.strategy.meta_learned:
            raise ConfigError(f"{self.strategy.value} has no inner update")
        alpha = self.config.alpha if alpha is None else alpha
        params = params if params is not None else self.tensors(state.arrays())
        w_keys = sorted(state.w)
        loss = self.train_loss(params, train_fold, weighted=True)
        grads = ad.grad(loss, [params[k] for k in w_keys], create_graph=True)
        w_hat = {k: ad.sub(params[k], ad.scale(g, alpha)) for k, g in zip(w_keys, grads)}
        for k in params:
            if k not in w_hat:
                w_hat[k] = params[k]
        return w_hat, params

    def fold_gradients(self, state: TrainState, primary_batch: Samples, aux_batch: Batch) -> list[dict[str, np.ndarray]]:
        """One nested theta-gradient per CV fold of the primary mini-batch."""
        theta_keys = sorted(state.theta)
        out = []
        for train_idx, meta_idx in cv_split(len(primary_batch), self.config.folds):
            fold: Batch = {0: primary_batch.subset(train_idx), **aux_batch}
            w_hat, params = self.inner_update(state, fold)
            outer = self.primary_loss(w_hat, primary_batch.subset(meta_idx))
            g = ad.nested_grad(outer, [params[k] for k in theta_keys])
            out.append({k: gk.data for k, gk in zip(theta_keys, g)})
        return out

    def meta_step(self, state: TrainState, primary_batch: Samples, aux_batch: Batch) -> TrainState:
        """Update theta (and the hint gate) from the summed fold meta-gradients."""
        grads = self.fold_gradients(state, primary_batch, aux_batch)
        scale = 1.0 / len(grads) if self.config.average_folds else 1.0
        theta = {}
        for k, v in state.theta.items():
            total = grads[0][k].copy()
            for g in grads[1:]:
                total += g[k]
            theta[k] = v - self.config.beta * scale * total
        return TrainState(state.w, theta, state.k)

    def model_step(self, state: TrainState, batch: Batch) -> tuple[TrainState, float]:
        """Plain gradient step on the (weighted) multi-task loss."""
        params = self.tensors(state.arrays())
        w_keys = sorted(state.w)
        loss = self.train_loss(params, batch, weighted=self.strategy.meta_learned)
        grads = ad.grad(loss, [params[k] for k in w_keys])
        alpha = self.config.alpha
        w = {k: state.w[k] - alpha * g.data for k, g in zip(w_keys, grads)}
        return TrainState(w, state.theta, state.k), float(loss.data)

    def meta_gradient_analytic(self, state: TrainState, train_fold: Batch, meta_fold: Samples) -> dict[str, np.ndarray]:
        """Closed-form theta-gradient for the non-hint case.

        theta only enters the lookahead through the scalar weights V_i, so
        ``grad_theta L_meta = -alpha * sum_i c_i <grad_w l_i, grad_w_hat L_meta> grad_theta V_i``.
        Used to cross-check the nested-tape path.
        """
        if self.hint:
            raise ConfigError("closed form only covers the non-hint objective")
        alpha = self.config.alpha
        w_keys, theta_keys = sorted(state.w), sorted(state.theta)
        params = self.tensors(state.arrays())
        loss_vec, xi, coef = self.per_sample(params, train_fold)
        with ad.no_grad():
            v_const = self.sample_weights(params, xi).data
        # lookahead weights as constants
        total = ad.sum(ad.mul(loss_vec, Tensor(coef * v_const)))
        g_full = ad.grad(total, [params[k] for k in w_keys])
        w_hat = {k: state.w[k] - alpha * g.data for k, g in zip(w_keys, g_full)}
        hat_params = self.tensors({**w_hat, **state.theta})
        outer = self.primary_loss(hat_params, meta_fold)
        g_meta = ad.grad(outer, [hat_params[k] for k in w_keys])
        dots = np.zeros(len(coef))
        for i in range(len(coef)):
            loss_i = ad.reshape(ad.row_gather(loss_vec, [i]), ())
            gi = ad.grad(loss_i, [params[k] for k in w_keys])
            dots[i] = sum(float(np.vdot(a.data, b.data)) for a, b in zip(gi, g_meta))
        s = -alpha * coef * dots
        theta_params = self.tensors(state.theta)
        v = self.sample_weights(theta_params, xi)
        g_theta = ad.grad(ad.sum(ad.mul(v, Tensor(s))), [theta_params[k] for k in theta_keys])
        return {k: g.data for k, g in zip(theta_keys, g_theta)}

    # ------------------------------------------------------------ hint

    def hint_forward(self, state: TrainState, batch: Batch):
        """Combined training answers, gate values and sample embeddings (hint mode)."""
        if not self.hint:
            raise ConfigError("hint_forward needs the selar-hint strategy")
        with ad.no_grad():
            params = self.tensors(state.arrays())
            batch = {t: s for t, s in sorted(batch.items()) if len(s) > 0}
            learner = self._answers(params, batch, "", self.ctx)
            hint = self._answers(params, batch, "hint.", self.hint_ctx)
            _, xi, _ = self.per_sample(params, batch)
            gate = weights(Tensor(xi), params, "theta_h").data
            combined, start = {}, 0
            for t, samples in batch.items():
                n_t = len(samples)
                a, b = learner[t], hint[t]
                if isinstance(samples, NodeLabelSet):
                    a, b = ad.softmax(a), ad.softmax(b)
                combined[t] = combine_with_hint(a.data, b.data, gate[start:start + n_t])
                start += n_t
        return combined, gate, xi

    # ------------------------------------------------------------ evaluation

    def predict(self, state: TrainState, samples: Samples) -> np.ndarray:
        """Learner-only answers (the hint network never takes part at test time)."""
        with ad.no_grad():
            params = self.tensors(state.w)
            answer = self._answers(params, {0: samples}, "", self.ctx)[0]
            if isinstance(samples, NodeLabelSet):
                return ad.softmax(answer).data
            return answer.data

    def evaluate(self, state: TrainState, samples: Samples) -> float:
        """AUC for link prediction, micro-F1 for node classification."""
        pred = self.predict(state, samples)
        if isinstance(samples, NodeLabelSet):
            micro, _ = f1(pred.argmax(axis=1), samples.classes, self.problem.primary.n_classes)
            return micro
        return auc(pred, samples.y)

    # ------------------------------------------------------------ loop

    def sample_batch(self, sampler: MiniBatchSampler, aux_sets: Sequence[PairLabelSet]) -> tuple[Samples, Batch]:
        primary = self.problem.primary.train.subset(sampler.primary())
        aux: Batch = {}
        if self.strategy.uses_aux:
            for t, s in enumerate(aux_sets, start=1):
                aux[t] = s.subset(sampler.auxiliary(len(s), self.config.n_au))
        return primary, aux

    def step(self, state: TrainState, primary: Samples, aux: Batch) -> tuple[TrainState, float]:
        if self.strategy.meta_learned:
            state = self.meta_step(state, primary, aux)
        state, loss = self.model_step(state, {0: primary, **aux})
        state.k += 1
        return state, loss

    def fit(self, callback: Callable[[TrainState], None] | None = None) -> FitResult:
        cfg = self.config
        state = self.init_state()
        sampler = MiniBatchSampler(len(self.problem.primary.train), cfg.n_pr, np.random.default_rng([cfg.seed, 1]))
        aux_sets = list(self.problem.aux)
        epoch = 0
        history: list[dict] = []
        best, best_val, test_at_best, bad = state.copy(), None, None, 0
        for _ in range(cfg.max_iters):
            if cfg.resample_negatives and self.problem.aux_factory is not None and sampler.epoch != epoch:
                epoch = sampler.epoch
                aux_sets = self.problem.aux_factory(epoch)
            primary, aux = self.sample_batch(sampler, aux_sets)
            state, loss = self.step(state, primary, aux)
            if callback is not None:
                callback(state)
            if state.k % cfg.eval_every == 0 or state.k == cfg.max_iters:
                val = self.evaluate(state, self.problem.primary.val)
                test = self.evaluate(state, self.problem.primary.test)
                history.append({"iteration": state.k, "strategy": self.strategy.value,
                                "train_loss": loss, "val_metric": val, "test_metric": test})
                log.debug("k=%d loss=%.4f val=%.4f test=%.4f", state.k, loss, val, test)
                if best_val is None or val > best_val:
                    best, best_val, test_at_best, bad = state.copy(), val, test, 0
                else:
                    bad += 1
                    if bad >= cfg.patience:
                        break
        if best_val is None:
            # no evaluation happened (K = 0): report the initial model
            best_val = self.evaluate(state, self.problem.primary.val)
            test_at_best = self.evaluate(state, self.problem.primary.test)
        return FitResult(state, best, history, best_val, test_at_best)


def fit(problem: Problem, encoder: EncoderConfig, config: TrainConfig,
        callback: Callable[[TrainState], None] | None = None) -> FitResult:
    return Trainer(problem, encoder, config).fit(callback)

