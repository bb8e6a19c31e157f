"""Finite-difference checks for the op set, the encoder and the meta-gradient.

Each check returns a CheckResult holding the norm-wise relative error between
the tape gradient and central differences. ``corrupt=True`` scales every
analytic gradient by ``1 + 1e-3`` so callers can confirm a broken gradient is
caught (negative control).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import SparseBool, Tensor
from .bilevel import PrimaryTask, Problem, Strategy, TrainConfig, Trainer
from .errors import ConfigError
from .gnn import EncoderConfig, GraphContext, TaskHead, encode, init_encoder, init_pair_head, pair_probabilities
from .hetgraph import PairLabelSet, augment_with_hubs, enumerate_metapaths, metapath_labels, random_hetero

OP_TOL = 1e-6
COMPOSITE_TOL = 1e-5
META_TOL = 1e-4
TOY_TOL = 1e-10
MAX_NODES = 30
_CORRUPTION = 1e-3


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error)) and self.error <= self.tol


@dataclass
class GradcheckConfig:
    n_nodes: int = 20
    n_aux: int = 2
    alpha: float = 0.1
    seed: int = 0
    arch: str = "GCN"
    hidden_dim: int = 4
    feature_dim: int = 4
    n_primary: int = 9
    eps: float = 1e-5

    def __post_init__(self):
        if not 2 <= self.n_nodes <= MAX_NODES:
            raise ConfigError(f"gradcheck graphs must have 2..{MAX_NODES} nodes, got {self.n_nodes}")
        if self.alpha < 0:
            raise ConfigError("alpha must be non-negative")
        if self.n_aux < 0 or self.n_primary < 2:
            raise ConfigError("need n_aux >= 0 and n_primary >= 2")


def _compare(name, analytic, numeric, tol, corrupt, detail="") -> CheckResult:
    analytic = np.concatenate([np.ravel(a) for a in analytic]) if analytic else np.zeros(0)
    numeric = np.concatenate([np.ravel(a) for a in numeric]) if numeric else np.zeros(0)
    if corrupt:
        analytic = analytic * (1.0 + _CORRUPTION)
    return CheckResult(name, ad.relative_error(analytic, numeric), tol, detail)


def check_function(name: str, fn: Callable[[dict[str, Tensor]], Tensor], arrays: dict[str, np.ndarray],
                   tol: float = OP_TOL, eps: float = 1e-5, corrupt: bool = False) -> CheckResult:
    """Tape gradient of ``fn`` against central differences over every entry of ``arrays``."""
    params = ad.parameters(arrays)
    keys = sorted(arrays)
    analytic = [g.data for g in ad.grad(fn(params), [params[k] for k in keys])]

    def value() -> float:
        with ad.no_grad():
            return float(fn({k: Tensor(v) for k, v in arrays.items()}).data)

    numeric = [ad.central_difference(value, arrays[k], eps) for k in keys]
    return _compare(name, analytic, numeric, tol, corrupt)


# ---------------------------------------------------------------- single ops


def _away_from_zero(rng, shape, lo=0.2):
    x = rng.uniform(lo, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, dict[str, np.ndarray]]]:
    """Random small instance of every op, reduced to a scalar by a fixed random projection."""
    proj = {s: rng.normal(size=s) for s in [(4, 3), (4,), (3, 4), (12,), (8, 3), (5, 3), (4, 2), (4, 6)]}

    def dot(t, shape):
        return ad.sum(ad.mul(t, Tensor(proj[shape])))

    pattern = SparseBool(np.array([[1, 1, 0, 0], [0, 1, 1, 0], [1, 0, 1, 1], [0, 0, 0, 1]], dtype=bool))
    rows = pattern.row_ids()
    classes = np.array([0, 2, 1, 2])
    y = np.array([1.0, 0.0, 1.0, 0.0])
    return {
        "add": (lambda p: dot(ad.add(p["a"], p["b"]), (4, 3)), {"a": rng.normal(size=(4, 3)), "b": rng.normal(size=(3,))}),
        "sub": (lambda p: dot(ad.sub(p["a"], p["b"]), (4, 3)), {"a": rng.normal(size=(4, 3)), "b": rng.normal(size=(4, 3))}),
        "mul": (lambda p: dot(ad.mul(p["a"], p["b"]), (4, 3)), {"a": rng.normal(size=(4, 3)), "b": rng.normal(size=(4, 3))}),
        "scale": (lambda p: dot(ad.scale(p["a"], -1.7), (4, 3)), {"a": rng.normal(size=(4, 3))}),
        "div": (lambda p: dot(ad.div(p["a"], p["b"]), (4, 3)), {"a": rng.normal(size=(4, 3)), "b": rng.uniform(0.5, 2.0, (4, 3))}),
        "matmul": (lambda p: dot(ad.matmul(p["a"], p["b"]), (4, 3)), {"a": rng.normal(size=(4, 5)), "b": rng.normal(size=(5, 3))}),
        "sparse_dense_matmul": (lambda p: dot(ad.sparse_dense_matmul(pattern, p["x"]), (4, 3)), {"x": rng.normal(size=(4, 3))}),
        "sigmoid": (lambda p: dot(ad.sigmoid(p["x"]), (4, 3)), {"x": rng.normal(size=(4, 3))}),
        "relu": (lambda p: dot(ad.relu(p["x"]), (4, 3)), {"x": _away_from_zero(rng, (4, 3))}),
        "leaky_relu": (lambda p: dot(ad.leaky_relu(p["x"], 0.2), (4, 3)), {"x": _away_from_zero(rng, (4, 3))}),
        "exp": (lambda p: dot(ad.exp(p["x"]), (4, 3)), {"x": rng.normal(size=(4, 3))}),
        "log": (lambda p: dot(ad.log(p["x"]), (4, 3)), {"x": rng.uniform(0.3, 3.0, (4, 3))}),
        "sum": (lambda p: dot(ad.sum(p["x"], axis=1), (4,)), {"x": rng.normal(size=(4, 3))}),
        "mean": (lambda p: ad.mul(ad.mean(p["x"]), 3.0), {"x": rng.normal(size=(4, 3))}),
        "transpose": (lambda p: dot(ad.transpose(p["x"]), (3, 4)), {"x": rng.normal(size=(4, 3))}),
        "reshape": (lambda p: dot(ad.reshape(p["x"], (12,)), (12,)), {"x": rng.normal(size=(4, 3))}),
        "concat": (lambda p: dot(ad.concat([p["a"], p["b"]]), (8, 3)), {"a": rng.normal(size=(4, 3)), "b": rng.normal(size=(4, 3))}),
        "row_gather": (lambda p: dot(ad.row_gather(p["x"], [0, 2, 2, 1, 0]), (5, 3)), {"x": rng.normal(size=(4, 3))}),
        "segment_sum": (lambda p: dot(ad.segment_sum(p["x"], [0, 1, 1, 3, 3], 4), (4, 3)), {"x": rng.normal(size=(5, 3))}),
        "softmax": (lambda p: dot(ad.softmax(p["x"]), (4, 3)), {"x": rng.normal(size=(4, 3))}),
        "neighbor_softmax": (lambda p: ad.sum(ad.mul(ad.neighbor_softmax(p["s"], pattern), Tensor(proj[(12,)][:len(rows)]))),
                             {"s": rng.normal(size=(len(rows),))}),
        "binary_cross_entropy": (lambda p: ad.sum(ad.binary_cross_entropy(p["p"], Tensor(y))), {"p": rng.uniform(0.1, 0.9, 4)}),
        "softmax_cross_entropy": (lambda p: ad.sum(ad.softmax_cross_entropy(p["x"], classes)), {"x": rng.normal(size=(4, 3))}),
        "nll_from_probs": (lambda p: ad.sum(ad.nll_from_probs(ad.softmax(p["x"]), classes)), {"x": rng.normal(size=(4, 3))}),
    }


def op_suite(seed: int = 0, corrupt: bool = False) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [check_function(f"op:{name}", fn, arrays, OP_TOL, corrupt=corrupt)
            for name, (fn, arrays) in op_cases(rng).items()]


# ---------------------------------------------------------------- encoder composite


def composite_check(seed: int = 0, arch: str = "GCN", n_nodes: int = 15, corrupt: bool = False) -> CheckResult:
    """Two-layer encoder plus pair head and cross-entropy, gradient over every weight."""
    graph = random_hetero(n_nodes, 2, 3, 0.3, seed, feature_dim=5)
    ctx = GraphContext(graph)
    rng = np.random.default_rng(seed)
    config = EncoderConfig(arch, num_layers=2, hidden_dim=6)
    arrays = init_encoder(config, graph, rng)
    head = init_pair_head(rng, config.hidden_dim)
    arrays.update({"head.t0.W": head["W"], "head.t0.b": rng.normal(scale=0.1, size=config.hidden_dim)})
    for k in arrays:
        if k.endswith(".b"):
            arrays[k] = rng.normal(scale=0.1, size=arrays[k].shape)
    u, v = rng.integers(0, n_nodes, 12), rng.integers(0, n_nodes, 12)
    y = Tensor(rng.integers(0, 2, 12).astype(np.float64))

    def fn(p):
        z = encode(ctx, config, p)
        probs = pair_probabilities(z, u, v, TaskHead.from_params(p, "head.t0", "pair"))
        return ad.mean(ad.binary_cross_entropy(probs, y))

    out = check_function(f"composite:{arch}", fn, arrays, COMPOSITE_TOL, corrupt=corrupt)
    return out


# ---------------------------------------------------------------- meta-gradient


def toy_meta_check(alpha: float = 0.1, x: float = 1.3, m: float = -0.7, w0: float = 0.4,
                   theta0: float = 0.25, corrupt: bool = False) -> CheckResult:
    """Scalar model ``l_train = w x``, ``V = sigmoid(theta)``, ``l_meta = w_hat m`` against its closed form."""
    w = Tensor(np.array(w0), requires_grad=True)
    theta = Tensor(np.array(theta0), requires_grad=True)
    inner = ad.mul(ad.sigmoid(theta), ad.mul(w, x))
    (g,) = ad.grad(inner, [w], create_graph=True)
    w_hat = ad.sub(w, ad.scale(g, alpha))
    (g_theta,) = ad.nested_grad(ad.mul(w_hat, m), [theta])
    s = 1.0 / (1.0 + np.exp(-theta0))
    closed = -alpha * x * m * s * (1.0 - s)
    got = float(g_theta.data) * ((1.0 + _CORRUPTION) if corrupt else 1.0)
    err = abs(got - closed) / max(abs(closed), 1e-300)
    return CheckResult("meta:scalar-toy", err, TOY_TOL, f"nested={got:.17g} closed={closed:.17g}")


def tiny_problem(config: GradcheckConfig) -> Problem:
    """Small link-prediction problem with ``n_aux`` meta-path tasks that have both labels."""
    for attempt in range(200):
        seed = config.seed * 1000 + attempt
        graph = random_hetero(config.n_nodes, 2, 3, 0.25, seed, feature_dim=config.feature_dim)
        specs = [s for s, count in enumerate_metapaths(graph, 2, 3) if count >= 2]
        aux = []
        for spec in specs:
            labels = metapath_labels(graph, spec, len(aux) + 1, 4, seed)
            if labels.n_pos >= 1 and labels.n_neg >= 1:
                aux.append(labels)
            if len(aux) == config.n_aux:
                break
        if len(aux) == config.n_aux:
            break
    else:
        raise ConfigError("could not build a tiny problem with enough auxiliary tasks")
    rng = np.random.default_rng(seed)
    n = config.n_primary
    y = np.zeros(n)
    y[: (n + 1) // 2] = 1.0
    primary = PairLabelSet(0, rng.integers(0, config.n_nodes, n), rng.integers(0, config.n_nodes, n), rng.permutation(y))
    task = PrimaryTask("link", primary, primary, primary)
    return Problem(graph, task, aux, augment_with_hubs(graph))


def _trainer(problem: Problem, config: GradcheckConfig, strategy: Strategy) -> Trainer:
    encoder = EncoderConfig(config.arch, num_layers=2, hidden_dim=config.hidden_dim)
    train = TrainConfig(alpha=max(config.alpha, 1e-12), beta=0.1, folds=1, n_pr=config.n_primary,
                        strategy=strategy, seed=config.seed)
    return Trainer(problem, encoder, train)


def _randomize_biases(state, rng):
    # non-zero biases move ReLU pre-activations off zero so the stencil sees a smooth surface
    for group in (state.w, state.theta):
        for k in group:
            if k.endswith(".b") or k.endswith(".b1"):
                group[k] = rng.normal(scale=0.1, size=group[k].shape)
    return state


def _kink_safe_eps(trainer: Trainer, state, batch, eps: float, floor: float = 1e-7) -> float:
    """Shrink ``eps`` so no stencil crosses a ReLU kink of the weighting networks.

    Perturbing one weighting-net entry by ``eps`` moves a hidden pre-activation
    by at most ``eps * max(1, max|xi|)``.
    """
    with ad.no_grad():
        _, xi, _ = trainer.per_sample(trainer.tensors(state.arrays()), batch)
    scale = max(1.0, float(np.abs(xi).max()))
    gap = min(float(np.abs(xi @ state.theta[f"{p}.W1"] + state.theta[f"{p}.b1"]).min())
              for p in ("theta", "theta_h") if f"{p}.W1" in state.theta)
    return max(min(eps, 0.25 * gap / scale), floor)


def meta_gradient_check(config: GradcheckConfig | None = None, strategy: Strategy = Strategy.SELAR,
                        corrupt: bool = False) -> CheckResult:
    """Nested-tape theta-gradient of the one-step lookahead meta loss against finite differences."""
    config = config or GradcheckConfig()
    problem = tiny_problem(config)
    trainer = _trainer(problem, config, strategy)
    state = _randomize_biases(trainer.init_state(), np.random.default_rng(config.seed + 1))
    primary = problem.primary.train
    half = len(primary) // 2
    train_fold = {0: primary.subset(np.arange(half)), **{t: s for t, s in enumerate(problem.aux, start=1)}}
    meta_fold = primary.subset(np.arange(half, len(primary)))
    theta_keys = sorted(state.theta)

    def meta_loss(params=None) -> Tensor:
        w_hat, params = trainer.inner_update(state, train_fold, alpha=config.alpha, params=params)
        return trainer.primary_loss(w_hat, meta_fold), params

    outer, params = meta_loss()
    analytic = [g.data for g in ad.nested_grad(outer, [params[k] for k in theta_keys])]

    def value() -> float:
        return float(meta_loss()[0].data)

    eps = _kink_safe_eps(trainer, state, train_fold, config.eps)
    numeric = [ad.central_difference(value, state.theta[k], eps) for k in theta_keys]
    peak = max(float(np.abs(a).max()) for a in analytic)
    label = "meta:theta" if strategy is Strategy.SELAR else "meta:theta+theta_h"
    return _compare(label, analytic, numeric, META_TOL, corrupt,
                    f"max|g|={peak:.3g} alpha={config.alpha:g} eps={eps:.1e}")


def hint_gate_check(config: GradcheckConfig | None = None, corrupt: bool = False) -> CheckResult:
    """Gradient of the hint-mixed training loss with respect to the gate parameters."""
    config = config or GradcheckConfig()
    problem = tiny_problem(config)
    trainer = _trainer(problem, config, Strategy.SELAR_HINT)
    state = _randomize_biases(trainer.init_state(), np.random.default_rng(config.seed + 2))
    batch = {0: problem.primary.train, **{t: s for t, s in enumerate(problem.aux, start=1)}}
    keys = sorted(state.theta_h)
    params = trainer.tensors(state.arrays())
    loss = trainer.train_loss(params, batch, weighted=True)
    analytic = [g.data for g in ad.grad(loss, [params[k] for k in keys])]

    def value() -> float:
        with ad.no_grad():
            return float(trainer.train_loss(trainer.tensors(state.arrays()), batch, weighted=True).data)

    eps = _kink_safe_eps(trainer, state, batch, config.eps)
    numeric = [ad.central_difference(value, state.theta[k], eps) for k in keys]
    return _compare("hint:theta_h", analytic, numeric, META_TOL, corrupt, f"eps={eps:.1e}")


def run_all(config: GradcheckConfig | None = None, corrupt: bool = False) -> list[CheckResult]:
    config = config or GradcheckConfig()
    results = op_suite(config.seed, corrupt)
    results += [composite_check(config.seed, arch, corrupt=corrupt) for arch in ("GCN", "GAT", "GIN", "SGC")]
    results.append(toy_meta_check(corrupt=corrupt))
    results.append(meta_gradient_check(config, Strategy.SELAR, corrupt))
    results.append(meta_gradient_check(config, Strategy.SELAR_HINT, corrupt))
    results.append(hint_gate_check(config, corrupt))
    return results
