"""GNN encoders (GCN, GAT, GIN, SGC), task heads and the pair decoder.

Encoders see the homogenised graph: the union of every typed adjacency,
symmetrised. Edge types only reach the model through meta-path supervision.
All parameters live in a flat ``dict[str, Tensor]`` so the same forward code
serves both real weights and their one-step lookahead copies.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import SparseBool, Tensor
from .errors import HeadKindError, ShapeError
from .hetgraph import HeteroGraph

ARCHS = ("GCN", "GAT", "GIN", "SGC")


@dataclass
class EncoderConfig:
    arch: str = "GCN"
    num_layers: int = 2
    hidden_dim: int = 32
    input_dim: int | None = None  # None: take the graph's feature width, or embed_dim without features
    heads: int = 1
    sgc_k: int = 2
    gin_eps: float = 0.0
    embed_dim: int = 16
    negative_slope: float = 0.2

    def __post_init__(self):
        self.arch = self.arch.upper()
        if self.arch not in ARCHS:
            raise ShapeError(f"unknown encoder architecture {self.arch!r}; choose from {ARCHS}")
        if self.num_layers < 1 or self.hidden_dim < 1 or self.heads < 1 or self.embed_dim < 1:
            raise ShapeError("layers, dims and heads must be >= 1")
        if self.input_dim is not None and self.input_dim < 1:
            raise ShapeError("input_dim must be >= 1")
        if self.sgc_k < 0:
            raise ShapeError("sgc_k must be >= 0")


class GraphContext:
    """Propagation operators precomputed once per graph."""

    def __init__(self, graph: HeteroGraph):
        n = graph.num_nodes
        self.num_nodes = n
        self.features = graph.features
        u = graph.union_adjacency().astype(np.float64)
        sym = ((u + u.T) > 0).astype(np.float64).tocsr()
        sym.setdiag(0)
        sym.eliminate_zeros()
        self.adj = SparseBool(sym)  # no self loops (GIN neighbour sum)
        with_loops = (sym + sp.identity(n, format="csr")).tocsr()
        self.loops = SparseBool(with_loops)  # attention pattern (GAT)
        deg = np.asarray(with_loops.sum(axis=1)).ravel()
        inv_sqrt = 1.0 / np.sqrt(deg)
        rows = self.loops.row_ids()
        self.gcn = self.loops.with_values(inv_sqrt[rows] * inv_sqrt[self.loops.indices])
        self._sgc_cache: dict[int, np.ndarray] = {}

    def gcn_dense(self) -> np.ndarray:
        return self.gcn.matrix.toarray()

    def sgc_features(self, k: int) -> np.ndarray:
        if k not in self._sgc_cache:
            x = self.features
            for _ in range(k):
                x = self.gcn.matrix @ x
            self._sgc_cache[k] = np.asarray(x)
        return self._sgc_cache[k]


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def resolve_input_dim(config: EncoderConfig, graph: HeteroGraph) -> int:
    if graph.features is None:
        return config.input_dim or config.embed_dim
    d = graph.features.shape[1]
    if config.input_dim is not None and config.input_dim != d:
        raise ShapeError(f"encoder expects input_dim {config.input_dim}, graph features have {d}")
    return d


def init_encoder(config: EncoderConfig, graph: HeteroGraph, rng: np.random.Generator,
                 prefix: str = "enc") -> dict[str, np.ndarray]:
    d_in = resolve_input_dim(config, graph)
    params: dict[str, np.ndarray] = {}
    if graph.features is None:
        params[f"{prefix}.emb"] = rng.normal(scale=1.0 / np.sqrt(d_in), size=(graph.num_nodes, d_in))
    h = config.hidden_dim
    if config.arch == "SGC":
        params[f"{prefix}.W"] = glorot(rng, d_in, h)
        params[f"{prefix}.b"] = np.zeros(h)
        return params
    dims = [d_in] + [h] * config.num_layers
    for layer, (a, b) in enumerate(zip(dims, dims[1:])):
        p = f"{prefix}.layer{layer}"
        if config.arch == "GCN":
            params[f"{p}.W"] = glorot(rng, a, b)
        elif config.arch == "GAT":
            for k in range(config.heads):
                params[f"{p}.head{k}.W"] = glorot(rng, a, b)
                params[f"{p}.head{k}.a_src"] = glorot(rng, b, 1)
                params[f"{p}.head{k}.a_dst"] = glorot(rng, b, 1)
        elif config.arch == "GIN":
            params[f"{p}.mlp0.W"] = glorot(rng, a, b)
            params[f"{p}.mlp0.b"] = np.zeros(b)
            params[f"{p}.mlp1.W"] = glorot(rng, b, b)
        params[f"{p}.b"] = np.zeros(b)
    return params


def init_pair_head(rng: np.random.Generator, dim: int) -> dict[str, np.ndarray]:
    return {"W": glorot(rng, dim, dim), "b": np.zeros(dim)}


def init_class_head(rng: np.random.Generator, dim: int, n_classes: int) -> dict[str, np.ndarray]:
    return {"W": glorot(rng, dim, n_classes), "b": np.zeros(n_classes)}


def _input(ctx: GraphContext, params: dict[str, Tensor], prefix: str) -> Tensor:
    key = f"{prefix}.emb"
    if key in params:
        return params[key]
    if ctx.features is None:
        raise ShapeError("graph has no features and params have no embedding table")
    return Tensor(ctx.features)


def encode(ctx: GraphContext, config: EncoderConfig, params: dict[str, Tensor],
           prefix: str = "enc") -> Tensor:
    """Node embeddings ``Z`` (``|V| x hidden_dim``); ReLU between layers, none after the last."""
    if config.arch == "SGC":
        key = f"{prefix}.emb"
        if key in params:
            x = params[key]
            for _ in range(config.sgc_k):
                x = ad.sparse_dense_matmul(ctx.gcn, x)
        else:
            x = Tensor(ctx.sgc_features(config.sgc_k))
        _check_width(x, params[f"{prefix}.W"])
        return ad.add(ad.matmul(x, params[f"{prefix}.W"]), params[f"{prefix}.b"])

    h = _input(ctx, params, prefix)
    for layer in range(config.num_layers):
        p = f"{prefix}.layer{layer}"
        if config.arch == "GCN":
            _check_width(h, params[f"{p}.W"])
            h = ad.sparse_dense_matmul(ctx.gcn, ad.matmul(h, params[f"{p}.W"]))
        elif config.arch == "GAT":
            h = _gat_layer(ctx, config, params, p, h)
        elif config.arch == "GIN":
            _check_width(h, params[f"{p}.mlp0.W"])
            agg = ad.add(ad.scale(h, 1.0 + config.gin_eps), ad.sparse_dense_matmul(ctx.adj, h))
            hidden = ad.relu(ad.add(ad.matmul(agg, params[f"{p}.mlp0.W"]), params[f"{p}.mlp0.b"]))
            h = ad.matmul(hidden, params[f"{p}.mlp1.W"])
        h = ad.add(h, params[f"{p}.b"])
        if layer < config.num_layers - 1:
            h = ad.relu(h)
    return h


def _check_width(h: Tensor, w: Tensor) -> None:
    if h.shape[1] != w.shape[0]:
        raise ShapeError(f"feature width {h.shape[1]} does not match layer input {w.shape[0]}")


def _gat_layer(ctx, config, params, p, h):
    rows = ctx.loops.row_ids()  # attention target
    cols = ctx.loops.indices  # attention source
    n = ctx.num_nodes
    outs = []
    for k in range(config.heads):
        w = params[f"{p}.head{k}.W"]
        _check_width(h, w)
        wh = ad.matmul(h, w)
        s_src = ad.matmul(wh, params[f"{p}.head{k}.a_src"])
        s_dst = ad.matmul(wh, params[f"{p}.head{k}.a_dst"])
        e = ad.add(ad.row_gather(s_dst, rows), ad.row_gather(s_src, cols))
        e = ad.leaky_relu(ad.reshape(e, (len(rows),)), config.negative_slope)
        alpha = ad.neighbor_softmax(e, ctx.loops)
        msg = ad.mul(ad.row_gather(wh, cols), ad.reshape(alpha, (len(rows), 1)))
        outs.append(ad.segment_sum(msg, rows, n))
    out = outs[0]
    for o in outs[1:]:
        out = ad.add(out, o)
    return ad.scale(out, 1.0 / len(outs)) if len(outs) > 1 else out


@dataclass(frozen=True)
class TaskHead:
    """Task-specific affine map: ``pair`` heads map d'->d', ``class`` heads d'->C."""

    kind: str
    W: Tensor
    b: Tensor

    @classmethod
    def from_params(cls, params: dict[str, Tensor], name: str, kind: str) -> TaskHead:
        return cls(kind, params[f"{name}.W"], params[f"{name}.b"])

    def apply(self, z: Tensor) -> Tensor:
        return ad.add(ad.matmul(z, self.W), self.b)


def pair_probabilities(Z: Tensor, u, v, head: TaskHead) -> Tensor:
    """Vectorised decoder: ``sigmoid(phi(z_u) . phi(z_v))`` for each pair."""
    if head.kind != "pair":
        raise HeadKindError(f"pair decoder needs a pair head, got {head.kind!r}")
    pu = head.apply(ad.row_gather(Z, u))
    pv = head.apply(ad.row_gather(Z, v))
    return ad.sigmoid(ad.sum(ad.mul(pu, pv), axis=1))


def class_logits(Z: Tensor, nodes, head: TaskHead) -> Tensor:
    if head.kind != "class":
        raise HeadKindError(f"node classifier needs a class head, got {head.kind!r}")
    return head.apply(ad.row_gather(Z, nodes))


def predict_pair(Z: Tensor, u: int, v: int, head: TaskHead) -> float:
    n = Z.shape[0]
    if not (0 <= u < n and 0 <= v < n):
        raise ShapeError(f"node id out of range for {n} nodes")
    with ad.no_grad():
        return float(pair_probabilities(Z, [u], [v], head).data[0])


def predict_node_class(Z: Tensor, v: int, head: TaskHead) -> np.ndarray:
    if head.kind != "class":
        raise HeadKindError(f"node classifier needs a class head, got {head.kind!r}")
    if head.W.shape[1] < 2:
        raise HeadKindError("classification head needs at least two classes")
    with ad.no_grad():
        return ad.softmax(class_logits(Z, [v], head)).data[0]
