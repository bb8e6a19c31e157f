"""Heterogeneous graphs, meta-path labels, samplers and dataset loaders.

Node ids live in one global index space across all node types, so every
typed adjacency is a ``|V| x |V|`` boolean CSR matrix. ``A[u, v] = 1`` means
a directed edge ``u -> v``; a meta-path ``(t1, ..., tl)`` connects ``u`` to
``v`` when some walk ``u -t1-> ... -tl-> v`` exists.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (
    CompositionError,
    ConfigError,
    InsufficientNegativesError,
    InsufficientPositivesError,
    OracleRefusedError,
    ParseError,
    SchemaError,
)

MAX_NODE_ID = 2**31 - 1
UNLABELED = -1


def _bool_csr(matrix, n: int) -> sp.csr_matrix:
    m = sp.csr_matrix(matrix, shape=(n, n))
    m.sum_duplicates()
    m.eliminate_zeros()
    m = m.astype(bool)
    m.sort_indices()
    return m


@dataclass(frozen=True, eq=False)
class HeteroGraph:
    node_types: tuple[str, ...]
    edge_types: tuple[str, ...]
    node_type_of: np.ndarray
    adjacency: dict[int, sp.csr_matrix]
    endpoints: dict[int, tuple[int, int]]
    features: np.ndarray | None = None
    node_names: tuple[str, ...] | None = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.node_type_of)
        object.__setattr__(self, "node_types", tuple(self.node_types))
        object.__setattr__(self, "edge_types", tuple(self.edge_types))
        nto = np.asarray(self.node_type_of, dtype=np.int64)
        object.__setattr__(self, "node_type_of", nto)
        if n and (nto.min() < 0 or nto.max() >= len(self.node_types)):
            raise SchemaError("node_type_of refers to an unknown node type")
        if len(set(self.edge_types)) != len(self.edge_types):
            raise SchemaError("duplicate edge type names")
        if len(set(self.node_types)) != len(self.node_types):
            raise SchemaError("duplicate node type names")
        adj = {}
        for t in range(len(self.edge_types)):
            if t not in self.endpoints:
                raise SchemaError(f"edge type {self.edge_types[t]!r} has no endpoints")
            src, dst = self.endpoints[t]
            if not (0 <= src < len(self.node_types) and 0 <= dst < len(self.node_types)):
                raise SchemaError(f"edge type {self.edge_types[t]!r} has invalid endpoints")
            m = self.adjacency.get(t)
            m = sp.csr_matrix((n, n), dtype=bool) if m is None else m
            if m.shape != (n, n):
                raise SchemaError(f"adjacency of {self.edge_types[t]!r} has shape {m.shape}, expected {(n, n)}")
            m = _bool_csr(m, n)
            rows, cols = m.nonzero()
            if rows.size and (np.any(nto[rows] != src) or np.any(nto[cols] != dst)):
                raise SchemaError(f"edge of type {self.edge_types[t]!r} violates endpoint typing")
            adj[t] = m
        object.__setattr__(self, "adjacency", adj)
        if self.features is not None:
            x = np.asarray(self.features, dtype=np.float64)
            if x.ndim != 2 or x.shape[0] != n:
                raise SchemaError(f"features must be ({n}, d), got {x.shape}")
            object.__setattr__(self, "features", x)

    @property
    def num_nodes(self) -> int:
        return len(self.node_type_of)

    @property
    def feature_dim(self) -> int | None:
        return None if self.features is None else self.features.shape[1]

    def is_heterogeneous(self) -> bool:
        return len(self.edge_types) > 1 or len(self.node_types) > 1

    def nodes_of_type(self, type_id: int) -> np.ndarray:
        return np.flatnonzero(self.node_type_of == type_id)

    def node_type_id(self, name: str) -> int:
        try:
            return self.node_types.index(name)
        except ValueError:
            raise SchemaError(f"unknown node type {name!r}") from None

    def edge_type_id(self, name: str) -> int:
        try:
            return self.edge_types.index(name)
        except ValueError:
            raise SchemaError(f"unknown edge type {name!r}") from None

    def num_edges(self, edge_type: int | None = None) -> int:
        if edge_type is not None:
            return int(self.adjacency[edge_type].nnz)
        return int(sum(m.nnz for m in self.adjacency.values()))

    def union_adjacency(self) -> sp.csr_matrix:
        """Boolean union of all typed adjacencies (directed)."""
        n = self.num_nodes
        total = sp.csr_matrix((n, n), dtype=bool)
        for m in self.adjacency.values():
            total = total + m
        return _bool_csr(total, n)

    def with_adjacency(self, edge_type: int, matrix) -> HeteroGraph:
        adj = dict(self.adjacency)
        adj[edge_type] = matrix
        return HeteroGraph(self.node_types, self.edge_types, self.node_type_of, adj,
                           dict(self.endpoints), self.features, self.node_names)


@dataclass(frozen=True)
class MetaPathSpec:
    edge_seq: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "edge_seq", tuple(int(t) for t in self.edge_seq))
        if not self.edge_seq:
            raise CompositionError("a meta-path needs at least one edge type")

    def __len__(self):
        return len(self.edge_seq)

    @classmethod
    def from_names(cls, graph: HeteroGraph, names: Sequence[str]) -> MetaPathSpec:
        spec = cls(tuple(graph.edge_type_id(n) for n in names))
        spec.validate(graph)
        return spec

    def validate(self, graph: HeteroGraph) -> None:
        for t in self.edge_seq:
            if not 0 <= t < len(graph.edge_types):
                raise SchemaError(f"unknown edge type id {t}")
        for a, b in zip(self.edge_seq, self.edge_seq[1:]):
            if graph.endpoints[a][1] != graph.endpoints[b][0]:
                raise CompositionError(
                    f"{graph.edge_types[a]!r} ends at {graph.node_types[graph.endpoints[a][1]]!r} but "
                    f"{graph.edge_types[b]!r} starts at {graph.node_types[graph.endpoints[b][0]]!r}"
                )

    def terminal_types(self, graph: HeteroGraph) -> tuple[int, int]:
        return graph.endpoints[self.edge_seq[0]][0], graph.endpoints[self.edge_seq[-1]][1]

    def name(self, graph: HeteroGraph) -> str:
        return "-".join(graph.edge_types[t] for t in self.edge_seq)


def compose_adjacency(graph: HeteroGraph, spec: MetaPathSpec) -> sp.csr_matrix:
    """Boolean reachability matrix of a meta-path, binarised after every product."""
    spec.validate(graph)
    n = graph.num_nodes
    acc = graph.adjacency[spec.edge_seq[0]].astype(np.int64)
    for t in spec.edge_seq[1:]:
        acc = acc @ graph.adjacency[t].astype(np.int64)
        acc.data[:] = 1
        acc.eliminate_zeros()
    return _bool_csr(acc, n)


def enumerate_paths_bruteforce(graph: HeteroGraph, spec: MetaPathSpec,
                               node_cap: int = 200) -> set[tuple[int, int]]:
    """Exhaustive typed DFS; the test oracle for compose_adjacency."""
    if graph.num_nodes > node_cap:
        raise OracleRefusedError(f"graph has {graph.num_nodes} nodes, oracle cap is {node_cap}")
    spec.validate(graph)
    nbrs = {}
    for t in set(spec.edge_seq):
        m = graph.adjacency[t]
        nbrs[t] = [m.indices[m.indptr[u]:m.indptr[u + 1]].tolist() for u in range(graph.num_nodes)]
    found: set[tuple[int, int]] = set()
    seq = spec.edge_seq

    def walk(start: int, node: int, depth: int) -> None:
        if depth == len(seq):
            found.add((start, node))
            return
        for nxt in nbrs[seq[depth]][node]:
            walk(start, nxt, depth + 1)

    for u in range(graph.num_nodes):
        walk(u, u, 0)
    return found


def enumerate_metapaths(graph: HeteroGraph, min_len: int = 2,
                        max_len: int = 4) -> list[tuple[MetaPathSpec, int]]:
    """All composable specs of the given lengths with their positive-pair counts, most first."""
    out = []
    n_et = len(graph.edge_types)
    for length in range(min_len, max_len + 1):
        for seq in itertools.product(range(n_et), repeat=length):
            if any(graph.endpoints[a][1] != graph.endpoints[b][0] for a, b in zip(seq, seq[1:])):
                continue
            spec = MetaPathSpec(seq)
            out.append((spec, int(compose_adjacency(graph, spec).nnz)))
    out.sort(key=lambda item: (-item[1], len(item[0]), item[0].edge_seq))
    return out


@dataclass
class PairLabelSet:
    """Supervision pairs ``(u, v, y)`` for one task (0 = primary)."""

    task_id: int
    u: np.ndarray
    v: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.int64)
        self.v = np.asarray(self.v, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if not (self.u.shape == self.v.shape == self.y.shape) or self.u.ndim != 1:
            raise SchemaError("u, v, y must be equal-length vectors")
        if self.y.size and not np.all((self.y == 0) | (self.y == 1)):
            raise SchemaError("labels must be 0 or 1")

    def __len__(self):
        return len(self.y)

    @property
    def n_pos(self) -> int:
        return int(self.y.sum())

    @property
    def n_neg(self) -> int:
        return len(self) - self.n_pos

    def subset(self, idx) -> PairLabelSet:
        idx = np.asarray(idx, dtype=np.int64)
        return PairLabelSet(self.task_id, self.u[idx], self.v[idx], self.y[idx])

    def pairs(self) -> list[tuple[int, int, int]]:
        return list(zip(self.u.tolist(), self.v.tolist(), self.y.astype(int).tolist()))

    def to_lines(self) -> list[str]:
        return [f"{self.task_id} {u} {v} {y}" for u, v, y in self.pairs()]

    def write(self, path) -> None:
        Path(path).write_text("".join(line + "\n" for line in self.to_lines()), encoding="utf-8")

    @staticmethod
    def concat(sets: Sequence[PairLabelSet]) -> PairLabelSet:
        if not sets:
            raise ValueError("nothing to concatenate")
        return PairLabelSet(sets[0].task_id, np.concatenate([s.u for s in sets]),
                            np.concatenate([s.v for s in sets]), np.concatenate([s.y for s in sets]))


def read_pair_labels(path) -> dict[int, PairLabelSet]:
    """Parse ``task_id u v y`` lines into one PairLabelSet per task."""
    rows: dict[int, list[tuple[int, int, int]]] = {}
    for line_no, tok in _read_rows(path):
        if len(tok) != 4:
            raise ParseError(path, line_no, f"expected 'task_id u v y', got {len(tok)} fields")
        task, u, v, y = (_parse_int(path, line_no, x) for x in tok)
        if y not in (0, 1):
            raise ParseError(path, line_no, f"label must be 0 or 1, got {y}")
        rows.setdefault(task, []).append((u, v, y))
    return {
        t: PairLabelSet(t, [r[0] for r in rs], [r[1] for r in rs], [r[2] for r in rs])
        for t, rs in sorted(rows.items())
    }


def build_pair_labels(matrix, n_pos: int, n_neg: int, rng_seed: int, task_id: int = 0,
                      rows: np.ndarray | None = None, cols: np.ndarray | None = None,
                      exclude_self: bool = True) -> PairLabelSet:
    """Sample positives from the nonzeros and negatives from the zeros of ``matrix``.

    ``rows``/``cols`` restrict both draws to a block (e.g. the terminal node
    types of a meta-path). Self pairs are left out of both draws by default.
    """
    m = sp.csr_matrix(matrix).astype(bool)
    n_rows, n_cols = m.shape
    rows = np.arange(n_rows) if rows is None else np.asarray(rows, dtype=np.int64)
    cols = np.arange(n_cols) if cols is None else np.asarray(cols, dtype=np.int64)
    rng = np.random.default_rng(rng_seed)

    block = m[rows][:, cols].tocoo()
    pu, pv = rows[block.row], cols[block.col]
    if exclude_self:
        keep = pu != pv
        pu, pv = pu[keep], pv[keep]
    order = np.lexsort((pv, pu))
    pu, pv = pu[order], pv[order]
    if n_pos > len(pu):
        raise InsufficientPositivesError(f"asked for {n_pos} positives, only {len(pu)} available")
    pick = rng.choice(len(pu), size=n_pos, replace=False) if n_pos else np.array([], dtype=np.int64)
    pos_u, pos_v = pu[pick], pv[pick]

    neg_u, neg_v = _sample_zeros(m, rows, cols, n_neg, rng, exclude_self)
    u = np.concatenate([pos_u, neg_u])
    v = np.concatenate([pos_v, neg_v])
    y = np.concatenate([np.ones(n_pos), np.zeros(n_neg)])
    return PairLabelSet(task_id, u, v, y)


def _sample_zeros(m: sp.csr_matrix, rows, cols, n_neg, rng, exclude_self):
    if n_neg == 0:
        return np.array([], dtype=np.int64), np.array([], dtype=np.int64)
    block_size = len(rows) * len(cols)
    if block_size <= 4_000_000:
        dense = m[rows][:, cols].toarray()
        zero = ~dense
        if exclude_self:
            zero &= rows[:, None] != cols[None, :]
        zr, zc = np.nonzero(zero)
        if n_neg > len(zr):
            raise InsufficientNegativesError(f"asked for {n_neg} negatives, only {len(zr)} zero entries")
        pick = rng.choice(len(zr), size=n_neg, replace=False)
        return rows[zr[pick]], cols[zc[pick]]
    # large blocks: rejection sampling keeps memory flat
    chosen: set[tuple[int, int]] = set()
    out_u, out_v = [], []
    attempts = 0
    while len(out_u) < n_neg:
        attempts += 1
        if attempts > 50 * n_neg + 1000:
            raise InsufficientNegativesError("too few zero entries for rejection sampling")
        a = int(rows[rng.integers(len(rows))])
        b = int(cols[rng.integers(len(cols))])
        if (exclude_self and a == b) or (a, b) in chosen or m[a, b]:
            continue
        chosen.add((a, b))
        out_u.append(a)
        out_v.append(b)
    return np.array(out_u, dtype=np.int64), np.array(out_v, dtype=np.int64)


def metapath_labels(graph: HeteroGraph, spec: MetaPathSpec, task_id: int, n_pos: int | None,
                    rng_seed: int, neg_ratio: float = 1.0) -> PairLabelSet:
    """Auxiliary task labels for a meta-path, negatives drawn from its terminal node types."""
    mat = compose_adjacency(graph, spec)
    src, dst = spec.terminal_types(graph)
    rows, cols = graph.nodes_of_type(src), graph.nodes_of_type(dst)
    available = mat.nnz - (int(mat.diagonal().sum()) if src == dst else 0)
    n_pos = available if n_pos is None else min(n_pos, available)
    n_zero = len(rows) * len(cols) - mat.nnz - (len(rows) - int(mat.diagonal()[rows].sum()) if src == dst else 0)
    n_neg = min(int(round(n_pos * neg_ratio)), max(n_zero, 0))
    return build_pair_labels(mat, n_pos, n_neg, rng_seed, task_id, rows, cols)


def augment_with_hubs(graph: HeteroGraph) -> HeteroGraph:
    """Add one hub per node type, linked both ways to every node of that type.

    Hub ids are appended after the original ids, so original adjacencies are a
    leading submatrix. Hub features are zero.
    """
    n = graph.num_nodes
    n_types = len(graph.node_types)
    hub_type = _unique_name("hub", graph.node_types)
    node_types = graph.node_types + (hub_type,)
    hub_tid = n_types
    node_type_of = np.concatenate([graph.node_type_of, np.full(n_types, hub_tid)])
    total = n + n_types

    adjacency = {}
    for t, m in graph.adjacency.items():
        m = m.tocoo()
        adjacency[t] = sp.csr_matrix((np.ones(m.nnz, dtype=bool), (m.row, m.col)), shape=(total, total))
    edge_types = list(graph.edge_types)
    endpoints = dict(graph.endpoints)
    taken = set(edge_types)
    for tau in range(n_types):
        members = graph.nodes_of_type(tau)
        hub = n + tau
        ones = np.ones(len(members), dtype=bool)
        to_name = _unique_name(f"{graph.node_types[tau]}->{hub_type}", taken)
        taken.add(to_name)
        from_name = _unique_name(f"{hub_type}->{graph.node_types[tau]}", taken)
        taken.add(from_name)
        t_to = len(edge_types)
        edge_types.append(to_name)
        endpoints[t_to] = (tau, hub_tid)
        adjacency[t_to] = sp.csr_matrix((ones, (members, np.full(len(members), hub))), shape=(total, total))
        t_from = len(edge_types)
        edge_types.append(from_name)
        endpoints[t_from] = (hub_tid, tau)
        adjacency[t_from] = sp.csr_matrix((ones, (np.full(len(members), hub), members)), shape=(total, total))

    features = None
    if graph.features is not None:
        features = np.vstack([graph.features, np.zeros((n_types, graph.features.shape[1]))])
    names = None
    if graph.node_names is not None:
        names = graph.node_names + tuple(f"{hub_type}:{tn}" for tn in graph.node_types)
    return HeteroGraph(node_types, tuple(edge_types), node_type_of, adjacency, endpoints, features, names)


def _unique_name(base: str, taken) -> str:
    if base not in taken:
        return base
    k = 2
    while f"{base}{k}" in taken:
        k += 1
    return f"{base}{k}"


def remove_pairs(graph: HeteroGraph, edge_type: int, u, v) -> HeteroGraph:
    """Copy of ``graph`` without the listed edges of one type (held-out links)."""
    m = graph.adjacency[edge_type].tolil(copy=True)
    for a, b in zip(np.asarray(u).tolist(), np.asarray(v).tolist()):
        m[a, b] = False
    return graph.with_adjacency(edge_type, m.tocsr())


# ---------------------------------------------------------------- file formats


def _read_rows(path) -> Iterator[tuple[int, list[str]]]:
    with open(path, encoding="utf-8", newline=None) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            yield line_no, line.split()


def _parse_int(path, line_no, token: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(path, line_no, f"expected an integer, got {token!r}") from None


def _check_id(path, line_no, value: int) -> int:
    if value < 0 or value > MAX_NODE_ID:
        raise SchemaError(f"{path}:{line_no}: id {value} outside [0, {MAX_NODE_ID}]")
    return value


def load_kg_dataset(interactions_path, triples_path,
                    add_inverse: bool = False) -> tuple[HeteroGraph, PairLabelSet]:
    """Load a user-item interaction file plus a knowledge-graph triple file.

    Users get ids ``0..n_users-1``; KG entity ``e`` becomes node ``n_users + e``
    and is typed ``item`` when ``e`` also appears as an item id range member.
    Positive interactions form the ``user-item`` edge type; relation ``r``
    becomes edge type ``r<r>`` (split per endpoint pair when mixed).
    """
    inter = []
    for line_no, tok in _read_rows(interactions_path):
        if len(tok) != 3:
            raise ParseError(interactions_path, line_no, "expected 'user_id item_id label'")
        u, i, y = (_parse_int(interactions_path, line_no, x) for x in tok)
        _check_id(interactions_path, line_no, u)
        _check_id(interactions_path, line_no, i)
        if y not in (0, 1):
            raise ParseError(interactions_path, line_no, f"label must be 0 or 1, got {y}")
        inter.append((u, i, y))
    triples = []
    for line_no, tok in _read_rows(triples_path):
        if len(tok) != 3:
            raise ParseError(triples_path, line_no, "expected 'head_id relation_id tail_id'")
        h, r, t = (_parse_int(triples_path, line_no, x) for x in tok)
        for x in (h, r, t):
            _check_id(triples_path, line_no, x)
        triples.append((h, r, t))
    if not inter:
        raise SchemaError(f"{interactions_path}: no interactions")

    inter_arr = np.array(inter, dtype=np.int64)
    n_users = int(inter_arr[:, 0].max()) + 1
    n_items = int(inter_arr[:, 1].max()) + 1
    n_entities = n_items
    if triples:
        tri = np.array(triples, dtype=np.int64)
        n_entities = max(n_entities, int(tri[:, [0, 2]].max()) + 1)
    total = n_users + n_entities
    if total > MAX_NODE_ID:
        raise SchemaError("node id space overflows")
    USER, ITEM, ENTITY = 0, 1, 2
    node_type_of = np.full(total, ENTITY, dtype=np.int64)
    node_type_of[:n_users] = USER
    node_type_of[n_users:n_users + n_items] = ITEM

    edge_types: list[str] = ["user-item"]
    endpoints = {0: (USER, ITEM)}
    pos = inter_arr[inter_arr[:, 2] == 1]
    adjacency = {0: sp.csr_matrix((np.ones(len(pos), dtype=bool), (pos[:, 0], n_users + pos[:, 1])),
                                  shape=(total, total))}
    if triples:
        tri = np.array(triples, dtype=np.int64)
        heads, tails = n_users + tri[:, 0], n_users + tri[:, 2]
        for r in np.unique(tri[:, 1]):
            sel = tri[:, 1] == r
            groups = sorted(set(zip(node_type_of[heads[sel]].tolist(), node_type_of[tails[sel]].tolist())))
            type_names = ("user", "item", "entity")
            for src, dst in groups:
                g = sel & (node_type_of[heads] == src) & (node_type_of[tails] == dst)
                name = f"r{r}" if len(groups) == 1 else f"r{r}:{type_names[src]}->{type_names[dst]}"
                t = len(edge_types)
                edge_types.append(name)
                endpoints[t] = (src, dst)
                adjacency[t] = sp.csr_matrix((np.ones(int(g.sum()), dtype=bool), (heads[g], tails[g])),
                                             shape=(total, total))
    graph = HeteroGraph(("user", "item", "entity"), tuple(edge_types), node_type_of, adjacency, endpoints)
    if add_inverse:
        graph = with_inverse_edges(graph)
    if not graph.is_heterogeneous():
        raise SchemaError("dataset is not heterogeneous")
    primary = PairLabelSet(0, inter_arr[:, 0], n_users + inter_arr[:, 1], inter_arr[:, 2])
    return graph, primary


def with_inverse_edges(graph: HeteroGraph) -> HeteroGraph:
    """Add a reversed edge type ``~name`` for every edge type."""
    edge_types = list(graph.edge_types)
    endpoints = dict(graph.endpoints)
    adjacency = dict(graph.adjacency)
    for t, name in enumerate(graph.edge_types):
        nt = len(edge_types)
        edge_types.append(_unique_name("~" + name, edge_types))
        src, dst = graph.endpoints[t]
        endpoints[nt] = (dst, src)
        adjacency[nt] = graph.adjacency[t].T.tocsr()
    return HeteroGraph(graph.node_types, tuple(edge_types), graph.node_type_of, adjacency,
                       endpoints, graph.features, graph.node_names)


def load_typed_graph(nodes_path, edges_path, labels_path=None) -> tuple[HeteroGraph, np.ndarray]:
    """Load a typed graph with features and (optionally) node-class labels.

    Unlabelled nodes carry ``UNLABELED`` (-1) in the returned label vector.
    """
    names: list[str] = []
    index: dict[str, int] = {}
    type_names: list[str] = []
    types: list[int] = []
    feats: list[list[float]] = []
    width = None
    for line_no, tok in _read_rows(nodes_path):
        if len(tok) < 2:
            raise ParseError(nodes_path, line_no, "expected 'node_id type_name feat...'")
        node, tname = tok[0], tok[1]
        if node in index:
            raise SchemaError(f"{nodes_path}:{line_no}: duplicate node {node!r}")
        try:
            row = [float(x) for x in tok[2:]]
        except ValueError:
            raise ParseError(nodes_path, line_no, "non-numeric feature") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise SchemaError(f"{nodes_path}:{line_no}: feature width {len(row)} != {width}")
        if tname not in type_names:
            type_names.append(tname)
        index[node] = len(names)
        names.append(node)
        types.append(type_names.index(tname))
        feats.append(row)
    n = len(names)
    if n == 0:
        raise SchemaError(f"{nodes_path}: no nodes")
    if n > MAX_NODE_ID:
        raise SchemaError("node id space overflows")
    node_type_of = np.array(types, dtype=np.int64)

    edge_names: list[str] = []
    endpoints: dict[int, tuple[int, int]] = {}
    coords: dict[int, tuple[list[int], list[int]]] = {}
    for line_no, tok in _read_rows(edges_path):
        if len(tok) != 3:
            raise ParseError(edges_path, line_no, "expected 'src dst edge_type_name'")
        a, b, ename = tok
        if a not in index or b not in index:
            raise SchemaError(f"{edges_path}:{line_no}: unknown node {a if a not in index else b!r}")
        ia, ib = index[a], index[b]
        if ename not in edge_names:
            edge_names.append(ename)
            t = len(edge_names) - 1
            endpoints[t] = (int(node_type_of[ia]), int(node_type_of[ib]))
            coords[t] = ([], [])
        t = edge_names.index(ename)
        if (node_type_of[ia], node_type_of[ib]) != endpoints[t]:
            raise SchemaError(
                f"{edges_path}:{line_no}: edge type {ename!r} connects "
                f"{type_names[endpoints[t][0]]}->{type_names[endpoints[t][1]]}, got "
                f"{type_names[node_type_of[ia]]}->{type_names[node_type_of[ib]]}"
            )
        coords[t][0].append(ia)
        coords[t][1].append(ib)
    adjacency = {
        t: sp.csr_matrix((np.ones(len(r), dtype=bool), (r, c)), shape=(n, n)) for t, (r, c) in coords.items()
    }
    features = np.array(feats, dtype=np.float64) if width else None
    graph = HeteroGraph(tuple(type_names), tuple(edge_names), node_type_of, adjacency, endpoints,
                        features, tuple(names))
    if not graph.is_heterogeneous():
        raise SchemaError("dataset is not heterogeneous")

    labels = np.full(n, UNLABELED, dtype=np.int64)
    if labels_path is not None:
        for line_no, tok in _read_rows(labels_path):
            if len(tok) != 2:
                raise ParseError(labels_path, line_no, "expected 'node_id class_id'")
            if tok[0] not in index:
                raise SchemaError(f"{labels_path}:{line_no}: unknown node {tok[0]!r}")
            cls = _parse_int(labels_path, line_no, tok[1])
            if cls < 0:
                raise SchemaError(f"{labels_path}:{line_no}: negative class id")
            labels[index[tok[0]]] = cls
    return graph, labels


def write_typed_graph(graph: HeteroGraph, nodes_path, edges_path) -> None:
    """Inverse of load_typed_graph (node ids are written as their index)."""
    x = graph.features
    with open(nodes_path, "w", encoding="utf-8") as fh:
        for v in range(graph.num_nodes):
            feats = "" if x is None else " " + " ".join(f"{val:.17g}" for val in x[v])
            fh.write(f"{v} {graph.node_types[graph.node_type_of[v]]}{feats}\n")
    with open(edges_path, "w", encoding="utf-8") as fh:
        for t, name in enumerate(graph.edge_types):
            r, c = graph.adjacency[t].nonzero()
            for a, b in zip(r.tolist(), c.tolist()):
                fh.write(f"{a} {b} {name}\n")


# ---------------------------------------------------------------- synthetic data

SYNTH_NODE_TYPES = ("A", "B", "C")
# (name, source, target); reversed relations share one random edge set
_SYNTH_CATALOGUE = (("AB", 0, 1), ("BA", 1, 0), ("BC", 1, 2), ("CB", 2, 1), ("AC", 0, 2), ("CA", 2, 0))
DEFAULT_PLANTED = ("AB", "BC", "CB", "BA")


def synth_hetero(n_per_type: int, n_edge_types: int = 4,
                 planted_spec: Sequence[str] | MetaPathSpec = DEFAULT_PLANTED,
                 signal_strength: float = 0.8, seed: int = 0, *, avg_degree: float = 2.0,
                 feature_dim: int = 16, base_rate: float = 0.05,
                 n_primary: int = 600) -> tuple[HeteroGraph, PairLabelSet]:
    """Random three-type graph whose primary links are driven by a planted meta-path.

    Every candidate pair between the planted path's terminal types gets label
    1 with probability ``base + s * (1 - base) * connected``. A balanced
    primary set of ``n_primary`` pairs is then drawn from those labels.
    Features are i.i.d. Gaussian and carry no label signal.
    """
    if n_per_type <= 0:
        raise ConfigError("n_per_type must be positive")
    if not 2 <= n_edge_types <= len(_SYNTH_CATALOGUE):
        raise ConfigError(f"n_edge_types must be in [2, {len(_SYNTH_CATALOGUE)}]")
    if not 0.0 <= signal_strength <= 1.0:
        raise ConfigError("signal_strength must be in [0, 1]")
    rng = np.random.default_rng(seed)
    n_types = len(SYNTH_NODE_TYPES)
    n = n_types * n_per_type
    node_type_of = np.repeat(np.arange(n_types), n_per_type)
    catalogue = _SYNTH_CATALOGUE[:n_edge_types]
    p_edge = min(1.0, avg_degree / n_per_type)
    adjacency, endpoints, names = {}, {}, []
    base_sets: dict[frozenset, sp.csr_matrix] = {}
    for t, (name, src, dst) in enumerate(catalogue):
        key = frozenset((src, dst))
        if key not in base_sets:
            mask = rng.random((n_per_type, n_per_type)) < p_edge
            r, c = np.nonzero(mask)
            lo, hi = min(src, dst), max(src, dst)
            base_sets[key] = sp.csr_matrix(
                (np.ones(len(r), dtype=bool), (lo * n_per_type + r, hi * n_per_type + c)), shape=(n, n))
        m = base_sets[key]
        adjacency[t] = m if src < dst else m.T.tocsr()
        endpoints[t] = (src, dst)
        names.append(name)
    features = rng.normal(size=(n, feature_dim)) if feature_dim else None
    graph = HeteroGraph(SYNTH_NODE_TYPES, tuple(names), node_type_of, adjacency, endpoints, features)

    spec = planted_spec if isinstance(planted_spec, MetaPathSpec) else MetaPathSpec.from_names(graph, planted_spec)
    spec.validate(graph)
    connected = compose_adjacency(graph, spec).toarray()
    src_t, dst_t = spec.terminal_types(graph)
    rows, cols = graph.nodes_of_type(src_t), graph.nodes_of_type(dst_t)
    cu, cv = np.meshgrid(rows, cols, indexing="ij")
    cu, cv = cu.ravel(), cv.ravel()
    keep = cu != cv
    cu, cv = cu[keep], cv[keep]
    c = connected[cu, cv].astype(np.float64)
    prob = base_rate + signal_strength * (1.0 - base_rate) * c
    y = (rng.random(len(prob)) < prob).astype(np.float64)
    pos_idx, neg_idx = np.flatnonzero(y == 1), np.flatnonzero(y == 0)
    half = min(n_primary // 2, len(pos_idx), len(neg_idx))
    if half == 0:
        raise ConfigError("degenerate synthetic config: no positive or no negative primary pairs")
    pick = np.concatenate([rng.choice(pos_idx, half, replace=False), rng.choice(neg_idx, half, replace=False)])
    pick = pick[rng.permutation(len(pick))]
    return graph, PairLabelSet(0, cu[pick], cv[pick], y[pick])


def random_hetero(n_nodes: int, n_node_types: int, n_edge_types: int, density: float = 0.15,
                  seed: int = 0, feature_dim: int = 0) -> HeteroGraph:
    """Small random typed graph with random edge-type endpoints (for oracles and gradient checks)."""
    if n_nodes < n_node_types or n_node_types < 1 or n_edge_types < 1:
        raise ConfigError("need at least one node per type and one edge type")
    rng = np.random.default_rng(seed)
    node_type_of = np.concatenate([np.arange(n_node_types), rng.integers(0, n_node_types, n_nodes - n_node_types)])
    node_type_of = node_type_of[rng.permutation(n_nodes)]
    adjacency, endpoints = {}, {}
    for t in range(n_edge_types):
        src, dst = (int(x) for x in rng.integers(0, n_node_types, 2))
        rows, cols = np.flatnonzero(node_type_of == src), np.flatnonzero(node_type_of == dst)
        mask = rng.random((len(rows), len(cols))) < density
        r, c = np.nonzero(mask)
        adjacency[t] = sp.csr_matrix((np.ones(len(r), dtype=bool), (rows[r], cols[c])), shape=(n_nodes, n_nodes))
        endpoints[t] = (src, dst)
    features = rng.normal(size=(n_nodes, feature_dim)) if feature_dim else None
    return HeteroGraph(tuple(f"N{i}" for i in range(n_node_types)), tuple(f"E{t}" for t in range(n_edge_types)),
                       node_type_of, adjacency, endpoints, features)
