"""Graph data model, splits, propagation operator and node deletion."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

MISSING = -1


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected, unweighted attributed graph.

    ``labels`` and ``sensitive`` are int8 vectors where ``-1`` marks a missing
    value, or ``None`` when the attribute is absent altogether. ``node_ids``
    holds the external identifiers; internal indices are dense ``0..n-1``.
    """

    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray | None = None
    sensitive: np.ndarray | None = None
    node_ids: tuple = ()
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n = self.features.shape[0]
        adj = sp.csr_matrix(self.adjacency, dtype=np.float64)
        adj.sum_duplicates()
        adj.eliminate_zeros()
        if adj.shape != (n, n):
            raise ValueError(f"adjacency shape {adj.shape} does not match {n} feature rows")
        if adj.nnz and (adj.diagonal() != 0).any():
            raise ValueError("adjacency must not store self-loops")
        if adj.nnz and not np.all(adj.data == 1.0):
            raise ValueError("adjacency entries must be 0/1")
        if (adj != adj.T).nnz:
            raise ValueError("adjacency must be symmetric")
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "features", features)
        for name in ("labels", "sensitive"):
            values = getattr(self, name)
            if values is None:
                continue
            values = np.asarray(values, dtype=np.int8)
            if values.shape != (n,):
                raise ValueError(f"{name} must have one entry per node")
            if not np.isin(values, (MISSING, 0, 1)).all():
                raise ValueError(f"{name} must be 0, 1 or missing")
            object.__setattr__(self, name, values)
        ids = tuple(self.node_ids) if len(self.node_ids) else tuple(range(n))
        if len(ids) != n:
            raise ValueError("node_ids must have one entry per node")
        index = {v: i for i, v in enumerate(ids)}
        if len(index) != n:
            raise ValueError("node_ids must be unique")
        object.__setattr__(self, "node_ids", ids)
        object.__setattr__(self, "_index", index)

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return self.adjacency.nnz // 2

    @property
    def is_empty(self) -> bool:
        """Degenerate graph with no nodes (e.g. after deleting everything)."""
        return self.num_nodes == 0

    def index_of(self, ids: Iterable[Hashable]) -> np.ndarray:
        out = []
        for v in ids:
            try:
                out.append(self._index[v])
            except KeyError:
                raise KeyError(f"unknown node id {v!r}") from None
        return np.asarray(out, dtype=np.int64)

    def ids_of(self, indices: Iterable[int]) -> list:
        return [self.node_ids[i] for i in indices]

    def labeled(self) -> np.ndarray:
        if self.labels is None:
            return np.arange(0, dtype=np.int64)
        return np.flatnonzero(self.labels != MISSING)


def graph_from_edges(
    edges: Sequence[tuple[int, int]] | np.ndarray,
    features: np.ndarray,
    labels=None,
    sensitive=None,
    node_ids: Sequence = (),
) -> Graph:
    """Build a graph from an undirected edge list over dense indices."""
    n = np.asarray(features).shape[0]
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    edges = edges[edges[:, 0] != edges[:, 1]]
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n)).tocsr()
    adj.sum_duplicates()
    adj.data[:] = 1.0
    return Graph(adj, features, labels, sensitive, tuple(node_ids))


def build_normalized_adjacency(graph: Graph) -> sp.csr_matrix:
    """Return D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
    n = graph.num_nodes
    a_tilde = (graph.adjacency + sp.identity(n, format="csr")).tocsr()
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
    out = (inv_sqrt @ a_tilde @ inv_sqrt).tocsr()
    out.sort_indices()
    return out


def delete_nodes(graph: Graph, forget_ids: Iterable[Hashable]) -> Graph:
    """Remove nodes (by external id) together with their incident edges.

    Remaining nodes keep their external ids and relative order; nodes that
    become isolated are kept.
    """
    drop = np.unique(graph.index_of(forget_ids))
    if drop.size == 0:
        return graph
    keep = np.setdiff1d(np.arange(graph.num_nodes), drop)
    adj = graph.adjacency[keep][:, keep]
    return Graph(
        adj,
        graph.features[keep],
        None if graph.labels is None else graph.labels[keep],
        None if graph.sensitive is None else graph.sensitive[keep],
        tuple(graph.node_ids[i] for i in keep),
    )


@dataclass(frozen=True, eq=False)
class SplitMasks:
    """Node index sets, relative to the graph the split was drawn on.

    ``val_ids`` is carved out of the training pool when a validation fraction
    is requested and is empty otherwise.
    """

    train_ids: np.ndarray
    test_ids: np.ndarray
    sensitive_known_ids: np.ndarray
    forget_ids: np.ndarray
    val_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        for name in ("train_ids", "test_ids", "sensitive_known_ids", "forget_ids", "val_ids"):
            object.__setattr__(self, name, np.sort(np.asarray(getattr(self, name), dtype=np.int64)))
        if np.intersect1d(self.train_ids, self.test_ids).size:
            raise ValueError("train and test sets overlap")
        if np.intersect1d(self.val_ids, self.train_ids).size or np.intersect1d(self.val_ids, self.test_ids).size:
            raise ValueError("validation set overlaps train/test")
        if np.setdiff1d(self.forget_ids, self.train_ids).size:
            raise ValueError("forget set must be a subset of the train set")

    @property
    def retain_ids(self) -> np.ndarray:
        return np.setdiff1d(self.train_ids, self.forget_ids)

    def with_forget(self, forget_ids) -> "SplitMasks":
        return SplitMasks(self.train_ids, self.test_ids, self.sensitive_known_ids, forget_ids, self.val_ids)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_dataset(
    graph: Graph,
    train_fraction: float = 0.8,
    forget_fraction: float = 0.05,
    sensitive_known_fraction: float = 0.5,
    seed: int = 0,
    val_fraction: float = 0.0,
) -> SplitMasks:
    """Random train/test split over labeled nodes plus forget and V_S subsets.

    ``forget_fraction`` and ``sensitive_known_fraction`` are fractions of the
    training set; ``val_fraction`` (may be 0) is a fraction of the labeled pool.
    """
    for name, value in (
        ("train_fraction", train_fraction),
        ("forget_fraction", forget_fraction),
        ("sensitive_known_fraction", sensitive_known_fraction),
    ):
        if not 0.0 < value <= 1.0:
            raise ValueError(f"{name} must lie in (0, 1], got {value}")
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError(f"val_fraction must lie in [0, 1), got {val_fraction}")

    rng = np.random.default_rng(seed)
    pool = graph.labeled() if graph.labels is not None else np.arange(graph.num_nodes)
    pool = rng.permutation(pool)
    n_train = _round_half_up(train_fraction * pool.size)
    n_val = _round_half_up(val_fraction * pool.size)
    train = pool[:n_train]
    val = pool[n_train:n_train + n_val]
    test = pool[n_train + n_val:]
    if train.size == 0 or test.size == 0:
        raise ValueError(f"split leaves an empty set (train={train.size}, test={test.size})")

    n_forget = _round_half_up(forget_fraction * train.size)
    forget = rng.permutation(train)[:n_forget]

    known = train
    if graph.sensitive is not None:
        known = train[graph.sensitive[train] != MISSING]
    n_known = _round_half_up(sensitive_known_fraction * known.size)
    sens_known = rng.permutation(known)[:n_known]
    return SplitMasks(train, test, sens_known, forget, val)


def generate_synthetic_biased_graph(
    seed: int,
    n: int,
    d: int,
    homophily: float = 0.8,
    bias_strength: float = 0.8,
    avg_degree: float = 10.0,
    sensitive_noise: float = 1.0,
    label_signal: float = 2.0,
) -> Graph:
    """Synthetic graph whose labels leak the sensitive attribute.

    ``s`` is split exactly 50/50. With probability ``bias_strength`` a node's
    label copies ``s``, otherwise it is a fair coin, so the label gap between
    groups is ``bias_strength`` in expectation. Column 0 is ``s`` plus
    Gaussian noise of scale ``sensitive_noise`` (0 makes it an exact copy);
    the remaining columns carry the label with mean shift ``label_signal``.
    Each edge stays inside its source node's sensitive group with
    probability ``homophily``.
    """
    if n < 10 or d < 2:
        raise ValueError("need n >= 10 and d >= 2")
    rng = np.random.default_rng(seed)
    s = rng.permutation(np.arange(n) % 2).astype(np.int8)
    copy = rng.random(n) < bias_strength
    y = np.where(copy, s, rng.integers(0, 2, n)).astype(np.int8)

    x = rng.normal(size=(n, d))
    x[:, 0] = s + sensitive_noise * x[:, 0]
    x[:, 1:] += label_signal * (2.0 * y[:, None] - 1.0) / np.sqrt(d - 1)

    groups = [np.flatnonzero(s == g) for g in (0, 1)]
    m = int(round(avg_degree * n / 2))
    src = rng.integers(0, n, m)
    same = rng.random(m) < homophily
    target_group = np.where(same, s[src], 1 - s[src])
    dst = np.empty(m, dtype=np.int64)
    for g in (0, 1):
        sel = target_group == g
        dst[sel] = rng.choice(groups[g], size=int(sel.sum()))
    edges = np.stack([src, dst], axis=1)
    return graph_from_edges(edges, x, y, s)
