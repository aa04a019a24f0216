"""Attributed-graph container, dataset format, featurization, and perturbations.

The on-disk dataset format is plain text: a directory holding

    edges.tsv       one "u<TAB>v" pair per line, 0-indexed node ids
    features.tsv    optional, N rows of space-separated decimals
    labels.tsv      optional, N lines with one integer cluster id each
    meta.json       {"n_nodes": int, "k_clusters": int, "dataset_name": str}

Graphs are undirected, binary, and self-loop free. When features.tsv is
absent, node features default to a one-hot encoding of node degrees.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DataError, FormatError, RangeError


@dataclass(frozen=True)
class AttributedGraph:
    """An undirected attributed graph with optional ground-truth labels.

    Attributes
    ----------
    n_nodes : int
        Number of nodes N.
    adjacency : scipy.sparse.csr_matrix
        Symmetric binary N x N adjacency, zero diagonal.
    features : ndarray, shape (N, J)
        Node feature matrix, float64.
    labels : ndarray of int or None
        Ground-truth cluster ids in [0, k_clusters).
    k_clusters : int
        Number of clusters K.
    name : str
        Dataset name, used in result records.
    """

    n_nodes: int
    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray | None
    k_clusters: int
    name: str = "unnamed"

    def __post_init__(self):
        a = self.adjacency
        if a.shape != (self.n_nodes, self.n_nodes):
            raise DataError(f"adjacency shape {a.shape} does not match n_nodes={self.n_nodes}")
        if a.nnz and (a != a.T).nnz:
            raise DataError("adjacency must be symmetric")
        if a.diagonal().any():
            raise DataError("adjacency must have an empty diagonal (no self-loops)")
        if a.nnz:
            vals = np.unique(a.data)
            if not np.array_equal(vals, np.array([1.0])):
                raise DataError("adjacency must be binary")
        if self.features.shape[0] != self.n_nodes:
            raise DataError("feature row count does not match n_nodes")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain NaN or Inf")
        if self.labels is not None:
            if self.labels.shape != (self.n_nodes,):
                raise DataError("labels length does not match n_nodes")
            if self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= self.k_clusters:
                raise DataError("labels must lie in [0, k_clusters)")
        if self.k_clusters < 1:
            raise DataError("k_clusters must be >= 1")

    @property
    def n_edges(self) -> int:
        """Number of undirected edges |E|."""
        return self.adjacency.nnz // 2

    def edge_array(self) -> np.ndarray:
        """Undirected edges as an (|E|, 2) int array with u < v, lexicographic."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        pairs = np.stack([coo.row, coo.col], axis=1)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        return pairs[order]

    def degrees(self) -> np.ndarray:
        """Node degrees as an int array of length N."""
        return np.asarray(self.adjacency.sum(axis=1)).ravel().astype(np.int64)


@dataclass(frozen=True)
class NormalizedAdjacency:
    """A symmetrically normalized adjacency.

    mode "propagation" adds self-loops first (entries d~_i^-1/2 d~_j^-1/2
    over A+I); mode "target" normalizes A itself and leaves isolated nodes
    as zero rows.
    """

    matrix: sp.csr_matrix
    mode: str


def adjacency_from_edges(n_nodes: int, edges: np.ndarray) -> sp.csr_matrix:
    """Build a symmetric binary CSR adjacency from an (m, 2) edge array.

    Duplicate and reversed pairs collapse to a single undirected edge.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size:
        u = np.minimum(edges[:, 0], edges[:, 1])
        v = np.maximum(edges[:, 0], edges[:, 1])
        keys = np.unique(u.astype(np.int64) * n_nodes + v)
        u, v = keys // n_nodes, keys % n_nodes
        row = np.concatenate([u, v])
        col = np.concatenate([v, u])
        data = np.ones(row.shape[0], dtype=np.float64)
        a = sp.csr_matrix((data, (row, col)), shape=(n_nodes, n_nodes))
    else:
        a = sp.csr_matrix((n_nodes, n_nodes), dtype=np.float64)
    a.sum_duplicates()
    a.data[:] = 1.0
    a.sort_indices()
    return a


def make_graph(n_nodes, edges, features=None, labels=None, k_clusters=1, name="unnamed"):
    """Construct a validated AttributedGraph from an edge array.

    Features default to the degree one-hot encoding when omitted.
    """
    adjacency = adjacency_from_edges(n_nodes, np.asarray(edges) if len(edges) else np.empty((0, 2)))
    labels = None if labels is None else np.asarray(labels, dtype=np.int64)
    if features is None:
        features = _degree_onehot(np.asarray(adjacency.sum(axis=1)).ravel().astype(np.int64))
    features = np.asarray(features, dtype=np.float64)
    return AttributedGraph(n_nodes, adjacency, features, labels, k_clusters, name)


def load_dataset(path) -> AttributedGraph:
    """Load an AttributedGraph from a dataset directory.

    Parameters
    ----------
    path : str or Path
        Directory containing edges.tsv, meta.json, and optionally
        features.tsv and labels.tsv.

    Raises
    ------
    FormatError
        Missing files, malformed lines, node ids >= n_nodes, self-loop
        lines, or labels outside [0, k_clusters).
    """
    path = Path(path)
    meta_file = path / "meta.json"
    edge_file = path / "edges.tsv"
    if not meta_file.is_file():
        raise FormatError(f"missing meta.json in {path}")
    if not edge_file.is_file():
        raise FormatError(f"missing edges.tsv in {path}")
    try:
        meta = json.loads(meta_file.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"meta.json is not valid JSON: {exc}") from exc
    for key in ("n_nodes", "k_clusters"):
        if key not in meta:
            raise FormatError(f"meta.json missing required key '{key}'")
    n_nodes = int(meta["n_nodes"])
    k_clusters = int(meta["k_clusters"])
    name = str(meta.get("dataset_name", path.name))

    edges = []
    for lineno, line in enumerate(edge_file.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"edges.tsv line {lineno}: expected 'u<TAB>v', got {line!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise FormatError(f"edges.tsv line {lineno}: non-integer node id") from exc
        if u == v:
            raise FormatError(f"edges.tsv line {lineno}: self-loop {u}")
        if u < 0 or v < 0 or u >= n_nodes or v >= n_nodes:
            raise FormatError(f"edges.tsv line {lineno}: node id out of range [0, {n_nodes})")
        edges.append((u, v))
    adjacency = adjacency_from_edges(n_nodes, np.array(edges) if edges else np.empty((0, 2)))

    feat_file = path / "features.tsv"
    if feat_file.is_file():
        try:
            features = np.loadtxt(feat_file, dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise FormatError(f"features.tsv: {exc}") from exc
        if features.shape[0] != n_nodes:
            raise FormatError(
                f"features.tsv has {features.shape[0]} rows, expected {n_nodes}"
            )
        if not np.all(np.isfinite(features)):
            raise FormatError("features.tsv contains non-finite values")
    else:
        degrees = np.asarray(adjacency.sum(axis=1)).ravel().astype(np.int64)
        features = _degree_onehot(degrees)

    label_file = path / "labels.tsv"
    labels = None
    if label_file.is_file():
        try:
            labels = np.loadtxt(label_file, dtype=np.int64, ndmin=1)
        except ValueError as exc:
            raise FormatError(f"labels.tsv: {exc}") from exc
        if labels.shape[0] != n_nodes:
            raise FormatError(f"labels.tsv has {labels.shape[0]} lines, expected {n_nodes}")
        if labels.min() < 0 or labels.max() >= k_clusters:
            raise FormatError(f"labels.tsv contains labels outside [0, {k_clusters})")

    return AttributedGraph(n_nodes, adjacency, features, labels, k_clusters, name)


def save_dataset(graph: AttributedGraph, path) -> None:
    """Write a graph back to the dataset directory format.

    Edges and labels round-trip exactly; features round-trip to the
    printed decimal precision (repr of float64).
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {"n_nodes": graph.n_nodes, "k_clusters": graph.k_clusters, "dataset_name": graph.name}
    (path / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    lines = [f"{u}\t{v}" for u, v in graph.edge_array()]
    (path / "edges.tsv").write_text("\n".join(lines) + ("\n" if lines else ""))
    rows = [" ".join(repr(float(x)) for x in row) for row in graph.features]
    (path / "features.tsv").write_text("\n".join(rows) + "\n")
    if graph.labels is not None:
        (path / "labels.tsv").write_text("\n".join(str(int(x)) for x in graph.labels) + "\n")


def _degree_onehot(degrees: np.ndarray) -> np.ndarray:
    """One column per distinct degree value; row i flags degree(i)'s bin."""
    bins = np.unique(degrees)
    out = np.zeros((degrees.shape[0], bins.shape[0]), dtype=np.float64)
    out[np.arange(degrees.shape[0]), np.searchsorted(bins, degrees)] = 1.0
    return out


def degree_onehot_features(graph: AttributedGraph) -> np.ndarray:
    """One-hot encoding of node degrees (J = number of distinct degrees)."""
    if graph.n_nodes < 1:
        raise DataError("graph must have at least one node")
    return _degree_onehot(graph.degrees())


def row_normalize(features: np.ndarray) -> np.ndarray:
    """Scale each row to unit Euclidean norm; zero rows pass through."""
    features = np.asarray(features, dtype=np.float64)
    if not np.all(np.isfinite(features)):
        raise DataError("cannot normalize non-finite features")
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return features / safe


def normalize_adjacency(graph: AttributedGraph, mode: str) -> NormalizedAdjacency:
    """Symmetric degree normalization of the adjacency.

    Parameters
    ----------
    graph : AttributedGraph
    mode : {"propagation", "target"}
        "propagation" applies the renormalization trick to A+I (used by
        the GCN filter); "target" normalizes A without self-loops (used
        for reconstruction targets and loss decompositions). Isolated
        nodes in target mode yield zero rows.
    """
    if mode not in ("propagation", "target"):
        raise RangeError(f"unknown normalization mode {mode!r}")
    a = graph.adjacency
    if mode == "propagation":
        a = (a + sp.eye(graph.n_nodes, format="csr")).tocsr()
    deg = np.asarray(a.sum(axis=1)).ravel()
    with np.errstate(divide="ignore"):
        inv_sqrt = np.where(deg > 0.0, 1.0 / np.sqrt(np.where(deg > 0.0, deg, 1.0)), 0.0)
    d_inv = sp.diags(inv_sqrt)
    normalized = (d_inv @ a @ d_inv).tocsr()
    normalized.sort_indices()
    return NormalizedAdjacency(normalized, mode)


def perturb_graph(graph: AttributedGraph, kind: str, amount, seed: int) -> AttributedGraph:
    """Return a randomly perturbed copy of the graph.

    Parameters
    ----------
    kind : {"add_random_edges", "drop_random_edges", "feature_gaussian_noise",
            "drop_feature_columns"}
    amount : int or float
        Edge/column count m, or noise standard deviation sigma.
    seed : int
        Perturbations are deterministic given the seed.

    Raises
    ------
    RangeError
        m exceeds the available candidates, or sigma < 0.
    """
    rng = np.random.default_rng(seed)
    n = graph.n_nodes
    if kind == "add_random_edges":
        m = int(amount)
        existing = graph.edge_array()
        n_pairs = n * (n - 1) // 2
        candidates = n_pairs - existing.shape[0]
        if m < 0 or m > candidates:
            raise RangeError(f"cannot add {m} edges: only {candidates} non-edges exist")
        taken = {n * int(u) + int(v) for u, v in existing}
        new = []
        # rejection sampling stays uniform over non-edges and never builds
        # the O(N^2) candidate list
        while len(new) < m:
            u = int(rng.integers(0, n))
            v = int(rng.integers(0, n))
            if u == v:
                continue
            if u > v:
                u, v = v, u
            key = n * u + v
            if key in taken:
                continue
            taken.add(key)
            new.append((u, v))
        edges = np.concatenate([existing, np.array(new, dtype=np.int64).reshape(-1, 2)])
        adjacency = adjacency_from_edges(n, edges)
        return AttributedGraph(n, adjacency, graph.features, graph.labels,
                               graph.k_clusters, graph.name)
    if kind == "drop_random_edges":
        m = int(amount)
        existing = graph.edge_array()
        if m < 0 or m > existing.shape[0]:
            raise RangeError(f"cannot drop {m} edges: graph has {existing.shape[0]}")
        keep = np.ones(existing.shape[0], dtype=bool)
        keep[rng.choice(existing.shape[0], size=m, replace=False)] = False
        adjacency = adjacency_from_edges(n, existing[keep])
        return AttributedGraph(n, adjacency, graph.features, graph.labels,
                               graph.k_clusters, graph.name)
    if kind == "feature_gaussian_noise":
        sigma = float(amount)
        if sigma < 0.0:
            raise RangeError("noise standard deviation must be >= 0")
        features = graph.features + rng.normal(0.0, sigma, size=graph.features.shape)
        return AttributedGraph(n, graph.adjacency, features, graph.labels,
                               graph.k_clusters, graph.name)
    if kind == "drop_feature_columns":
        m = int(amount)
        j = graph.features.shape[1]
        if m < 0 or m >= j:
            raise RangeError(f"cannot drop {m} of {j} feature columns")
        drop = rng.choice(j, size=m, replace=False)
        keep = np.setdiff1d(np.arange(j), drop)
        return AttributedGraph(n, graph.adjacency, graph.features[:, keep],
                               graph.labels, graph.k_clusters, graph.name)
    raise RangeError(f"unknown perturbation kind {kind!r}")
