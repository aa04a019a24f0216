"""Reliable-node sampling and self-supervision graph rewriting.

Two operators drive the "R-" training regime:

* xi_select picks the decidable nodes Omega whose top assignment
  confidence clears alpha1 and whose top-two margin clears alpha2.
* upsilon_transform rebuilds the reconstruction target from the original
  graph: every reliable node gains an edge to its cluster's centroid
  node, and reliable cross-cluster edges are dropped, yielding K
  star-shaped subgraphs as Omega grows.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .clustering import ClusterModel, SoftAssignment, gaussian_soft_assign, onehot_assignment
from .errors import OperatorError, RangeError
from .graphio import adjacency_from_edges

ABSENT = -1  # centroid sentinel for clusters with no reliable member


@dataclass(frozen=True)
class ReliableSet:
    """The decidable nodes Omega with their per-node confidence scores."""

    omega: np.ndarray    # sorted node indices
    lambda1: np.ndarray  # per-node top confidence
    lambda2: np.ndarray  # per-node runner-up confidence
    alpha1: float
    alpha2: float

    def __post_init__(self):
        if np.any(self.lambda2 > self.lambda1 + 1e-12):
            raise OperatorError("lambda2 must not exceed lambda1")

    @property
    def size(self) -> int:
        return int(self.omega.shape[0])

    def mask(self, n: int) -> np.ndarray:
        out = np.zeros(n, dtype=bool)
        out[self.omega] = True
        return out


@dataclass(frozen=True)
class CentroidNodes:
    """One centroid node per cluster: the Omega member nearest mu~_j."""

    pi: np.ndarray        # length K, node index or ABSENT
    mu_tilde: np.ndarray  # (K, d) reliable-member means (NaN rows when absent)


@dataclass(frozen=True)
class SelfSupervisionGraph:
    """The rewired reconstruction target plus per-edge provenance.

    Edges currently present are partitioned into original (inherited
    from A) and added (created by the transform); deleted_edges lists
    the original edges the transform removed. All edge arrays use
    (u, v) with u < v.
    """

    adjacency: sp.csr_matrix
    added_edges: np.ndarray
    deleted_edges: np.ndarray

    def edge_provenance(self) -> list:
        """Edges as (u, v, tag) rows, tag in {"O", "A"}, sorted."""
        added = {(int(u), int(v)) for u, v in self.added_edges}
        coo = sp.triu(self.adjacency, k=1).tocoo()
        rows = []
        for u, v in sorted(zip(coo.row.tolist(), coo.col.tolist())):
            rows.append((u, v, "A" if (u, v) in added else "O"))
        return rows


def passthrough_graph(a: sp.csr_matrix) -> SelfSupervisionGraph:
    """A as its own supervision graph (baseline regime, no rewiring)."""
    return SelfSupervisionGraph(a.copy(), np.empty((0, 2), dtype=np.int64),
                                np.empty((0, 2), dtype=np.int64))


def all_nodes_reliable(n: int) -> ReliableSet:
    """Omega = V with saturated confidences (baseline / protection mode)."""
    return ReliableSet(np.arange(n, dtype=np.int64), np.ones(n), np.zeros(n), 0.0, 0.0)


def xi_select(z: np.ndarray, p: SoftAssignment, model: ClusterModel | None,
              alpha1: float, alpha2: float | None = None) -> ReliableSet:
    """Select the decidable nodes.

    When p is a hard one-hot assignment, a ClusterModel must be supplied
    so confidences can be recovered as Gaussian responsibilities; a soft
    p is used directly. lambda1 is the row maximum, lambda2 the largest
    entry strictly below it (lambda2 := lambda1 on a constant row, which
    zeroes the margin and excludes the node). Omega keeps the rows with
    lambda1 >= alpha1 and lambda1 - lambda2 >= alpha2.
    """
    if p.n_clusters < 2:
        raise RangeError("xi_select needs K >= 2 (the runner-up score is undefined)")
    if alpha2 is None:
        alpha2 = alpha1 / 2.0
    if p.is_hard():
        if model is None:
            raise OperatorError("hard assignments need a ClusterModel to rebuild confidences")
        p_prime = gaussian_soft_assign(np.asarray(z, dtype=np.float64), model)
    else:
        p_prime = p
    mat = p_prime.matrix
    lam1 = mat.max(axis=1)
    below = np.where(mat < lam1[:, None], mat, -np.inf)
    lam2 = below.max(axis=1)
    constant = ~np.isfinite(lam2)
    lam2 = np.where(constant, lam1, lam2)
    keep = (lam1 >= alpha1) & (lam1 - lam2 >= alpha2)
    omega = np.flatnonzero(keep).astype(np.int64)
    return ReliableSet(omega, lam1, lam2, float(alpha1), float(alpha2))


def compute_centroid_nodes(z: np.ndarray, p: SoftAssignment, omega: ReliableSet,
                           k: int) -> CentroidNodes:
    """Nearest reliable node to each cluster's reliable-member mean.

    mu~_j averages the embeddings of Omega members assigned to cluster j;
    pi[j] is the Omega member (over ALL of Omega) closest to mu~_j in L2,
    ties to the lowest index. Clusters without reliable members get the
    ABSENT sentinel; when every cluster is absent (Omega empty) an
    OperatorError is raised.
    """
    z = np.asarray(z, dtype=np.float64)
    idx = omega.omega
    if idx.size == 0:
        raise OperatorError("cannot compute centroid nodes from an empty reliable set")
    labels = p.labels()
    pi = np.full(k, ABSENT, dtype=np.int64)
    mu_tilde = np.full((k, z.shape[1]), np.nan)
    z_omega = z[idx]
    for j in range(k):
        members = idx[labels[idx] == j]
        if members.size == 0:
            continue
        mu = z[members].mean(axis=0)
        mu_tilde[j] = mu
        dist = np.einsum("nd,nd->n", z_omega - mu, z_omega - mu)
        pi[j] = idx[int(np.argmin(dist))]
    if np.all(pi == ABSENT):
        raise OperatorError("every cluster lacks reliable members")
    return CentroidNodes(pi, mu_tilde)


def upsilon_transform(a: sp.csr_matrix, p: SoftAssignment, omega: ReliableSet,
                      pi: CentroidNodes, allow_add: bool = True,
                      allow_drop: bool = True) -> SelfSupervisionGraph:
    """Rewire a fresh copy of A into the clustering-oriented target.

    For each reliable node i with cluster k1: connect i to the centroid
    node pi[k1] when that edge is absent from A and the centroid's own
    cluster is k1; then, scanning i's original neighbors l, drop (i, l)
    when l is reliable and belongs to a different cluster. The result is
    symmetrized and stays self-loop free. allow_add / allow_drop gate
    the two phases for the edge-ablation experiments.
    """
    n = a.shape[0]
    labels = p.labels()
    reliable = set(int(v) for v in omega.omega)
    original = {(int(u), int(v)) for u, v in zip(*sp.triu(a, k=1).nonzero())}
    edges = set(original)
    added, deleted = set(), set()
    indptr, indices = a.indptr, a.indices
    for i in sorted(reliable):
        k1 = int(labels[i])
        j = int(pi.pi[k1]) if k1 < pi.pi.shape[0] else ABSENT
        if allow_add and j != ABSENT and j != i:
            pair = (i, j) if i < j else (j, i)
            if pair not in original and int(labels[j]) == k1:
                edges.add(pair)
                added.add(pair)
        if allow_drop:
            for l in (int(v) for v in indices[indptr[i]:indptr[i + 1]]):
                if labels[l] != k1 and l in reliable:
                    pair = (i, l) if i < l else (l, i)
                    if pair in edges:
                        edges.remove(pair)
                        deleted.add(pair)
    edge_arr = np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)
    adjacency = adjacency_from_edges(n, edge_arr)
    return SelfSupervisionGraph(
        adjacency,
        np.array(sorted(added), dtype=np.int64).reshape(-1, 2),
        np.array(sorted(deleted), dtype=np.int64).reshape(-1, 2),
    )


def build_supervised_target(a: sp.csr_matrix, truth_labels: np.ndarray,
                            z: np.ndarray, k: int | None = None) -> SelfSupervisionGraph:
    """The transform every training run is measured against.

    Applies upsilon_transform over the full node set with ground-truth
    assignments, giving the clustering-oriented graph a perfectly
    supervised run would converge to. The output is invariant to label
    permutations, so truth labels can be passed in any indexing.
    """
    truth_labels = np.asarray(truth_labels, dtype=np.int64)
    if k is None:
        k = int(truth_labels.max()) + 1
    q = onehot_assignment(truth_labels, k)
    omega = all_nodes_reliable(a.shape[0])
    pi = compute_centroid_nodes(z, q, omega, k)
    return upsilon_transform(a, q, omega, pi)


def save_edge_list(ssg: SelfSupervisionGraph, path) -> None:
    """Write "u<TAB>v<TAB>{O,A}" rows plus a .deleted sidecar."""
    path = Path(path)
    rows = [f"{u}\t{v}\t{tag}" for u, v, tag in ssg.edge_provenance()]
    path.write_text("\n".join(rows) + ("\n" if rows else ""))
    sidecar = path.with_suffix(path.suffix + ".deleted")
    dels = [f"{u}\t{v}" for u, v in ssg.deleted_edges]
    sidecar.write_text("\n".join(dels) + ("\n" if dels else ""))
