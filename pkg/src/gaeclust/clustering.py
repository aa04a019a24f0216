"""K-means, soft assignments, Hungarian label mapping, and external metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment

from .errors import DataError, RangeError

VAR_FLOOR = 1e-6


@dataclass(frozen=True)
class ClusterModel:
    """Cluster centers with per-dimension (diagonal) variances.

    variances are floored at 1e-6 so the Gaussian responsibility kernel
    never divides by zero; singleton clusters carry all-floor variances.
    """

    centers: np.ndarray    # (K, d)
    variances: np.ndarray  # (K, d), >= VAR_FLOOR

    def __post_init__(self):
        if self.centers.shape != self.variances.shape:
            raise DataError("centers and variances must share a shape")
        if np.any(self.variances < VAR_FLOOR * (1.0 - 1e-12)):
            raise DataError("variances below the 1e-6 floor")


@dataclass(frozen=True)
class SoftAssignment:
    """Row-stochastic N x K assignment matrix with its derived hard labels."""

    matrix: np.ndarray
    kind: str  # gaussian_p_prime | student_t_p | hard_onehot

    def __post_init__(self):
        m = self.matrix
        if m.ndim != 2:
            raise DataError("assignment matrix must be 2-D")
        if np.any(m < -1e-12):
            raise DataError("assignment entries must be >= 0")
        if not np.allclose(m.sum(axis=1), 1.0, atol=1e-9):
            raise DataError("assignment rows must sum to 1")

    def labels(self) -> np.ndarray:
        """Hard labels y(P): per-row argmax, ties to the lowest index."""
        return np.argmax(self.matrix, axis=1).astype(np.int64)

    @property
    def n_clusters(self) -> int:
        return self.matrix.shape[1]

    def is_hard(self) -> bool:
        """True when every row is exactly one-hot."""
        m = self.matrix
        return bool(np.all(np.isin(m, (0.0, 1.0))) and np.all(m.sum(axis=1) == 1.0))


def _squared_distances(z: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, (N, K)."""
    diff = z[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _variances_for(z: np.ndarray, centers: np.ndarray, labels: np.ndarray) -> np.ndarray:
    var = np.full_like(centers, VAR_FLOOR)
    for k in range(centers.shape[0]):
        members = z[labels == k]
        if members.shape[0] >= 2:
            var[k] = np.maximum(members.var(axis=0), VAR_FLOOR)
    return var


def kmeans(z: np.ndarray, k: int, seed: int, max_iter: int = 300):
    """Lloyd's algorithm with k-means++ seeding.

    Deterministic for a fixed seed. Empty clusters are reseeded to the
    point farthest from its assigned center.

    Returns
    -------
    (ClusterModel, ndarray)
        Fitted centers/variances and the hard labels.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    if n < k:
        raise RangeError(f"kmeans needs N >= K, got N={n}, K={k}")
    rng = np.random.default_rng(seed)

    # k-means++ seeding: D^2-weighted draws
    centers = np.empty((k, z.shape[1]), dtype=np.float64)
    centers[0] = z[rng.integers(0, n)]
    d2 = np.sum((z - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(0, n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = z[idx]
        d2 = np.minimum(d2, np.sum((z - centers[j]) ** 2, axis=1))

    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        dist = _squared_distances(z, centers)
        new_labels = np.argmin(dist, axis=1)
        for j in range(k):
            members = new_labels == j
            if not members.any():
                far = int(np.argmax(dist[np.arange(n), new_labels]))
                centers[j] = z[far]
                new_labels[far] = j
            else:
                centers[j] = z[members].mean(axis=0)
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels

    model = ClusterModel(centers, _variances_for(z, centers, labels))
    return model, labels


def kmeans_objective(z: np.ndarray, centers: np.ndarray, labels: np.ndarray) -> float:
    """Within-cluster sum of squared distances."""
    return float(np.sum((z - centers[labels]) ** 2))


def gaussian_soft_assign(z: np.ndarray, model: ClusterModel) -> SoftAssignment:
    """Softmax of the negative half Mahalanobis distances to each center.

    p'_ij = exp(-0.5 (z_i-mu_j)^T Sigma_j^-1 (z_i-mu_j)) / sum_j' exp(...)
    with a per-row max shift for overflow safety.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape[1] != model.centers.shape[1]:
        raise DataError("embedding dim does not match cluster model")
    diff = z[:, None, :] - model.centers[None, :, :]
    log_kernel = -0.5 * np.einsum("nkd,nkd->nk", diff * (1.0 / model.variances)[None, :, :], diff)
    log_kernel -= log_kernel.max(axis=1, keepdims=True)
    p = np.exp(log_kernel)
    p /= p.sum(axis=1, keepdims=True)
    return SoftAssignment(p, "gaussian_p_prime")


def student_t_assign(z: np.ndarray, centers: np.ndarray) -> SoftAssignment:
    """Student's t (DEC-style) soft assignment.

    p_ij = (1+||z_i-mu_j||^2)^-1 / sum_j' (1+||z_i-mu_j'||^2)^-1.
    """
    z = np.asarray(z, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    s = 1.0 / (1.0 + _squared_distances(z, centers))
    p = s / s.sum(axis=1, keepdims=True)
    return SoftAssignment(p, "student_t_p")


def hard_target(p: SoftAssignment) -> SoftAssignment:
    """One-hot matrix Q at each row's argmax (ties to the lowest index)."""
    idx = p.labels()
    q = np.zeros_like(p.matrix)
    q[np.arange(q.shape[0]), idx] = 1.0
    return SoftAssignment(q, "hard_onehot")


def onehot_assignment(labels: np.ndarray, k: int) -> SoftAssignment:
    """One-hot SoftAssignment from integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise DataError("labels outside [0, K)")
    q = np.zeros((labels.shape[0], k), dtype=np.float64)
    q[np.arange(labels.shape[0]), labels] = 1.0
    return SoftAssignment(q, "hard_onehot")


def _contingency(truth: np.ndarray, pred: np.ndarray, k: int) -> np.ndarray:
    w = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(truth, pred):
        w[t, p] += 1
    return w


def hungarian_map(truth_labels: np.ndarray, pred_labels: np.ndarray, k: int) -> np.ndarray:
    """Best bijection pi from predicted cluster ids onto truth ids.

    pi maximizes sum_i 1[pi(pred_i) == truth_i], solved as a linear
    assignment on the K x K contingency matrix.

    Returns
    -------
    ndarray of int, length K
        pi[pred_id] = truth_id.
    """
    truth = np.asarray(truth_labels, dtype=np.int64)
    pred = np.asarray(pred_labels, dtype=np.int64)
    if truth.shape != pred.shape:
        raise DataError("label vectors must have equal length")
    if truth.min(initial=0) < 0 or truth.max(initial=0) >= k:
        raise DataError("truth labels outside [0, K)")
    if pred.min(initial=0) < 0 or pred.max(initial=0) >= k:
        raise DataError("pred labels outside [0, K)")
    w = _contingency(truth, pred, k)
    # rows = truth ids, cols = pred ids; maximize matched mass
    row_ind, col_ind = linear_sum_assignment(w.max() - w)
    pi = np.empty(k, dtype=np.int64)
    pi[col_ind] = row_ind
    return pi


def relabel_truth(truth_labels: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Express truth labels in the predicted-cluster index space (pi^-1)."""
    inv = np.empty_like(pi)
    inv[pi] = np.arange(pi.shape[0])
    return inv[np.asarray(truth_labels, dtype=np.int64)]


def _entropy(counts: np.ndarray) -> float:
    n = counts.sum()
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def evaluate_clustering(pred_labels: np.ndarray, truth_labels: np.ndarray, k: int) -> dict:
    """External clustering metrics against ground truth.

    Returns
    -------
    dict
        acc: best-mapping accuracy (Hungarian); nmi: mutual information
        normalized by sqrt(H(pred) H(truth)), natural logs; ari: adjusted
        Rand index; degenerate: True when either labeling is single-class,
        in which case nmi is reported as 0.
    """
    pred = np.asarray(pred_labels, dtype=np.int64)
    truth = np.asarray(truth_labels, dtype=np.int64)
    if pred.shape != truth.shape:
        raise DataError("label vectors must have equal length")
    n = pred.shape[0]
    pi = hungarian_map(truth, pred, k)
    acc = float(np.mean(pi[pred] == truth))

    w = _contingency(truth, pred, k)
    row = w.sum(axis=1)
    col = w.sum(axis=0)
    h_truth = _entropy(row)
    h_pred = _entropy(col)
    degenerate = h_truth == 0.0 or h_pred == 0.0
    if degenerate:
        nmi = 0.0
    else:
        mask = w > 0
        nz = w[mask].astype(np.float64)
        outer = np.outer(row, col)[mask].astype(np.float64)
        mi = float(np.sum(nz / n * np.log(nz * n / outer)))
        nmi = mi / np.sqrt(h_truth * h_pred)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(w.astype(np.float64)).sum()
    sum_row = comb2(row.astype(np.float64)).sum()
    sum_col = comb2(col.astype(np.float64)).sum()
    expected = sum_row * sum_col / comb2(float(n)) if n >= 2 else 0.0
    denom = 0.5 * (sum_row + sum_col) - expected
    ari = 1.0 if denom == 0.0 else float((sum_ij - expected) / denom)

    return {"acc": acc, "nmi": float(nmi), "ari": ari, "degenerate": bool(degenerate)}


def build_cluster_graph(labels: np.ndarray, k: int) -> sp.csr_matrix:
    """Block matrix with a_ij = 1/|C_k| for co-members of cluster k.

    The diagonal is included (a_ii = 1/|C_k|), so each row of a block
    sums to 1. Used both for the predicted-label clustering graph and
    the ground-truth supervision graph.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise DataError("labels outside [0, K)")
    n = labels.shape[0]
    rows, cols, vals = [], [], []
    for c in range(k):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            continue
        weight = 1.0 / members.size
        grid_r, grid_c = np.meshgrid(members, members, indexing="ij")
        rows.append(grid_r.ravel())
        cols.append(grid_c.ravel())
        vals.append(np.full(members.size * members.size, weight))
    if not rows:
        return sp.csr_matrix((n, n), dtype=np.float64)
    out = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    out.sort_indices()
    return out
