"""Gradient-alignment metrics, identity residuals, and run traces.

Two global cosines track the health of pseudo-supervised training:

* lambda_fr compares the clustering-loss parameter gradient under the
  model's own (pseudo-label) targets against the gradient under
  ground-truth targets. Low values mean the pseudo-supervision pulls the
  encoder away from where real supervision would.
* lambda_fd does the same for the reconstruction loss: current
  self-supervision graph versus the ground-truth-rewired target graph.

Both use the plain (unweighted) loss forms so they stay anchored to the
decomposition identities checked by decomposition_residuals.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .clustering import (SoftAssignment, build_cluster_graph, evaluate_clustering,
                         hard_target, hungarian_map, onehot_assignment, relabel_truth)
from .errors import DataError, ShapeError, StateError
from .graphio import AttributedGraph, NormalizedAdjacency, normalize_adjacency
from .linalg import Cosine, cosine
from .models import (GaeModel, backprop_theta, centroid_kmeans_loss, dgae_clus_loss,
                     encode, flatten_theta, kmeans_embed_loss, kmeans_grad_z,
                     laplacian_quadratic, recon_grad_z, recon_loss, regularizer_R)
from .operators import ReliableSet, SelfSupervisionGraph


def _subset_cluster_graph(labels: np.ndarray, subset: np.ndarray, k: int, n: int) -> sp.csr_matrix:
    """Cluster graph restricted to a node subset, embedded in N x N."""
    sub = build_cluster_graph(labels[subset], k).tocoo()
    return sp.csr_matrix((sub.data, (subset[sub.row], subset[sub.col])), shape=(n, n))


def _clustering_theta_grad(model: GaeModel, z: np.ndarray, caches: dict,
                           p: SoftAssignment, target_labels: np.ndarray | None,
                           rows: np.ndarray | None, k: int) -> np.ndarray:
    """Flattened encoder gradient of the clustering loss the arch trains.

    target_labels None means "use p's own hard target" (the pseudo
    side); otherwise the loss is evaluated against the given labels
    (the supervised side). rows restricts the loss to a node subset.
    """
    n = z.shape[0]
    if model.arch == "dgae":
        if model.centers is None:
            raise StateError("dgae model has no cluster centers yet")
        if target_labels is None:
            q = hard_target(p)
        else:
            q = onehot_assignment(target_labels, k)
        _, grad_z, _, _ = dgae_clus_loss(p, q, z, model.centers, rows=rows)
    else:
        labels = p.labels() if target_labels is None else np.asarray(target_labels)
        if rows is None:
            a_clus = build_cluster_graph(labels, k)
        else:
            a_clus = _subset_cluster_graph(labels, rows, k, n)
        grad_z = kmeans_grad_z(z, a_clus)
    return flatten_theta(backprop_theta(model, caches, grad_z))


def lambda_fr(model: GaeModel, graph: AttributedGraph, p_pseudo: SoftAssignment,
              labels: np.ndarray | None = None, omega: ReliableSet | None = None,
              a_prop: NormalizedAdjacency | None = None) -> Cosine:
    """Cosine between pseudo-supervised and supervised clustering gradients.

    The pseudo side uses the assignments the model actually trains on,
    restricted to the reliable set when one is given; the supervised side
    uses Hungarian-mapped ground truth over all nodes.
    """
    labels = graph.labels if labels is None else np.asarray(labels, dtype=np.int64)
    if labels is None:
        raise DataError("lambda_fr needs ground-truth labels")
    if a_prop is None:
        a_prop = normalize_adjacency(graph, "propagation")
    k = graph.k_clusters
    z, caches = encode(model, a_prop, graph.features, training=False)
    pi = hungarian_map(labels, p_pseudo.labels(), k)
    q_prime_labels = relabel_truth(labels, pi)
    rows = None if omega is None else omega.omega
    g_pseudo = _clustering_theta_grad(model, z, caches, p_pseudo, None, rows, k)
    g_sup = _clustering_theta_grad(model, z, caches, p_pseudo, q_prime_labels, None, k)
    return cosine(g_pseudo, g_sup)


def lambda_fd(model: GaeModel, graph: AttributedGraph, a_cs: SelfSupervisionGraph,
              a_sup_target: SelfSupervisionGraph,
              a_prop: NormalizedAdjacency | None = None) -> Cosine:
    """Cosine between the reconstruction gradients toward the current
    self-supervision graph and toward the supervised target graph."""
    if a_prop is None:
        a_prop = normalize_adjacency(graph, "propagation")
    z, caches = encode(model, a_prop, graph.features, training=False)
    g_cs = flatten_theta(backprop_theta(model, caches, recon_grad_z(z, a_cs.adjacency)))
    g_sup = flatten_theta(backprop_theta(model, caches, recon_grad_z(z, a_sup_target.adjacency)))
    return cosine(g_cs, g_sup)


def _pointwise_clus_grad(z: np.ndarray, i: int, a: sp.spmatrix) -> np.ndarray:
    """Single-sum row gradient sum_j a_ij (z_i - z_j)."""
    row = a.getrow(i)
    return float(row.sum()) * z[i] - (row @ z).ravel()


def lambda_prime_fr(z: np.ndarray, i: int, a_clus: sp.spmatrix, a_sup: sp.spmatrix) -> float:
    """Pointwise inner product of clustering-vs-supervised row gradients."""
    z = np.asarray(z, dtype=np.float64)
    return float(np.dot(_pointwise_clus_grad(z, i, a_clus), _pointwise_clus_grad(z, i, a_sup)))


def lambda_prime_fd(z: np.ndarray, i: int, a_self_norm: sp.spmatrix, a_sup: sp.spmatrix) -> float:
    """Pointwise inner product of self-supervised-vs-supervised row gradients."""
    return lambda_prime_fr(z, i, a_self_norm, a_sup)


def filter_impact(x: np.ndarray, i: int, a_self_norm: sp.spmatrix, a_sup: sp.spmatrix) -> float:
    """How much one neighborhood aggregation moves x_i toward its
    supervised aggregate: ||x_i - h_sup|| - ||h_self - h_sup||."""
    x = np.asarray(x, dtype=np.float64)
    h_sup = (a_sup.getrow(i) @ x).ravel()
    h_self = (a_self_norm.getrow(i) @ x).ravel()
    return float(np.linalg.norm(x[i] - h_sup) - np.linalg.norm(h_self - h_sup))


def decomposition_residuals(z: np.ndarray, a_self: sp.spmatrix,
                            labels_pred: np.ndarray, gamma: float,
                            k: int | None = None) -> dict:
    """Relative residuals of the three loss identities, each computed
    from two independent code paths.

    prop1: plain pairwise BCE == Laplacian quadratic + remainder.
    prop2: Laplacian form of the cluster graph == centroid k-means.
    thm1:  clustering + gamma * BCE == combined-graph Laplacian + remainder.
    """
    z = np.asarray(z, dtype=np.float64)
    labels_pred = np.asarray(labels_pred, dtype=np.int64)
    if k is None:
        k = int(labels_pred.max()) + 1
    a = a_self.tocsr()

    bce = recon_loss(z, a, weighting="plain")
    split = laplacian_quadratic(z, a) + regularizer_R(z, a)
    prop1 = abs(bce - split) / (1.0 + abs(bce))

    a_clus = build_cluster_graph(labels_pred, k)
    lap_form = kmeans_embed_loss(z, a_clus)
    centroid_form = centroid_kmeans_loss(z, labels_pred, k)
    prop2 = abs(lap_form - centroid_form) / (1.0 + abs(centroid_form))

    lhs = centroid_form + gamma * bce
    combined = (a_clus + gamma * a).tocsr()
    rhs = laplacian_quadratic(z, combined) + gamma * regularizer_R(z, a)
    thm1 = abs(lhs - rhs) / (1.0 + abs(lhs))

    return {"prop1_rel": float(prop1), "prop2_rel": float(prop2), "thm1_rel": float(thm1)}


def graph_evolution_stats(a_original: sp.spmatrix, a_cs: SelfSupervisionGraph,
                          labels: np.ndarray) -> dict:
    """True/false link counts of the evolved graph, split by provenance."""
    labels = np.asarray(labels, dtype=np.int64)

    def split(pairs) -> tuple:
        if len(pairs) == 0:
            return 0, 0
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        same = labels[pairs[:, 0]] == labels[pairs[:, 1]]
        return int(same.sum()), int((~same).sum())

    coo = sp.triu(a_cs.adjacency, k=1).tocoo()
    edges = np.stack([coo.row, coo.col], axis=1)
    links_true, links_false = split(edges)
    added_true, added_false = split(a_cs.added_edges)
    deleted_true, deleted_false = split(a_cs.deleted_edges)
    return {
        "links_total": int(edges.shape[0]),
        "links_true": links_true,
        "links_false": links_false,
        "links_added_true": added_true,
        "links_added_false": added_false,
        "links_deleted_true": deleted_true,
        "links_deleted_false": deleted_false,
    }


@dataclass(frozen=True)
class CumulativeDifference:
    """Prefix sums of (a - b), scaled into [-1, 1] by the largest
    absolute prefix sum."""

    series: np.ndarray


def cumulative_difference(series_a, series_b) -> CumulativeDifference:
    a = np.asarray(series_a, dtype=np.float64)
    b = np.asarray(series_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("series lengths differ")
    prefix = np.cumsum(a - b)
    peak = np.max(np.abs(prefix)) if prefix.size else 0.0
    if peak == 0.0:
        return CumulativeDifference(np.zeros_like(prefix))
    return CumulativeDifference(prefix / peak)


TRACE_COLUMNS = (
    "epoch", "lambda_fr", "lambda_fr_degenerate", "lambda_fr_baseline",
    "lambda_fd", "lambda_fd_degenerate", "lambda_fd_baseline",
    "omega_size", "acc_all", "acc_omega", "acc_complement", "nmi", "ari",
    "links_total", "links_true", "links_false",
    "links_added_true", "links_added_false",
    "links_deleted_true", "links_deleted_false",
    "l_total", "l_clus", "l_bce", "l_C_self", "l_R_self", "l_C_clus",
    "gamma", "wall_time",
)


@dataclass
class DiagnosticTrace:
    """Per-epoch training record with a fixed CSV column order."""

    rows: list = field(default_factory=list)

    def append(self, **kwargs) -> None:
        unknown = set(kwargs) - set(TRACE_COLUMNS)
        if unknown:
            raise DataError(f"unknown trace columns: {sorted(unknown)}")
        self.rows.append({col: kwargs.get(col) for col in TRACE_COLUMNS})

    def column(self, name: str) -> list:
        if name not in TRACE_COLUMNS:
            raise DataError(f"unknown trace column {name!r}")
        return [row[name] for row in self.rows]

    def to_csv(self, path) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for row in self.rows:
                writer.writerow(["" if row[c] is None else row[c] for c in TRACE_COLUMNS])
        tmp.replace(path)

    def summary(self) -> dict:
        """Final-epoch snapshot plus series extremes, for results.json."""
        if not self.rows:
            return {"epochs": 0}
        last = self.rows[-1]
        acc_series = [r["acc_all"] for r in self.rows if r["acc_all"] is not None]
        return {
            "epochs": len(self.rows),
            "final_acc": last["acc_all"],
            "final_nmi": last["nmi"],
            "final_ari": last["ari"],
            "best_epoch_acc": max(acc_series) if acc_series else None,
            "final_omega_size": last["omega_size"],
            "final_links_total": last["links_total"],
        }

    def to_json(self, path) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(self.summary(), indent=2) + "\n")
        tmp.replace(path)
