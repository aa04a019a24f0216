"""Two-layer GCN auto-encoders and every loss/gradient pair they train on.

Architectures
-------------
gae   Z = A~ ReLU(A~ X W1) W2, inner-product decoder sigmoid(Z Z^T).
vgae  same trunk with mu / log-sigma heads and a reparameterized sample
      during training (Z = mu at evaluation).
dgae  gae trunk plus trainable cluster centers and a KL(Q||P) clustering
      loss over Student-t soft assignments.

All gradients are closed form (no autodiff); each one is verified against
central finite differences in the test suite. Pairwise reconstruction
terms are evaluated in row tiles so the N x N logit matrix is never fully
materialized on large graphs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .clustering import SoftAssignment
from .errors import (ConfigError, DataError, NumericsError, ShapeError,
                     StateError, TrainingError)
from .graphio import AttributedGraph, NormalizedAdjacency, normalize_adjacency
from .linalg import AdamState, adam_step

HIDDEN_DIM = 32
EMBED_DIM = 16

# row-tile budget: ~4M doubles (32 MB) per pairwise block
_TILE_DOUBLES = 4_000_000

VALID_ABLATIONS = (
    "none",
    "no_alpha1",
    "no_alpha2",
    "no_xi",
    "no_add_edge",
    "no_drop_edge",
    "no_upsilon",
    "fd_protection_single_step",
)


@dataclass
class TrainConfig:
    """Hyper-parameters shared by pretraining and the joint loop."""

    gamma: float = 0.001
    lr: float = 0.01
    pretrain_epochs: int = 200
    train_epochs: int = 200
    alpha1: float = 0.3
    alpha2: float | None = None  # defaults to alpha1 / 2
    m1: int = 20
    m2: int = 15
    seed: int = 0
    rethink: bool = False
    convergence_fraction: float = 0.9
    diag_stride: int = 1
    ablation: str = "none"

    def __post_init__(self):
        if not 0.0 <= self.alpha1 <= 1.0:
            raise ConfigError("alpha1 must lie in [0, 1]")
        if self.alpha2 is None:
            self.alpha2 = self.alpha1 / 2.0
        if self.alpha2 < 0.0:
            raise ConfigError("alpha2 must be >= 0")
        if self.m1 < 1 or self.m2 < 1:
            raise ConfigError("M1 and M2 must be >= 1")
        if self.gamma < 0.0:
            raise ConfigError("gamma must be >= 0")
        if not 0.0 < self.convergence_fraction <= 1.0:
            raise ConfigError("convergence_fraction must lie in (0, 1]")
        if self.diag_stride < 1:
            raise ConfigError("diag_stride must be >= 1")
        base = self.ablation.split(":")[0]
        if base == "fr_correction_delay":
            try:
                delay = int(self.ablation.split(":")[1])
            except (IndexError, ValueError) as exc:
                raise ConfigError("fr_correction_delay needs an integer epoch, e.g. "
                                  "'fr_correction_delay:30'") from exc
            if delay < 0:
                raise ConfigError("fr_correction_delay epoch must be >= 0")
        elif self.ablation not in VALID_ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}")

    @property
    def correction_delay(self) -> int:
        if self.ablation.startswith("fr_correction_delay:"):
            return int(self.ablation.split(":")[1])
        return 0


@dataclass
class LossBreakdown:
    """Total loss with its clustering/reconstruction components and, when
    the decomposition diagnostics ran, the Laplacian/remainder split."""

    l_total: float
    l_clus: float
    l_bce: float
    gamma: float
    l_C_self: float | None = None
    l_R_self: float | None = None
    l_C_clus: float | None = None


@dataclass
class GaeModel:
    """Weights, optimizer state, and rng of one auto-encoder instance."""

    arch: str
    weights: dict
    adam: AdamState
    seed: int
    rng: np.random.Generator
    centers: np.ndarray | None = None
    in_dim: int = 0

    def weight_ids(self) -> tuple:
        return tuple(id(self.weights[k]) for k in sorted(self.weights))


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_model(arch: str, in_dim: int, seed: int, lr: float = 0.01) -> GaeModel:
    """Glorot-initialized model; deterministic for a fixed seed."""
    if arch not in ("gae", "vgae", "dgae"):
        raise ConfigError(f"unknown arch {arch!r}")
    rng = np.random.default_rng(seed)
    weights = {"w1": _glorot(rng, in_dim, HIDDEN_DIM)}
    if arch == "vgae":
        weights["w2_mu"] = _glorot(rng, HIDDEN_DIM, EMBED_DIM)
        weights["w2_logstd"] = _glorot(rng, HIDDEN_DIM, EMBED_DIM)
    else:
        weights["w2"] = _glorot(rng, HIDDEN_DIM, EMBED_DIM)
    return GaeModel(arch=arch, weights=weights, adam=AdamState(lr=lr), seed=seed,
                    rng=rng, in_dim=in_dim)


def encode(model: GaeModel, a_prop: NormalizedAdjacency, x: np.ndarray, training: bool = False):
    """Forward pass Z = A~ ReLU(A~ X W1) W2.

    Returns (Z, caches); caches hold the intermediates backprop_theta
    needs and are invalidated by any weight update. For vgae, training
    mode draws a reparameterized sample Z = mu + sigma * eps from the
    model rng; evaluation mode returns mu.
    """
    if a_prop.mode != "propagation":
        raise StateError("encode expects the propagation-mode adjacency")
    a = a_prop.matrix
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != model.weights["w1"].shape[0]:
        raise ShapeError(f"feature dim {x.shape[1]} != W1 rows {model.weights['w1'].shape[0]}")
    p1 = a @ (x @ model.weights["w1"])
    h = np.maximum(p1, 0.0)
    caches = {"arch": model.arch, "a": a, "x": x, "p1": p1, "h": h,
              "weight_ids": model.weight_ids(), "training": training}
    if model.arch == "vgae":
        m2 = a @ h
        mu = m2 @ model.weights["w2_mu"]
        logstd = m2 @ model.weights["w2_logstd"]
        caches.update({"m2": m2, "mu": mu, "logstd": logstd})
        if training:
            eps = model.rng.standard_normal(mu.shape)
            z = mu + np.exp(logstd) * eps
            caches["eps"] = eps
        else:
            z = mu
        if not np.all(np.isfinite(z)) or not np.all(np.isfinite(logstd)):
            raise NumericsError("encode produced non-finite activations")
        return z, caches
    m2 = a @ h
    z = m2 @ model.weights["w2"]
    caches["m2"] = m2
    if not np.all(np.isfinite(z)):
        raise NumericsError("encode produced non-finite activations")
    return z, caches


def backprop_theta(model: GaeModel, caches: dict, grad_z: np.ndarray,
                   grad_mu_extra: np.ndarray | None = None,
                   grad_logstd_extra: np.ndarray | None = None) -> dict:
    """Chain rule from dL/dZ back to the encoder weights.

    grad_mu_extra / grad_logstd_extra carry loss terms that hit the
    variational heads directly (the Gaussian prior KL).

    Raises StateError when the caches were built against different
    weights than the model currently holds.
    """
    if caches["weight_ids"] != model.weight_ids():
        raise StateError("stale caches: weights changed since encode")
    a = caches["a"]
    grads = {}
    if model.arch == "vgae":
        d_mu = np.array(grad_z, dtype=np.float64)
        if caches["training"]:
            sigma = np.exp(caches["logstd"])
            d_logstd = grad_z * caches["eps"] * sigma
        else:
            d_logstd = np.zeros_like(caches["logstd"])
        if grad_mu_extra is not None:
            d_mu += grad_mu_extra
        if grad_logstd_extra is not None:
            d_logstd = d_logstd + grad_logstd_extra
        m2 = caches["m2"]
        grads["w2_mu"] = m2.T @ d_mu
        grads["w2_logstd"] = m2.T @ d_logstd
        d_m2 = d_mu @ model.weights["w2_mu"].T + d_logstd @ model.weights["w2_logstd"].T
    else:
        m2 = caches["m2"]
        grads["w2"] = m2.T @ grad_z
        d_m2 = grad_z @ model.weights["w2"].T
    d_h = a.T @ d_m2
    d_p1 = d_h * (caches["p1"] > 0.0)
    grads["w1"] = caches["x"].T @ (a.T @ d_p1)
    return grads


def flatten_theta(arrays: dict) -> np.ndarray:
    """Deterministic flattening (sorted keys) of a weight/gradient dict."""
    return np.concatenate([np.asarray(arrays[k], dtype=np.float64).ravel()
                           for k in sorted(arrays)])


def _row_tiles(n: int):
    tile = max(1, min(n, _TILE_DOUBLES // max(1, n)))
    for start in range(0, n, tile):
        yield slice(start, min(start + tile, n))


def _check_target(a_target: sp.spmatrix, n: int) -> sp.csr_matrix:
    a = a_target.tocsr()
    if a.shape != (n, n):
        raise ShapeError(f"target shape {a.shape} does not match Z rows {n}")
    return a


def recon_loss(z: np.ndarray, a_target: sp.spmatrix, weighting: str = "plain") -> float:
    """Binary cross-entropy between sigmoid(Z Z^T) and a binary target.

    weighting "plain" is the unweighted sum over all N^2 ordered pairs
    (the form every decomposition identity is stated in). "pos_weighted"
    is the mean BCE with positive-class weight (N^2-2E)/(2E) and global
    scale N^2/(2(N^2-2E)), the loss used for training.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    a = _check_target(a_target, n)
    if weighting == "plain":
        total = 0.0
        for rows in _row_tiles(n):
            logits = z[rows] @ z.T
            total += float(np.logaddexp(0.0, logits).sum())
        coo = a.tocoo()
        pos_logits = np.einsum("ed,ed->e", z[coo.row], z[coo.col])
        return total - float(pos_logits.sum())
    if weighting == "pos_weighted":
        two_e = a.nnz
        if two_e == 0 or two_e >= n * n:
            raise DataError("pos_weighted needs 0 < edges < all pairs")
        w = (n * n - two_e) / two_e
        norm = n * n / (2.0 * (n * n - two_e))
        total = 0.0
        for rows in _row_tiles(n):
            logits = z[rows] @ z.T
            arow = a[rows].toarray()
            # w*a*softplus(-l) + (1-a)*softplus(l)
            total += float((w * arow * np.logaddexp(0.0, -logits)
                            + (1.0 - arow) * np.logaddexp(0.0, logits)).sum())
        return norm * total / (n * n)
    raise DataError(f"unknown weighting {weighting!r}")


def recon_grad_z(z: np.ndarray, a_target: sp.spmatrix, weighting: str = "plain") -> np.ndarray:
    """Exact gradient of recon_loss w.r.t. Z.

    Accumulates both index roles of each row (z_i appears as z_i^T z_j
    and z_j^T z_i), which doubles the single-sum printed gradient form
    on symmetric inputs; verified against finite differences.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    a = _check_target(a_target, n)
    if weighting == "pos_weighted":
        two_e = a.nnz
        if two_e == 0 or two_e >= n * n:
            raise DataError("pos_weighted needs 0 < edges < all pairs")
        w = (n * n - two_e) / two_e
        scale = n * n / (2.0 * (n * n - two_e)) / (n * n)
    elif weighting != "plain":
        raise DataError(f"unknown weighting {weighting!r}")
    grad = np.zeros_like(z)
    for rows in _row_tiles(n):
        logits = z[rows] @ z.T
        arow = a[rows].toarray()
        sig = expit(logits)
        if weighting == "plain":
            g = sig - arow
        else:
            g = scale * (sig * (1.0 + (w - 1.0) * arow) - w * arow)
        grad[rows] += g @ z
        grad += g.T @ z[rows]
    return grad


def laplacian_quadratic(z: np.ndarray, a_any: sp.spmatrix) -> float:
    """L_C(Z, A) = 1/2 sum_ij a_ij ||z_i - z_j||^2 for any weighted A."""
    z = np.asarray(z, dtype=np.float64)
    a = a_any.tocsr()
    if a.shape[0] != z.shape[0]:
        raise ShapeError("adjacency and Z disagree on N")
    row_sums = np.asarray(a.sum(axis=1)).ravel()
    col_sums = np.asarray(a.sum(axis=0)).ravel()
    sq = np.einsum("nd,nd->n", z, z)
    cross = float(np.einsum("nd,nd->", z, a @ z))
    return float(0.5 * (row_sums @ sq + col_sums @ sq) - cross)


def regularizer_R(z: np.ndarray, a_self: sp.spmatrix) -> float:
    """L_R(Z, A) = sum_ij log(1+exp(z_i.z_j)) - 1/2 a_ij(||z_i||^2+||z_j||^2)."""
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    a = _check_target(a_self, n)
    total = 0.0
    for rows in _row_tiles(n):
        total += float(np.logaddexp(0.0, z[rows] @ z.T).sum())
    row_sums = np.asarray(a.sum(axis=1)).ravel()
    col_sums = np.asarray(a.sum(axis=0)).ravel()
    sq = np.einsum("nd,nd->n", z, z)
    return total - float(0.5 * (row_sums @ sq + col_sums @ sq))


def kmeans_embed_loss(z: np.ndarray, a_clus: sp.spmatrix) -> float:
    """Embedded k-means loss in its Laplacian form L_C(Z, A_clus)."""
    return laplacian_quadratic(z, a_clus)


def kmeans_grad_z(z: np.ndarray, a_clus: sp.spmatrix) -> np.ndarray:
    """Exact gradient of kmeans_embed_loss (both pair roles accumulated)."""
    z = np.asarray(z, dtype=np.float64)
    a = a_clus.tocsr()
    row_sums = np.asarray(a.sum(axis=1)).ravel()
    col_sums = np.asarray(a.sum(axis=0)).ravel()
    return (row_sums + col_sums)[:, None] * z - (a @ z) - (a.T @ z)


def centroid_kmeans_loss(z: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Independent centroid-form k-means objective sum_k sum_{i in C_k} ||z_i - mu_k||^2."""
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    total = 0.0
    for c in range(k):
        members = z[labels == c]
        if members.shape[0]:
            total += float(np.sum((members - members.mean(axis=0)) ** 2))
    return total


def dgae_clus_loss(p: SoftAssignment, q: SoftAssignment, z: np.ndarray,
                   centers: np.ndarray, rows: np.ndarray | None = None):
    """KL(Q||P) with the gradient through the Student-t kernel.

    Parameters
    ----------
    p, q : SoftAssignment
        Soft assignment P and its frozen hard target Q. The loss value
        uses P as passed; the gradients assume P = student_t(z, centers),
        which holds everywhere the training loop calls this.
    rows : ndarray of int, optional
        Restrict the divergence (and its gradients) to these rows.

    Returns
    -------
    (loss, grad_z, grad_centers, clamped)
        clamped flags rows where p had to be floored at 1e-12 under a
        positive q entry.
    """
    z = np.asarray(z, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    pm, qm = p.matrix, q.matrix
    if pm.shape != qm.shape:
        raise ShapeError("P and Q shapes differ")
    idx = np.arange(pm.shape[0]) if rows is None else np.asarray(rows, dtype=np.int64)
    p_sel = pm[idx]
    q_sel = qm[idx]
    clamped = bool(np.any((q_sel > 0.0) & (p_sel < 1e-12)))
    p_safe = np.maximum(p_sel, 1e-12)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q_sel > 0.0, q_sel * (np.log(np.maximum(q_sel, 1e-300)) - np.log(p_safe)), 0.0)
    loss = float(terms.sum())

    # d/dz_i KL = 2 sum_k s_ik (q_ik - p_ik) (z_i - mu_k), s = (1+d^2)^-1
    diff = z[idx][:, None, :] - centers[None, :, :]
    s = 1.0 / (1.0 + np.einsum("nkd,nkd->nk", diff, diff))
    p_kernel = s / s.sum(axis=1, keepdims=True)
    coeff = 2.0 * s * (q_sel - p_kernel)
    grad_rows = np.einsum("nk,nkd->nd", coeff, diff)
    grad_z = np.zeros_like(z)
    grad_z[idx] = grad_rows
    grad_centers = -np.einsum("nk,nkd->kd", coeff, diff)
    return loss, grad_z, grad_centers, clamped


def vgae_kl_prior(mu: np.ndarray, logstd: np.ndarray):
    """Gaussian prior KL averaged by 1/N, with gradients for both heads.

    Per node and dimension the term is 0.5 (mu^2 + sigma^2 - 1 - log sigma^2).
    """
    mu = np.asarray(mu, dtype=np.float64)
    logstd = np.asarray(logstd, dtype=np.float64)
    n = mu.shape[0]
    sigma_sq = np.exp(2.0 * logstd)
    loss = float(0.5 * np.sum(mu * mu + sigma_sq - 1.0 - 2.0 * logstd) / n)
    return loss, mu / n, (sigma_sq - 1.0) / n


def vgae_loss_terms(model: GaeModel, graph: AttributedGraph, a_prop: NormalizedAdjacency | None = None) -> dict:
    """One training-mode forward pass returning {recon, kl_prior}."""
    if model.arch != "vgae":
        raise StateError("vgae_loss_terms requires arch == vgae")
    if a_prop is None:
        a_prop = normalize_adjacency(graph, "propagation")
    z, caches = encode(model, a_prop, graph.features, training=True)
    recon = recon_loss(z, graph.adjacency, weighting="pos_weighted")
    kl, _, _ = vgae_kl_prior(caches["mu"], caches["logstd"])
    return {"recon": recon, "kl_prior": kl}


def reconstruction_step(model: GaeModel, a_prop: NormalizedAdjacency, x: np.ndarray,
                        a_target: sp.spmatrix) -> float:
    """One full-batch Adam step on the pos-weighted reconstruction loss.

    Shared by pretraining and the first-group (gae/vgae) joint loop;
    returns the loss value before the update.
    """
    training = model.arch == "vgae"
    z, caches = encode(model, a_prop, x, training=training)
    loss = recon_loss(z, a_target, weighting="pos_weighted")
    grad_z = recon_grad_z(z, a_target, weighting="pos_weighted")
    if model.arch == "vgae":
        kl, d_mu, d_logstd = vgae_kl_prior(caches["mu"], caches["logstd"])
        loss += kl
        grads = backprop_theta(model, caches, grad_z, d_mu, d_logstd)
    else:
        grads = backprop_theta(model, caches, grad_z)
    if not np.isfinite(loss):
        raise TrainingError("reconstruction loss diverged (non-finite)")
    model.weights = adam_step(model.adam, model.weights, grads)
    return loss


def pretrain(model: GaeModel, graph: AttributedGraph, cfg: TrainConfig) -> GaeModel:
    """Full-batch reconstruction pretraining for cfg.pretrain_epochs."""
    a_prop = normalize_adjacency(graph, "propagation")
    for _ in range(cfg.pretrain_epochs):
        reconstruction_step(model, a_prop, graph.features, graph.adjacency)
    return model


CHECKPOINT_VERSION = 1


def save_checkpoint(model: GaeModel, path) -> None:
    """Serialize a model to JSON (see README for the exact layout).

    Doubles are written with repr-precision floats, which round-trip
    bitwise for all finite values.
    """
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "arch": model.arch,
        "in_dim": model.in_dim,
        "seed": model.seed,
        "shapes": {k: list(v.shape) for k, v in sorted(model.weights.items())},
        "weights": {k: v.ravel().tolist() for k, v in sorted(model.weights.items())},
        "adam": {
            "lr": model.adam.lr,
            "beta1": model.adam.beta1,
            "beta2": model.adam.beta2,
            "eps": model.adam.eps,
            "step_count": model.adam.step_count,
            "shapes": {k: list(v.shape) for k, v in sorted(model.adam.m.items())},
            "m": {k: v.ravel().tolist() for k, v in sorted(model.adam.m.items())},
            "v": {k: v.ravel().tolist() for k, v in sorted(model.adam.v.items())},
        },
        "centers": None if model.centers is None else model.centers.tolist(),
        "rng_state": json.loads(json.dumps(model.rng.bit_generator.state)),
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload))
    tmp.replace(path)


def load_checkpoint(path) -> GaeModel:
    """Inverse of save_checkpoint; restores weights, Adam state, and rng."""
    payload = json.loads(Path(path).read_text())
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise StateError(f"unsupported checkpoint version {payload.get('format_version')!r}")
    shapes = payload["shapes"]
    weights = {k: np.array(payload["weights"][k], dtype=np.float64).reshape(shapes[k])
               for k in shapes}
    adam = AdamState(lr=payload["adam"]["lr"], beta1=payload["adam"]["beta1"],
                     beta2=payload["adam"]["beta2"], eps=payload["adam"]["eps"],
                     step_count=payload["adam"]["step_count"])
    buf_shapes = payload["adam"]["shapes"]
    adam.m = {k: np.array(v, dtype=np.float64).reshape(buf_shapes[k])
              for k, v in payload["adam"]["m"].items()}
    adam.v = {k: np.array(v, dtype=np.float64).reshape(buf_shapes[k])
              for k, v in payload["adam"]["v"].items()}
    rng = np.random.default_rng(payload["seed"])
    rng.bit_generator.state = payload["rng_state"]
    centers = payload["centers"]
    return GaeModel(arch=payload["arch"], weights=weights, adam=adam,
                    seed=payload["seed"], rng=rng,
                    centers=None if centers is None else np.array(centers, dtype=np.float64),
                    in_dim=payload["in_dim"])
