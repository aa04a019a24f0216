"""Experiment harness: multi-seed runs, ablation grids, robustness pairs.

One run = (pretrain or reuse a shared checkpoint) + clustering phase, per
seed. Baseline/rethink pairs share pretraining weights through the
checkpoint files, and robustness cells share the perturbed graph, which
is what makes the paired comparisons meaningful. Everything lands in the
output directory as results.json, per-seed trace CSVs, evolved edge
lists, and checkpoints; files are written atomically.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .clustering import build_cluster_graph, hard_target, student_t_assign
from .diagnostics import decomposition_residuals
from .errors import ConfigError, StateError
from .graphio import (AttributedGraph, load_dataset, normalize_adjacency,
                      perturb_graph)
from .linalg import finite_diff_grad
from .models import (TrainConfig, dgae_clus_loss, encode, init_model,
                     kmeans_embed_loss, kmeans_grad_z, load_checkpoint, pretrain,
                     recon_grad_z, recon_loss, save_checkpoint, vgae_kl_prior)
from .operators import save_edge_list
from .training import train_joint

RESULTS_SCHEMA = "gaeclust/results/v1"
GRID_SCHEMA = "gaeclust/ablation-grid/v1"
ROBUSTNESS_SCHEMA = "gaeclust/robustness/v1"

VALID_MODELS = ("gae", "vgae", "dgae")


@dataclass
class ExperimentConfig:
    """Flat run description; JSON-serializable, CLI flags override file keys."""

    dataset: str
    model: str = "dgae"
    rethink: bool = False
    out: str = "runs"
    pretrain_ckpt: str | None = None
    seeds: tuple = (0, 1, 2)
    perturbation: dict | None = None
    gamma: float = 0.001
    lr: float = 0.01
    pretrain_epochs: int = 200
    train_epochs: int = 200
    alpha1: float = 0.3
    alpha2: float | None = None
    m1: int = 20
    m2: int = 15
    convergence_fraction: float = 0.9
    diag_stride: int = 1
    ablation: str = "none"

    def __post_init__(self):
        if self.model not in VALID_MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {VALID_MODELS}")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not self.rethink and self.ablation != "none":
            raise ConfigError(f"ablation {self.ablation!r} needs rethink=true")
        if self.perturbation is not None:
            missing = {"kind", "amount"} - set(self.perturbation)
            if missing:
                raise ConfigError(f"perturbation spec missing keys: {sorted(missing)}")
        # validate the TrainConfig fields eagerly so bad configs fail here
        self.train_config(self.seeds[0])

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(gamma=self.gamma, lr=self.lr,
                           pretrain_epochs=self.pretrain_epochs,
                           train_epochs=self.train_epochs,
                           alpha1=self.alpha1, alpha2=self.alpha2,
                           m1=self.m1, m2=self.m2, seed=seed,
                           rethink=self.rethink,
                           convergence_fraction=self.convergence_fraction,
                           diag_stride=self.diag_stride,
                           ablation=self.ablation)

    def run_tag(self, seed: int) -> str:
        parts = [self.model]
        if self.rethink:
            parts.append("r")
        if self.ablation != "none":
            parts.append(self.ablation.replace(":", "-"))
        parts.append(f"seed{seed}")
        return "_".join(parts)

    def pretrain_name(self, seed: int, perturbation_hash: str | None) -> str:
        tag = f"_p{perturbation_hash[:8]}" if perturbation_hash else ""
        return f"pretrain_{self.model}{tag}_seed{seed}.json"

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        """Load a flat JSON config; non-None override values win."""
        raw = json.loads(Path(path).read_text())
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        merged = dict(raw)
        for key, value in (overrides or {}).items():
            if value is not None:
                if key not in known:
                    raise ConfigError(f"unknown config key {key!r}")
                merged[key] = value
        if "dataset" not in merged:
            raise ConfigError("config needs a dataset path")
        return cls(**merged)


@dataclass
class RunResult:
    """The results.json payload plus where it was written."""

    data: dict
    path: str

    @property
    def per_seed(self) -> list:
        return self.data["per_seed"]

    @property
    def best(self) -> dict | None:
        return self.data["best"]

    @property
    def mean(self) -> dict | None:
        return self.data["mean"]

    @property
    def std(self) -> dict | None:
        return self.data["std"]


def write_json_atomic(path, obj) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2) + "\n")
    tmp.replace(path)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def graph_hash(graph: AttributedGraph) -> str:
    """Content hash over nodes, edges, features, and labels."""
    h = hashlib.sha256()
    h.update(np.int64(graph.n_nodes).tobytes())
    h.update(graph.edge_array().tobytes())
    h.update(np.ascontiguousarray(graph.features, dtype=np.float64).tobytes())
    if graph.labels is None:
        h.update(b"no-labels")
    else:
        h.update(np.ascontiguousarray(graph.labels, dtype=np.int64).tobytes())
    h.update(np.int64(graph.k_clusters).tobytes())
    return h.hexdigest()


def _prepare_graph(config: ExperimentConfig, graph: AttributedGraph | None):
    if graph is None:
        graph = load_dataset(config.dataset)
    p_hash = None
    if config.perturbation is not None:
        spec = dict(config.perturbation)
        spec.setdefault("seed", 0)
        graph = perturb_graph(graph, spec["kind"], spec["amount"], spec["seed"])
        p_hash = graph_hash(graph)
    return graph, p_hash


def _pretrained_model(config: ExperimentConfig, graph: AttributedGraph,
                      seed: int, ckpt_dir: Path, p_hash: str | None):
    """Load the shared pretraining checkpoint or create it."""
    path = ckpt_dir / config.pretrain_name(seed, p_hash)
    if path.exists():
        model = load_checkpoint(path)
        if model.arch != config.model:
            raise StateError(f"{path} holds a {model.arch} model, expected {config.model}")
        if model.in_dim != graph.features.shape[1]:
            raise StateError(f"{path} expects {model.in_dim} input features, "
                             f"dataset has {graph.features.shape[1]}")
    else:
        cfg = config.train_config(seed)
        model = init_model(config.model, graph.features.shape[1], seed, lr=cfg.lr)
        pretrain(model, graph, cfg)
        save_checkpoint(model, path)
    return model, path


def pretrain_only(config: ExperimentConfig, graph: AttributedGraph | None = None) -> dict:
    """Create (or reuse) the pretraining checkpoints for every seed."""
    graph, p_hash = _prepare_graph(config, graph)
    ckpt_dir = Path(config.pretrain_ckpt) if config.pretrain_ckpt else Path(config.out)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for seed in config.seeds:
        t0 = time.perf_counter()
        _, path = _pretrained_model(config, graph, seed, ckpt_dir, p_hash)
        entries.append({"seed": seed, "checkpoint": str(path),
                        "sha256": sha256_file(path),
                        "wall_time_s": time.perf_counter() - t0})
    manifest = {"schema": RESULTS_SCHEMA, "mode": "pretrain",
                "config": config.to_dict(),
                "perturbation_sha256": p_hash, "checkpoints": entries}
    write_json_atomic(ckpt_dir / f"pretrain_manifest_{config.model}.json", manifest)
    return manifest


def _aggregate(per_seed: list) -> tuple:
    scored = [e for e in per_seed if e["acc"] is not None]
    if not scored:
        return None, None, None
    best = max(scored, key=lambda e: (e["acc"], e["nmi"], e["ari"]))
    best = {"seed": best["seed"], "acc": best["acc"], "nmi": best["nmi"], "ari": best["ari"]}
    mean = {m: float(np.mean([e[m] for e in scored])) for m in ("acc", "nmi", "ari")}
    std = {m: float(np.std([e[m] for e in scored])) for m in ("acc", "nmi", "ari")}
    return best, mean, std


def run(config: ExperimentConfig, graph: AttributedGraph | None = None) -> RunResult:
    """Pretrain (or reuse checkpoints) and run the clustering phase per seed."""
    graph, p_hash = _prepare_graph(config, graph)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = Path(config.pretrain_ckpt) if config.pretrain_ckpt else out
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    a_prop = normalize_adjacency(graph, "propagation")

    per_seed = []
    for seed in config.seeds:
        model, pre_path = _pretrained_model(config, graph, seed, ckpt_dir, p_hash)
        cfg = config.train_config(seed)
        model, trace, info = train_joint(model, graph, cfg, a_prop=a_prop)
        tag = config.run_tag(seed)
        trace_csv = out / f"trace_{tag}.csv"
        trace.to_csv(trace_csv)
        trace.to_json(out / f"trace_{tag}.json")
        edges_tsv = out / f"edges_{tag}.tsv"
        save_edge_list(info["self_supervision"], edges_tsv)
        final_ckpt = out / f"model_{tag}.json"
        save_checkpoint(model, final_ckpt)
        metrics = info["metrics"] or {}
        per_seed.append({
            "seed": seed,
            "acc": metrics.get("acc"),
            "nmi": metrics.get("nmi"),
            "ari": metrics.get("ari"),
            "wall_time_s": info["wall_time_s"],
            "stop_reason": info["stop_reason"],
            "epochs_run": info["epochs_run"],
            "omega_final": int(info["omega"].size),
            "omega_sizes": info["omega_sizes"],
            "empty_omega_epochs": info["empty_omega_epochs"],
            "pretrain_checkpoint": str(pre_path),
            "pretrain_sha256": sha256_file(pre_path),
            "perturbation_sha256": p_hash,
            "trace_csv": str(trace_csv),
            "edge_list": str(edges_tsv),
            "checkpoint": str(final_ckpt),
        })

    best, mean, std = _aggregate(per_seed)
    payload = {
        "schema": RESULTS_SCHEMA,
        "mode": "cluster",
        "config": config.to_dict(),
        "dataset": {"name": graph.name, "n_nodes": graph.n_nodes,
                    "n_edges": graph.n_edges, "k_clusters": graph.k_clusters,
                    "has_labels": graph.labels is not None},
        "per_seed": per_seed,
        "best": best,
        "mean": mean,
        "std": std,
    }
    results_path = out / "results.json"
    write_json_atomic(results_path, payload)
    return RunResult(payload, str(results_path))


def _cell_tag(name: str) -> str:
    return name.replace(":", "-")


def run_ablation_grid(base: ExperimentConfig, axes: list) -> dict:
    """Run one rethink cell per ablation name, sharing pretraining.

    Every cell runs with rethink=True (the grid compares the full
    rewiring loop against its ablations); checkpoints are shared through
    a common pretrain directory.
    """
    if not axes:
        raise ConfigError("ablation axes must be non-empty")
    base_out = Path(base.out)
    ckpt_dir = base.pretrain_ckpt or str(base_out / "pretrain")
    cells = {}
    for name in axes:
        cell = dataclasses.replace(base, rethink=True, ablation=name,
                                   out=str(base_out / f"ablate_{_cell_tag(name)}"),
                                   pretrain_ckpt=ckpt_dir)
        cells[name] = run(cell).data
    payload = {"schema": GRID_SCHEMA, "base_config": base.to_dict(),
               "axes": list(axes), "cells": cells}
    write_json_atomic(base_out / "results_grid.json", payload)
    return payload


def run_robustness(base: ExperimentConfig, grid: list) -> dict:
    """Paired baseline/rethink runs per perturbation cell.

    Both sides of a pair see the same perturbed graph and share the same
    perturbed-pretraining checkpoints; the pairing is checked through the
    recorded hashes.
    """
    if not grid:
        raise ConfigError("perturbation grid must be non-empty")
    base_out = Path(base.out)
    rows = []
    for spec in grid:
        spec = spec if spec else None
        if spec is None:
            tag = "clean"
        else:
            tag = f"{spec['kind']}_{spec['amount']}_s{spec.get('seed', 0)}"
        sub = base_out / f"robust_{tag}"
        ckpt_dir = base.pretrain_ckpt or str(sub / "pretrain")
        d_cfg = dataclasses.replace(base, rethink=False, ablation="none",
                                    perturbation=spec, out=str(sub / "d"),
                                    pretrain_ckpt=ckpt_dir)
        rd_cfg = dataclasses.replace(base, rethink=True, ablation="none",
                                     perturbation=spec, out=str(sub / "rd"),
                                     pretrain_ckpt=ckpt_dir)
        d_res = run(d_cfg)
        rd_res = run(rd_cfg)
        for d_entry, rd_entry in zip(d_res.per_seed, rd_res.per_seed):
            if d_entry["pretrain_sha256"] != rd_entry["pretrain_sha256"]:
                raise StateError(f"robustness cell {tag}: pretraining checkpoints diverged")
            if d_entry["perturbation_sha256"] != rd_entry["perturbation_sha256"]:
                raise StateError(f"robustness cell {tag}: perturbed graphs diverged")
        rows.append({"perturbation": spec, "tag": tag,
                     "perturbation_sha256": d_res.per_seed[0]["perturbation_sha256"],
                     "baseline": d_res.data, "rethink": rd_res.data})
    payload = {"schema": ROBUSTNESS_SCHEMA, "base_config": base.to_dict(),
               "cells": rows}
    write_json_atomic(base_out / "results_robustness.json", payload)
    return payload


def export_embeddings(checkpoint, dataset, out) -> str:
    """Write the eval-mode embedding as TSV: node, 16 dims, label if known."""
    model = load_checkpoint(checkpoint)
    graph = load_dataset(dataset) if not isinstance(dataset, AttributedGraph) else dataset
    if model.in_dim != graph.features.shape[1]:
        raise StateError(f"checkpoint expects {model.in_dim} input features, "
                         f"dataset has {graph.features.shape[1]}")
    a_prop = normalize_adjacency(graph, "propagation")
    z, _ = encode(model, a_prop, graph.features, training=False)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header = ["node"] + [f"z{j}" for j in range(z.shape[1])]
    if graph.labels is not None:
        header.append("label")
    lines = ["\t".join(header)]
    for i in range(z.shape[0]):
        row = [str(i)] + [repr(float(v)) for v in z[i]]
        if graph.labels is not None:
            row.append(str(int(graph.labels[i])))
        lines.append("\t".join(row))
    tmp = out.with_suffix(out.suffix + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(out)
    return str(out)


def _random_instance(rng: np.random.Generator):
    n = int(rng.integers(4, 31))
    d = int(rng.integers(2, 9))
    k = int(rng.integers(2, min(6, n + 1)))
    z = rng.standard_normal((n, d))
    upper = np.triu(rng.random((n, n)) < 0.3, k=1)
    a = (upper | upper.T).astype(np.float64)
    return z, sp.csr_matrix(a), rng.integers(0, k, size=n), k


def verify_theory(n_instances: int = 100, seed: int = 0) -> dict:
    """Randomized check of the loss identities and closed-form gradients.

    Returns the worst relative residual of each identity over
    n_instances random (Z, A, labels, gamma) draws, plus max relative
    errors of the analytic gradients against central finite differences
    on a small fixed instance.
    """
    rng = np.random.default_rng(seed)
    worst = {"prop1_rel": 0.0, "prop2_rel": 0.0, "thm1_rel": 0.0}
    for _ in range(n_instances):
        z, a, labels, k = _random_instance(rng)
        gamma = float(10.0 ** rng.uniform(-3, 0))
        res = decomposition_residuals(z, a, labels, gamma, k)
        for key in worst:
            worst[key] = max(worst[key], res[key])

    z, a, labels, k = _random_instance(np.random.default_rng(seed + 1))
    z = z[:8]
    a = a[:8, :8].tocsr()
    labels = labels[:8]
    n, d = z.shape
    centers = np.random.default_rng(seed + 2).standard_normal((k, d))
    a_clus = build_cluster_graph(labels, k)

    def rel(analytic, numeric):
        scale = 1.0 + float(np.max(np.abs(numeric)))
        return float(np.max(np.abs(analytic - numeric)) / scale)

    checks = {}
    for weighting in ("plain", "pos_weighted"):
        g = recon_grad_z(z, a, weighting=weighting)
        fd = finite_diff_grad(lambda v: recon_loss(v.reshape(n, d), a, weighting=weighting),
                              z.ravel()).reshape(n, d)
        checks[f"recon_{weighting}"] = rel(g, fd)
    g = kmeans_grad_z(z, a_clus)
    fd = finite_diff_grad(lambda v: kmeans_embed_loss(v.reshape(n, d), a_clus),
                          z.ravel()).reshape(n, d)
    checks["kmeans_embed"] = rel(g, fd)

    p = student_t_assign(z, centers)
    q = hard_target(p)

    def kl_of(zv, cv):
        pv = student_t_assign(zv.reshape(-1, d), cv.reshape(k, d))
        loss, _, _, _ = dgae_clus_loss(pv, q, zv.reshape(-1, d), cv.reshape(k, d))
        return loss

    _, gz, gc, _ = dgae_clus_loss(p, q, z, centers)
    fd_z = finite_diff_grad(lambda v: kl_of(v, centers.ravel()), z.ravel()).reshape(n, d)
    fd_c = finite_diff_grad(lambda v: kl_of(z.ravel(), v), centers.ravel()).reshape(k, d)
    checks["kl_z"] = rel(gz, fd_z)
    checks["kl_centers"] = rel(gc, fd_c)

    mu = z[:, : min(d, 4)].copy()
    logstd = 0.1 * np.random.default_rng(seed + 3).standard_normal(mu.shape)
    _, g_mu, g_ls = vgae_kl_prior(mu, logstd)
    fd_mu = finite_diff_grad(lambda v: vgae_kl_prior(v.reshape(mu.shape), logstd)[0],
                             mu.ravel()).reshape(mu.shape)
    fd_ls = finite_diff_grad(lambda v: vgae_kl_prior(mu, v.reshape(mu.shape))[0],
                             logstd.ravel()).reshape(mu.shape)
    checks["vgae_kl_mu"] = rel(g_mu, fd_mu)
    checks["vgae_kl_logstd"] = rel(g_ls, fd_ls)

    return {"instances": int(n_instances), "residuals": worst, "grad_checks": checks}
