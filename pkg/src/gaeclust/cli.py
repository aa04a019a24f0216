"""Command line interface.

Verbs: pretrain, cluster, ablate, robustness, export-embeddings,
verify-theory. Run parameters come from a flat JSON config file
(--config) and/or flags; a flag given on the command line always wins
over the file value.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiments
from .errors import ConfigError, GaeClustError

_CONFIG_FLAG_KEYS = (
    "dataset", "model", "rethink", "out", "pretrain_ckpt", "gamma", "lr",
    "pretrain_epochs", "train_epochs", "alpha1", "alpha2", "m1", "m2",
    "convergence_fraction", "diag_stride", "ablation",
)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON config file; flags override its keys")
    p.add_argument("--dataset", help="dataset directory (edges.tsv + meta.json)")
    p.add_argument("--model", choices=experiments.VALID_MODELS)
    p.add_argument("--out", help="output directory")
    p.add_argument("--pretrain-ckpt", dest="pretrain_ckpt",
                   help="directory holding shared pretraining checkpoints")
    seeds = p.add_mutually_exclusive_group()
    seeds.add_argument("--seed", type=int, help="single seed")
    seeds.add_argument("--seeds", help="comma-separated seeds, e.g. 0,1,2")
    p.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int)
    p.add_argument("--lr", type=float)


def _add_cluster_flags(p: argparse.ArgumentParser) -> None:
    rg = p.add_mutually_exclusive_group()
    rg.add_argument("--rethink", dest="rethink", action="store_true", default=None,
                    help="enable the reliable-set rewiring loop")
    rg.add_argument("--no-rethink", dest="rethink", action="store_false")
    p.add_argument("--alpha1", type=float)
    p.add_argument("--alpha2", type=float)
    p.add_argument("--m1", type=int, help="epochs between reliable-set refreshes")
    p.add_argument("--m2", type=int, help="epochs between graph rewrites")
    p.add_argument("--gamma", type=float)
    p.add_argument("--train-epochs", dest="train_epochs", type=int)
    p.add_argument("--diag-stride", dest="diag_stride", type=int)
    p.add_argument("--convergence-fraction", dest="convergence_fraction", type=float)
    p.add_argument("--ablation")
    p.add_argument("--perturbation",
                   help='JSON object, e.g. \'{"kind": "add_random_edges", "amount": 100, "seed": 0}\'')


def _config_from_args(args: argparse.Namespace) -> experiments.ExperimentConfig:
    overrides = {}
    for key in _CONFIG_FLAG_KEYS:
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = [args.seed]
    elif getattr(args, "seeds", None) is not None:
        try:
            overrides["seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --seeds value {args.seeds!r}") from exc
    if getattr(args, "perturbation", None) is not None:
        try:
            overrides["perturbation"] = json.loads(args.perturbation)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--perturbation is not valid JSON: {exc}") from exc
    if args.config:
        return experiments.ExperimentConfig.from_file(args.config, overrides)
    if "dataset" not in overrides:
        raise ConfigError("--dataset is required when no --config file is given")
    return experiments.ExperimentConfig(**overrides)


def _print_metrics(label: str, metrics: dict | None) -> None:
    if metrics is None:
        print(f"{label}: no ground-truth labels, metrics unavailable")
        return
    keys = [k for k in ("acc", "nmi", "ari") if k in metrics]
    body = "  ".join(f"{k}={metrics[k]:.4f}" for k in keys)
    extra = f"  (seed {metrics['seed']})" if "seed" in metrics else ""
    print(f"{label}: {body}{extra}")


def _cmd_pretrain(args) -> int:
    manifest = experiments.pretrain_only(_config_from_args(args))
    for entry in manifest["checkpoints"]:
        print(f"seed {entry['seed']}: {entry['checkpoint']}  "
              f"sha256={entry['sha256'][:12]}  ({entry['wall_time_s']:.1f}s)")
    return 0


def _cmd_cluster(args) -> int:
    result = experiments.run(_config_from_args(args))
    for entry in result.per_seed:
        line = f"seed {entry['seed']}: "
        if entry["acc"] is not None:
            line += f"acc={entry['acc']:.4f}  nmi={entry['nmi']:.4f}  ari={entry['ari']:.4f}  "
        line += (f"stop={entry['stop_reason']}  epochs={entry['epochs_run']}  "
                 f"omega={entry['omega_final']}  ({entry['wall_time_s']:.1f}s)")
        print(line)
    _print_metrics("best", result.best)
    _print_metrics("mean", result.mean)
    _print_metrics("std", result.std)
    print(f"results: {result.path}")
    return 0


def _cmd_ablate(args) -> int:
    axes = [a.strip() for a in args.axes.split(",") if a.strip()]
    config = _config_from_args(args)
    payload = experiments.run_ablation_grid(config, axes)
    for name in payload["axes"]:
        _print_metrics(name, payload["cells"][name]["best"])
    print(f"results: {Path(config.out) / 'results_grid.json'}")
    return 0


def _cmd_robustness(args) -> int:
    raw = args.grid
    if raw.startswith("@"):
        raw = Path(raw[1:]).read_text()
    try:
        grid = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--grid is not valid JSON: {exc}") from exc
    if not isinstance(grid, list):
        raise ConfigError("--grid must be a JSON list of perturbation objects")
    payload = experiments.run_robustness(_config_from_args(args), grid)
    for cell in payload["cells"]:
        _print_metrics(f"{cell['tag']} baseline", cell["baseline"]["best"])
        _print_metrics(f"{cell['tag']} rethink ", cell["rethink"]["best"])
    return 0


def _cmd_export(args) -> int:
    path = experiments.export_embeddings(args.checkpoint, args.dataset, args.out)
    print(path)
    return 0


def _cmd_verify_theory(args) -> int:
    report = experiments.verify_theory(n_instances=args.instances, seed=args.seed)
    print(f"identity residuals over {report['instances']} random instances:")
    for key, value in report["residuals"].items():
        print(f"  {key:<12} {value:.3e}")
    print("gradient checks against central finite differences:")
    for key, value in report["grad_checks"].items():
        print(f"  {key:<16} {value:.3e}")
    ok = (all(v < 1e-8 for v in report["residuals"].values())
          and all(v < 1e-5 for v in report["grad_checks"].values()))
    print("status:", "ok" if ok else "FAILED")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaeclust",
        description="Graph auto-encoder clustering with reliable-node graph rewiring.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("pretrain", help="reconstruction pretraining only")
    _add_common(p)
    _add_cluster_flags(p)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("cluster", help="pretrain (or reuse) + clustering phase")
    _add_common(p)
    _add_cluster_flags(p)
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("ablate", help="run an ablation grid with shared pretraining")
    _add_common(p)
    _add_cluster_flags(p)
    p.add_argument("--axes", required=True,
                   help="comma-separated ablation names, e.g. no_xi,no_alpha1")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("robustness", help="paired baseline/rethink runs on perturbed graphs")
    _add_common(p)
    _add_cluster_flags(p)
    p.add_argument("--grid", required=True,
                   help="JSON list of perturbation objects, or @file.json")
    p.set_defaults(func=_cmd_robustness)

    p = sub.add_parser("export-embeddings", help="write the embedding matrix as TSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("verify-theory",
                       help="check the loss identities and closed-form gradients")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_verify_theory)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GaeClustError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
