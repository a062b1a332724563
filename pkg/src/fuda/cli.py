"""Command-line driver.

Subcommands cover the pipeline end to end: ``gen-data`` writes feature
files, ``train-clients`` / ``aggregate`` / ``adapt`` run the stages against
files on disk, ``run`` executes the whole pipeline in memory, and
``ablate`` / ``sweep-epsilon`` produce the comparison tables.

Exit codes: 0 on success, 2 on configuration errors, 3 on runtime numeric
failures.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .aggregation import AGGREGATORS, EntropyStats, aggregate, compute_weights, mean_entropy
from .data import DomainDataset, SyntheticShiftConfig, load_feature_file, save_feature_file
from .errors import NumericError, ProtocolError, ValidationError
from .federation import ClientState, run_one_shot, train_client
from .harness import ExperimentConfig, load_config, to_csv, to_json
from .mspl import MSPLConfig, generate_pseudo_labels
from .nn import LossSpec, ModelParams, TrainConfig


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON experiment config (default: built-in benchmark)")
    parser.add_argument("--seed", type=int, default=0, help="seed for single-run commands")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--format", choices=("csv", "json"), default="json",
                        help="report format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fuda",
                                     description="One-shot federated domain adaptation simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic domains as feature files")
    _add_common(p)

    p = sub.add_parser("train-clients", help="train one source model per client")
    _add_common(p)

    p = sub.add_parser("aggregate", help="aggregate stored client models into a global model")
    _add_common(p)
    p.add_argument("--aggregator", choices=AGGREGATORS, help="override the config's strategy")

    p = sub.add_parser("adapt", help="refine a stored global model with pseudo labels")
    _add_common(p)
    p.add_argument("--epsilon", type=float, help="smoothing strength override")
    p.add_argument("--mspl-loss", choices=("ssce", "ce", "softce"), help="adaptation loss override")
    p.add_argument("--dump-pseudo", metavar="PATH", help="dump pseudo labels as a feature file")

    p = sub.add_parser("run", help="full pipeline in memory at one seed")
    _add_common(p)
    p.add_argument("--aggregator", choices=AGGREGATORS, help="override the config's strategy")
    p.add_argument("--epsilon", type=float, help="smoothing strength override")
    p.add_argument("--mspl-loss", choices=("ssce", "ce", "softce"), help="adaptation loss override")

    p = sub.add_parser("ablate", help="component ablation table over the config's seeds")
    _add_common(p)
    p.add_argument("--aggregators-table", action="store_true",
                   help="also emit the aggregation-strategy comparison table")

    p = sub.add_parser("sweep-epsilon", help="accuracy as a function of smoothing strength")
    _add_common(p)
    p.add_argument("--epsilons", default="0.1,0.3,0.5,0.7,0.9,0.99",
                   help="comma-separated smoothing strengths")

    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "aggregator", None):
        cfg = replace(cfg, aggregator=args.aggregator)
    epsilon = getattr(args, "epsilon", None)
    loss_kind = getattr(args, "mspl_loss", None)
    if epsilon is not None or loss_kind is not None:
        base = cfg.mspl if cfg.mspl is not None else MSPLConfig(
            harness.DEFAULT_EPSILON, harness.DEFAULT_ADAPT_TRAIN)
        eps = base.epsilon if epsilon is None else epsilon
        kind = loss_kind if loss_kind is not None else base.loss.kind
        loss = LossSpec(kind, eps if kind == "ssce" else 0.0)
        cfg = replace(cfg, mspl=MSPLConfig(eps, base.train, loss))
    return cfg


def _write_report(report: dict, out_dir: Path, stem: str, fmt: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{stem}.{fmt}"
    text = to_json(report) if fmt == "json" else to_csv(report)
    path.write_text(text, encoding="utf-8")
    return path


def _save_params(params: ModelParams, path: Path) -> None:
    arrays = {}
    for k, (w, b) in enumerate(params.layers):
        arrays[f"w{k}"] = w
        arrays[f"b{k}"] = b
    np.savez(path, n_layers=len(params.layers), **arrays)


def _load_params(path: Path) -> ModelParams:
    with np.load(path) as blob:
        n = int(blob["n_layers"])
        layers = [(blob[f"w{k}"], blob[f"b{k}"]) for k in range(n)]
    return ModelParams(layers)


def _cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    if not isinstance(cfg.data, SyntheticShiftConfig):
        raise ValidationError("gen-data needs a synthetic data section")
    sources, target = harness.load_domains(cfg, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for ds in [*sources, target]:
        path = out / f"{ds.domain_id}.features"
        save_feature_file(ds, path)
        role = "target" if ds.domain_id == target.domain_id else "source"
        print(f"wrote {path} ({role}, {len(ds)} samples)")
    return 0


def _client_dir(out: Path) -> Path:
    return out / "clients"


def _cmd_train_clients(args) -> int:
    cfg = load_config(args.config)
    sources, _ = harness.load_domains(cfg, args.seed)
    train_cfg = replace(cfg.client_train, seed=args.seed)
    out = _client_dir(Path(args.out))
    out.mkdir(parents=True, exist_ok=True)
    meta = {"arch": harness.config_to_dict(cfg)["arch"], "seed": args.seed, "clients": []}
    for ds in sources:
        params = train_client(ds, cfg.arch, train_cfg)
        _save_params(params, out / f"{ds.domain_id}.npz")
        meta["clients"].append({"id": ds.domain_id, "sample_count": len(ds)})
        print(f"trained {ds.domain_id} on {len(ds)} samples")
    (out / "clients.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    return 0


def _load_clients(cfg: ExperimentConfig, args) -> tuple[list[ClientState], DomainDataset]:
    out = _client_dir(Path(args.out))
    meta_path = out / "clients.json"
    if not meta_path.exists():
        raise ValidationError(f"no stored clients under {out}; run train-clients first")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    sources, target = harness.load_domains(cfg, args.seed)
    by_id = {ds.domain_id: ds for ds in sources}
    clients = []
    for entry in meta["clients"]:
        cid = entry["id"]
        if cid not in by_id:
            raise ValidationError(f"stored client {cid!r} not present in the configured data")
        clients.append(ClientState(cid, by_id[cid], _load_params(out / f"{cid}.npz").freeze()))
    return clients, target


def _cmd_aggregate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    clients, target = _load_clients(cfg, args)
    result = run_one_shot(clients, target.without_labels(), cfg.aggregator,
                          eval_labels=target.labels)
    out = Path(args.out)
    _save_params(result.global_params, out / "global.npz")
    report = {"kind": "aggregate", "seed": args.seed,
              "config": harness.config_to_dict(cfg), **result.report}
    path = _write_report(report, out, "aggregate_report", args.format)
    print(f"wrote {out / 'global.npz'} and {path}")
    return 0


def _cmd_adapt(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    if cfg.mspl is None:
        raise ValidationError("adapt needs an mspl section (or --epsilon/--mspl-loss)")
    clients, target = _load_clients(cfg, args)
    out = Path(args.out)
    global_path = out / "global.npz"
    if not global_path.exists():
        raise ValidationError(f"no stored global model at {global_path}; run aggregate first")
    global_params = _load_params(global_path)

    unlabeled = target.without_labels()
    pseudo = generate_pseudo_labels([c.params for c in clients], unlabeled)
    if args.dump_pseudo:
        dump = DomainDataset(f"{target.domain_id}-pseudo", pseudo.probs, None,
                             max(2, pseudo.probs.shape[1]))
        save_feature_file(dump, args.dump_pseudo)
        print(f"wrote {args.dump_pseudo}")
    adapt_cfg = replace(cfg.mspl, train=replace(cfg.mspl.train, seed=args.seed))
    from .mspl import adapt_global

    adapted = adapt_global(global_params, unlabeled, pseudo, adapt_cfg)
    _save_params(adapted, out / "global_adapted.npz")
    report = {"kind": "adapt", "seed": args.seed, "config": harness.config_to_dict(cfg),
              "adaptation": adapt_cfg.describe()}
    if target.labels is not None:
        labeled = DomainDataset(target.domain_id, target.features, target.labels,
                                target.num_classes)
        report["metrics"] = {
            "target_accuracy_pre_adapt": harness.accuracy(global_params, labeled),
            "target_accuracy_post_adapt": harness.accuracy(adapted, labeled),
        }
    path = _write_report(report, out, "adapt_report", args.format)
    print(f"wrote {out / 'global_adapted.npz'} and {path}")
    return 0


def _cmd_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    report = harness.run_experiment(cfg, args.seed)
    path = _write_report(report, Path(args.out), "report", args.format)
    print(f"wrote {path}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    table = harness.run_ablation(cfg)
    path = _write_report(table, Path(args.out), "ablation", args.format)
    print(f"wrote {path}")
    for row in table["rows"]:
        print(f"  {row['name']:<18} {row['mean_accuracy']:.4f} +- {row['std_accuracy']:.4f}")
    if args.aggregators_table:
        table = harness.run_aggregator_comparison(cfg)
        path = _write_report(table, Path(args.out), "aggregators", args.format)
        print(f"wrote {path}")
        for row in table["rows"]:
            print(f"  {row['name']:<18} {row['mean_accuracy']:.4f} +- {row['std_accuracy']:.4f}")
    return 0


def _cmd_sweep_epsilon(args) -> int:
    cfg = load_config(args.config)
    try:
        epsilons = [float(tok) for tok in args.epsilons.split(",") if tok.strip()]
    except ValueError:
        raise ValidationError(f"bad --epsilons list: {args.epsilons!r}") from None
    table = harness.run_epsilon_sweep(cfg, epsilons)
    path = _write_report(table, Path(args.out), "epsilon_sweep", args.format)
    print(f"wrote {path}")
    for row in table["rows"]:
        print(f"  eps={row['epsilon']:<5} {row['mean_accuracy']:.4f} +- {row['std_accuracy']:.4f}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train-clients": _cmd_train_clients,
    "aggregate": _cmd_aggregate,
    "adapt": _cmd_adapt,
    "run": _cmd_run,
    "ablate": _cmd_ablate,
    "sweep-epsilon": _cmd_sweep_epsilon,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValidationError, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
