"""Experiment driver: configs, seeded pipelines, ablation and sensitivity
suites, metric computation, and JSON/CSV report emission.

Every report is a pure function of (config, seed list): rerunning with the
same inputs reproduces it byte-for-byte. JSON carries full double precision;
CSV rounds to 6 significant digits.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from .data import DomainDataset, SyntheticShiftConfig, generate_domains, load_feature_file
from .errors import ValidationError
from .federation import ClientState, client_seed, run_one_shot, train_client
from .mspl import MSPLConfig
from .nn import ArchitectureSpec, LossSpec, ModelParams, TrainConfig, forward

DEFAULT_CLIENT_TRAIN = TrainConfig(epochs=20, batch_size=32, learning_rate=3e-2,
                                   momentum=0.9, warmup_fraction=0.05)
DEFAULT_ADAPT_TRAIN = TrainConfig(epochs=10, batch_size=32, learning_rate=3e-2,
                                  momentum=0.9, warmup_fraction=0.05)
DEFAULT_EPSILON = 0.9

# Ablation rows: (name, aggregator, adaptation loss or None).
ABLATION_ROWS = (
    ("sea+mspl(ssce)", "sea", "ssce"),
    ("sea+mspl(ce)", "sea", "ce"),
    ("sea", "sea", None),
    ("entropy", "entropy", None),
    ("uniform", "uniform", None),
)
AGGREGATOR_ROWS = (
    ("uniform", "uniform", None),
    ("fedavg", "fedavg", None),
    ("entropy", "entropy", None),
    ("sea", "sea", None),
)


@dataclass(frozen=True)
class FeatureFilePlan:
    """Pre-extracted feature files: one per source domain plus the target."""

    source_paths: tuple[str, ...]
    target_path: str

    def __post_init__(self):
        object.__setattr__(self, "source_paths", tuple(self.source_paths))
        if not self.source_paths:
            raise ValidationError("need at least one source feature file")


@dataclass(frozen=True)
class ExperimentConfig:
    data: SyntheticShiftConfig | FeatureFilePlan
    arch: ArchitectureSpec
    client_train: TrainConfig = DEFAULT_CLIENT_TRAIN
    aggregator: str = "sea"
    mspl: MSPLConfig | None = None
    target_index: int | None = None
    eval_seeds: tuple[int, ...] = tuple(range(12))

    def __post_init__(self):
        object.__setattr__(self, "eval_seeds", tuple(int(s) for s in self.eval_seeds))
        if isinstance(self.data, SyntheticShiftConfig):
            idx = self.data.num_domains - 1 if self.target_index is None else self.target_index
            if not 0 <= idx < self.data.num_domains:
                raise ValidationError(f"target_index {idx} outside [0, {self.data.num_domains})")
            object.__setattr__(self, "target_index", idx)
        if not self.eval_seeds:
            raise ValidationError("eval_seeds must not be empty")


def standard_benchmark(eval_seeds: tuple[int, ...] = tuple(range(12))) -> ExperimentConfig:
    """Default synthetic benchmark: 3 shifted sources plus one target domain,
    sized so the full ablation suite finishes within minutes on one core
    while leaving the smoothed-loss adaptation enough steps to converge."""
    data = SyntheticShiftConfig()
    return ExperimentConfig(
        data=data,
        arch=ArchitectureSpec(data.feature_dim, data.num_classes),
        client_train=DEFAULT_CLIENT_TRAIN,
        aggregator="sea",
        mspl=MSPLConfig(DEFAULT_EPSILON, DEFAULT_ADAPT_TRAIN),
        eval_seeds=eval_seeds,
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def accuracy(params: ModelParams, labeled: DomainDataset) -> float:
    """Fraction of samples whose argmax logit matches the label."""
    if not labeled.is_labeled:
        raise ValidationError("accuracy needs a labeled dataset")
    preds = np.argmax(forward(params, labeled.features), axis=1)
    return float((preds == labeled.labels).mean())


def entropy_accuracy_correlation(pairs) -> float:
    """Pearson correlation of (mean entropy, accuracy) pairs."""
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValidationError(f"expected (n, 2) pairs, got shape {arr.shape}")
    if arr.shape[0] < 3:
        raise ValidationError(f"need at least 3 pairs, got {arr.shape[0]}")
    x = arr[:, 0] - arr[:, 0].mean()
    y = arr[:, 1] - arr[:, 1].mean()
    sx = float(np.sqrt((x * x).sum()))
    sy = float(np.sqrt((y * y).sum()))
    if sx == 0.0 or sy == 0.0:
        raise ValidationError("correlation undefined: a coordinate has zero variance")
    return float((x * y).sum() / (sx * sy))


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

def load_domains(cfg: ExperimentConfig, seed: int) -> tuple[list[DomainDataset], DomainDataset]:
    """Materialize (sources, target) for one seed."""
    if isinstance(cfg.data, SyntheticShiftConfig):
        domains = generate_domains(replace(cfg.data, seed=seed))
        target = domains[cfg.target_index]
        sources = [d for i, d in enumerate(domains) if i != cfg.target_index]
    else:
        sources = [load_feature_file(p) for p in cfg.data.source_paths]
        target = load_feature_file(cfg.data.target_path)
    for ds in sources:
        if not ds.is_labeled:
            raise ValidationError(f"source domain {ds.domain_id!r} must be labeled")
    return sources, target


def _combined_hash(sources: list[DomainDataset], target: DomainDataset) -> str:
    digest = hashlib.sha256()
    for ds in [*sources, target]:
        digest.update(ds.content_hash().encode())
    return digest.hexdigest()


def _adapt_config(cfg: ExperimentConfig, seed: int, loss_kind: str | None) -> MSPLConfig | None:
    if loss_kind is None:
        return None
    if cfg.mspl is None:
        raise ValidationError("this run needs an mspl section in the config")
    train_cfg = replace(cfg.mspl.train, seed=seed)
    epsilon = cfg.mspl.epsilon
    loss = LossSpec(loss_kind, epsilon if loss_kind == "ssce" else 0.0)
    return MSPLConfig(epsilon, train_cfg, loss)


def trained_clients(cfg: ExperimentConfig, seed: int) -> tuple[list[ClientState], DomainDataset]:
    """Generate/load the data for ``seed`` and train every source client.

    Client ``i`` trains from its own seed (derived via ``client_seed``);
    models start from independent initializations, as in the protocol.
    """
    sources, target = load_domains(cfg, seed)
    clients = []
    for i, ds in enumerate(sources):
        local_cfg = replace(cfg.client_train, seed=client_seed(seed, i))
        clients.append(ClientState(ds.domain_id, ds, train_client(ds, cfg.arch, local_cfg)))
    return clients, target


def run_experiment(cfg: ExperimentConfig, seed: int) -> dict:
    """One full pipeline pass at ``seed``; returns the run report."""
    sources, target = load_domains(cfg, seed)
    clients = [ClientState(ds.domain_id, ds) for ds in sources]
    adapt = None
    if cfg.mspl is not None:
        adapt = replace(cfg.mspl, train=replace(cfg.mspl.train, seed=seed))
    result = run_one_shot(
        clients,
        target.without_labels(),
        cfg.aggregator,
        adapt,
        arch=cfg.arch,
        train_cfg=replace(cfg.client_train, seed=seed),
        eval_labels=target.labels,
    )
    report = {
        "kind": "run",
        "seed": seed,
        "config": config_to_dict(cfg),
        "target_domain": target.domain_id,
        "dataset_hash": _combined_hash(sources, target),
    }
    report.update(result.report)
    return report


def _row_accuracy(report: dict, adapted: bool) -> float:
    key = "target_accuracy_post_adapt" if adapted else "target_accuracy_pre_adapt"
    value = report["metrics"].get(key)
    if value is None:
        raise ValidationError("row accuracy needs a labeled evaluation target")
    return value


def _run_rows(cfg: ExperimentConfig, rows) -> dict:
    """Run each (name, aggregator, adapt-loss) row on identical per-seed data.

    Clients are trained once per seed and reused by every row, so rows
    differ only in aggregation strategy and adaptation loss.
    """
    seeds = list(cfg.eval_seeds)
    row_results = [
        {"name": name, "aggregator": agg, "adapt_loss": loss,
         "accuracy_by_seed": [], "dataset_hash_by_seed": []}
        for name, agg, loss in rows
    ]
    entropy_accuracy_pairs: list[list[float]] = []
    for seed in seeds:
        clients, target = trained_clients(cfg, seed)
        unlabeled = target.without_labels()
        sources = [c.dataset for c in clients]
        for row, (name, agg, loss) in zip(row_results, rows):
            result = run_one_shot(
                clients, unlabeled, agg, _adapt_config(cfg, seed, loss),
                eval_labels=target.labels,
            )
            row["accuracy_by_seed"].append(_row_accuracy(result.report, adapted=loss is not None))
            row["dataset_hash_by_seed"].append(_combined_hash(sources, target))
            if row is row_results[-1] and target.labels is not None:
                for client_row in result.report["clients"]:
                    entropy_accuracy_pairs.append(
                        [client_row["mean_entropy"], client_row["target_accuracy"]]
                    )
    for row in row_results:
        accs = np.asarray(row["accuracy_by_seed"])
        row["mean_accuracy"] = float(accs.mean())
        row["std_accuracy"] = float(accs.std())
    table = {
        "config": config_to_dict(cfg),
        "seeds": seeds,
        "rows": row_results,
        "entropy_accuracy_pairs": entropy_accuracy_pairs,
    }
    if len(entropy_accuracy_pairs) >= 3:
        try:
            table["entropy_accuracy_correlation"] = entropy_accuracy_correlation(
                entropy_accuracy_pairs
            )
        except ValidationError:
            table["entropy_accuracy_correlation"] = None
    return table


def run_ablation(cfg: ExperimentConfig) -> dict:
    """Five-row component ablation on identical data per seed."""
    table = _run_rows(cfg, ABLATION_ROWS)
    table["kind"] = "ablation"
    return table


def run_aggregator_comparison(cfg: ExperimentConfig) -> dict:
    """The four weighting strategies head to head, no adaptation."""
    table = _run_rows(cfg, AGGREGATOR_ROWS)
    table["kind"] = "aggregator-comparison"
    return table


def run_epsilon_sweep(cfg: ExperimentConfig, epsilons: list[float]) -> dict:
    """Post-adaptation accuracy per smoothing strength.

    Clients are trained once per seed; every epsilon adapts the same global
    model with the smoothed soft-label loss at that strength.
    """
    if not epsilons:
        raise ValidationError("epsilon sweep needs at least one value")
    for eps in epsilons:
        if not 0.0 <= eps <= 1.0:
            raise ValidationError(f"epsilon must be in [0, 1], got {eps}")
    if cfg.mspl is None:
        raise ValidationError("epsilon sweep needs an mspl section in the config")

    seeds = list(cfg.eval_seeds)
    acc_by_eps: list[list[float]] = [[] for _ in epsilons]
    pre_adapt: list[float] = []
    for seed in seeds:
        clients, target = trained_clients(cfg, seed)
        unlabeled = target.without_labels()
        for j, eps in enumerate(epsilons):
            train_cfg = replace(cfg.mspl.train, seed=seed)
            adapt = MSPLConfig(eps, train_cfg, LossSpec("ssce", eps))
            result = run_one_shot(clients, unlabeled, cfg.aggregator, adapt,
                                  eval_labels=target.labels)
            acc_by_eps[j].append(_row_accuracy(result.report, adapted=True))
            if j == 0:
                pre_adapt.append(result.report["metrics"]["target_accuracy_pre_adapt"])
    rows = []
    for eps, accs in zip(epsilons, acc_by_eps):
        arr = np.asarray(accs)
        rows.append({
            "epsilon": eps,
            "accuracy_by_seed": accs,
            "mean_accuracy": float(arr.mean()),
            "std_accuracy": float(arr.std()),
        })
    pre = np.asarray(pre_adapt)
    return {
        "kind": "epsilon-sweep",
        "config": config_to_dict(cfg),
        "seeds": seeds,
        "rows": rows,
        "pre_adapt": {
            "accuracy_by_seed": pre_adapt,
            "mean_accuracy": float(pre.mean()),
            "std_accuracy": float(pre.std()),
        },
    }


# ---------------------------------------------------------------------------
# Config (de)serialization -- JSON keys mirror the dataclass field names.
# ---------------------------------------------------------------------------

def config_to_dict(cfg: ExperimentConfig) -> dict:
    if isinstance(cfg.data, SyntheticShiftConfig):
        data = {"synthetic": {
            "num_domains": cfg.data.num_domains,
            "num_classes": cfg.data.num_classes,
            "feature_dim": cfg.data.feature_dim,
            "samples_per_domain": cfg.data.samples_per_domain,
            "class_separation": cfg.data.class_separation,
            "shift_rotation_max": cfg.data.shift_rotation_max,
            "shift_translation_max": cfg.data.shift_translation_max,
            "label_noise_rate": cfg.data.label_noise_rate,
            "seed": cfg.data.seed,
        }}
    else:
        data = {"files": {"sources": list(cfg.data.source_paths), "target": cfg.data.target_path}}
    out = {
        "data": data,
        "arch": {
            "input_dim": cfg.arch.input_dim,
            "num_classes": cfg.arch.num_classes,
            "bottleneck_widths": list(cfg.arch.bottleneck_widths),
        },
        "client_train": _train_to_dict(cfg.client_train),
        "aggregator": cfg.aggregator,
        "mspl": None if cfg.mspl is None else {
            "epsilon": cfg.mspl.epsilon,
            "loss": cfg.mspl.loss.kind,
            "train": _train_to_dict(cfg.mspl.train),
        },
        "target_index": cfg.target_index,
        "eval_seeds": list(cfg.eval_seeds),
    }
    return out


def _train_to_dict(cfg: TrainConfig) -> dict:
    return {
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "momentum": cfg.momentum,
        "warmup_fraction": cfg.warmup_fraction,
        "seed": cfg.seed,
    }


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ValidationError(f"unknown keys in {where}: {sorted(unknown)}")


def _train_from_dict(section: dict, default: TrainConfig, where: str) -> TrainConfig:
    _check_keys(section, {"epochs", "batch_size", "learning_rate", "momentum",
                          "warmup_fraction", "seed"}, where)
    merged = {**_train_to_dict(default), **section}
    return TrainConfig(**merged)


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Parse a config dict (from JSON), filling defaults for omitted parts."""
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object")
    _check_keys(raw, {"data", "arch", "client_train", "aggregator", "mspl",
                      "target_index", "eval_seeds"}, "config")

    data_raw = raw.get("data", {"synthetic": {}})
    _check_keys(data_raw, {"synthetic", "files"}, "data")
    if ("synthetic" in data_raw) == ("files" in data_raw):
        raise ValidationError("data must hold exactly one of 'synthetic' or 'files'")
    if "synthetic" in data_raw:
        syn = data_raw["synthetic"]
        _check_keys(syn, {"num_domains", "num_classes", "feature_dim", "samples_per_domain",
                          "class_separation", "shift_rotation_max", "shift_translation_max",
                          "label_noise_rate", "seed"}, "data.synthetic")
        data = SyntheticShiftConfig(**syn)
        default_arch = {"input_dim": data.feature_dim, "num_classes": data.num_classes,
                        "bottleneck_widths": [64, 32]}
    else:
        files = data_raw["files"]
        _check_keys(files, {"sources", "target"}, "data.files")
        if "sources" not in files or "target" not in files:
            raise ValidationError("data.files needs 'sources' and 'target'")
        data = FeatureFilePlan(tuple(files["sources"]), files["target"])
        default_arch = None

    arch_raw = raw.get("arch")
    if arch_raw is None:
        if default_arch is None:
            raise ValidationError("feature-file configs must specify 'arch'")
        arch_raw = default_arch
    _check_keys(arch_raw, {"input_dim", "num_classes", "bottleneck_widths"}, "arch")
    arch = ArchitectureSpec(
        arch_raw["input_dim"], arch_raw["num_classes"],
        tuple(arch_raw.get("bottleneck_widths", (64, 32))),
    )

    client_train = _train_from_dict(raw.get("client_train", {}), DEFAULT_CLIENT_TRAIN,
                                    "client_train")

    mspl_raw = raw.get("mspl", {})
    if mspl_raw is None:
        mspl_cfg = None
    else:
        _check_keys(mspl_raw, {"epsilon", "loss", "train"}, "mspl")
        epsilon = mspl_raw.get("epsilon", DEFAULT_EPSILON)
        loss_kind = mspl_raw.get("loss", "ssce")
        if loss_kind not in ("ssce", "ce", "softce"):
            raise ValidationError(f"mspl loss must be ssce, ce or softce, got {loss_kind!r}")
        adapt_train = _train_from_dict(mspl_raw.get("train", {}), DEFAULT_ADAPT_TRAIN,
                                       "mspl.train")
        loss = LossSpec(loss_kind, epsilon if loss_kind == "ssce" else 0.0)
        mspl_cfg = MSPLConfig(epsilon, adapt_train, loss)

    return ExperimentConfig(
        data=data,
        arch=arch,
        client_train=client_train,
        aggregator=raw.get("aggregator", "sea"),
        mspl=mspl_cfg,
        target_index=raw.get("target_index"),
        eval_seeds=tuple(raw.get("eval_seeds", range(12))),
    )


def load_config(path: str | None) -> ExperimentConfig:
    """Read a JSON config file; ``None`` yields the standard benchmark."""
    if path is None:
        return standard_benchmark()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path!r} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

def to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return format(value, ".6g")
    return str(value)


def flatten(obj, prefix: str = "") -> list[tuple[str, object]]:
    """Depth-first (path, leaf) pairs; lists index numerically."""
    if isinstance(obj, dict):
        out = []
        for key in obj:
            out.extend(flatten(obj[key], f"{prefix}{key}."))
        return out
    if isinstance(obj, (list, tuple)):
        out = []
        for i, item in enumerate(obj):
            out.extend(flatten(item, f"{prefix}{i}."))
        return out
    return [(prefix[:-1], obj)]


def to_csv(report: dict) -> str:
    """CSV rendering: tabular when the report carries ``rows``, otherwise
    flattened ``key,value`` lines. Floats use 6 significant digits."""
    lines = []
    rows = report.get("rows")
    if isinstance(rows, list) and rows and all(isinstance(r, dict) for r in rows):
        columns: list[str] = []
        flat_rows = []
        for row in rows:
            flat = dict()
            for path, value in flatten(row):
                flat[path] = value
            flat_rows.append(flat)
            for key in flat:
                if key not in columns:
                    columns.append(key)
        lines.append(",".join(columns))
        for flat in flat_rows:
            lines.append(",".join(_format_cell(flat.get(col)) for col in columns))
    else:
        lines.append("key,value")
        for path, value in flatten(report):
            lines.append(f"{path},{_format_cell(value)}")
    return "\n".join(lines) + "\n"
