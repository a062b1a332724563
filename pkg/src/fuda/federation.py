"""One-shot federated protocol: local training, a single parameter upload
per client, and server-side assembly of the global model.

Clients are simulated in-process against an explicit protocol trace; the
trace records every client-to-server message so tests can assert that a
full run contains exactly M uploads and nothing else on the wire.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import aggregation, mspl
from .aggregation import AggregationWeights, EntropyStats
from .data import DomainDataset
from .errors import ProtocolError, ValidationError
from .nn import ArchitectureSpec, LossSpec, ModelParams, TrainConfig, init_params, train

CLIENT_TO_SERVER = "client->server"
SERVER_LOCAL = "server-local"
CLIENT_LOCAL = "client-local"


@dataclass
class ClientState:
    """One simulated client: its labeled source data and trained model."""

    client_id: str
    dataset: DomainDataset
    params: ModelParams | None = None

    def __post_init__(self):
        if not self.dataset.is_labeled:
            raise ValidationError(f"client {self.client_id!r} needs a labeled source dataset")

    @property
    def sample_count(self) -> int:
        return len(self.dataset)


@dataclass(frozen=True)
class TraceEvent:
    kind: str
    party: str
    channel: str


@dataclass
class ProtocolTrace:
    events: list[TraceEvent] = field(default_factory=list)

    def record(self, kind: str, party: str, channel: str) -> None:
        self.events.append(TraceEvent(kind, party, channel))

    def uploads(self) -> list[TraceEvent]:
        return [e for e in self.events if e.channel == CLIENT_TO_SERVER]

    def downlinks(self) -> list[TraceEvent]:
        return [e for e in self.events if e.channel == "server->client"]


@dataclass
class ServerState:
    """What the server holds: uploads in arrival order plus the target data."""

    target: DomainDataset
    received: list[tuple[str, ModelParams, int]] = field(default_factory=list)
    global_params: ModelParams | None = None

    def receive(self, client_id: str, params: ModelParams, sample_count: int) -> None:
        if any(cid == client_id for cid, _, _ in self.received):
            raise ProtocolError(f"client {client_id!r} already uploaded (one-shot contract)")
        if self.received and params.shape_signature() != self.received[0][1].shape_signature():
            raise ProtocolError(f"client {client_id!r} uploaded a mismatched architecture")
        self.received.append((client_id, params, sample_count))


def client_seed(base_seed: int, index: int) -> int:
    """Per-client training seed. Clients initialize independently: in a
    single-round protocol the server never broadcasts a shared starting
    point, so client models must not assume a common init."""
    return base_seed + 1000 * (index + 1)


def train_client(dataset: DomainDataset, arch: ArchitectureSpec, cfg: TrainConfig) -> ModelParams:
    """Local source training: seeded init, then hard cross-entropy SGD.

    The returned parameters are frozen (read-only arrays); from the
    protocol's point of view a client's model never changes after upload.
    """
    if len(dataset) == 0:
        raise ValidationError("cannot train on an empty dataset")
    if not dataset.is_labeled:
        raise ValidationError("client training needs labels")
    if dataset.num_classes != arch.num_classes:
        raise ValidationError(
            f"dataset has {dataset.num_classes} classes but the architecture expects {arch.num_classes}"
        )
    params = init_params(arch, cfg.seed)
    params = train(params, dataset.features, dataset.labels, LossSpec("ce"), cfg)
    return params.copy().freeze()


@dataclass
class OneShotResult:
    global_params: ModelParams
    report: dict
    trace: ProtocolTrace
    weights: AggregationWeights
    entropy_stats: EntropyStats


def run_one_shot(
    clients: list[ClientState],
    target: DomainDataset,
    aggregator: str,
    adapt: "mspl.MSPLConfig | None" = None,
    *,
    arch: ArchitectureSpec | None = None,
    train_cfg: TrainConfig | None = None,
    eval_labels: np.ndarray | None = None,
) -> OneShotResult:
    """Execute the full single-round protocol and return the global model.

    Clients without parameters are trained locally first, which requires
    ``arch`` and ``train_cfg``; every client shares that configuration, so
    all local models descend from one common initialization. ``eval_labels``
    are ground-truth target labels supplied out-of-band purely for report
    metrics -- they never reach training or adaptation code.
    """
    if not clients:
        raise ProtocolError("need at least one client")
    ids = [c.client_id for c in clients]
    if len(set(ids)) != len(ids):
        raise ProtocolError(f"duplicate client ids: {ids}")
    if target.is_labeled:
        raise ProtocolError("the target dataset handed to the protocol must be unlabeled")
    if eval_labels is not None:
        eval_labels = np.asarray(eval_labels, dtype=np.int64)
        if eval_labels.shape != (len(target),):
            raise ValidationError(
                f"eval_labels shape {eval_labels.shape} does not match {len(target)} target samples"
            )

    trace = ProtocolTrace()
    server = ServerState(target=target)

    for index, client in enumerate(clients):
        if client.params is None:
            if arch is None or train_cfg is None:
                raise ProtocolError(
                    f"client {client.client_id!r} is untrained; pass arch and train_cfg"
                )
            local_cfg = replace(train_cfg, seed=client_seed(train_cfg.seed, index))
            client.params = train_client(client.dataset, arch, local_cfg)
            trace.record("local-train", client.client_id, CLIENT_LOCAL)

    signature = clients[0].params.shape_signature()
    for client in clients:
        if client.params.shape_signature() != signature:
            raise ProtocolError(f"client {client.client_id!r} has a mismatched architecture")

    # The single communication round: every client uploads once.
    for client in clients:
        server.receive(client.client_id, client.params, client.sample_count)
        trace.record("upload", client.client_id, CLIENT_TO_SERVER)

    # Everything below happens on the server against the uploads.
    stats = EntropyStats(
        [(cid, aggregation.mean_entropy(params, target)) for cid, params, _ in server.received]
    )
    trace.record("target-entropy", "server", SERVER_LOCAL)
    counts = [count for _, _, count in server.received]
    weights = aggregation.compute_weights(stats, counts, aggregator)
    models = [params for _, params, _ in server.received]
    server.global_params = aggregation.aggregate(models, weights)
    trace.record("aggregate", "server", SERVER_LOCAL)

    metrics: dict = {}
    accuracy_by_client: dict[str, float | None] = {cid: None for cid in ids}
    if eval_labels is not None:
        from .harness import accuracy as _accuracy  # local import to avoid a cycle

        labeled_view = DomainDataset(target.domain_id, target.features, eval_labels, target.num_classes)
        for cid, params, _ in server.received:
            accuracy_by_client[cid] = _accuracy(params, labeled_view)
        metrics["target_accuracy_pre_adapt"] = _accuracy(server.global_params, labeled_view)

    adapted = None
    if adapt is not None:
        pseudo = mspl.generate_pseudo_labels(models, target)
        trace.record("pseudo-labels", "server", SERVER_LOCAL)
        adapted = mspl.adapt_global(server.global_params, target, pseudo, adapt)
        trace.record("adapt", "server", SERVER_LOCAL)
        if eval_labels is not None:
            metrics["target_accuracy_post_adapt"] = _accuracy(adapted, labeled_view)
        server.global_params = adapted
    elif eval_labels is not None:
        metrics["target_accuracy_post_adapt"] = None

    inverse = 1.0 / np.maximum(stats.entropies, aggregation.ENTROPY_FLOOR)
    client_rows = []
    for i, (cid, _, count) in enumerate(server.received):
        client_rows.append(
            {
                "id": cid,
                "sample_count": count,
                "mean_entropy": float(stats.entropies[i]),
                "weight_unscaled": float(inverse[i]),
                "weight_final": float(weights.weights[i]),
                "target_accuracy": accuracy_by_client[cid],
            }
        )

    if eval_labels is not None and len(client_rows) >= 3:
        from .harness import entropy_accuracy_correlation

        pairs = [(row["mean_entropy"], row["target_accuracy"]) for row in client_rows]
        try:
            metrics["entropy_accuracy_correlation"] = entropy_accuracy_correlation(pairs)
        except ValidationError:
            metrics["entropy_accuracy_correlation"] = None

    report = {
        "aggregator": aggregator,
        "clients": client_rows,
        "adaptation": None if adapt is None else adapt.describe(),
        "metrics": metrics,
        "protocol": {
            "uploads": len(trace.uploads()),
            "server_to_client_messages": len(trace.downlinks()),
        },
    }
    return OneShotResult(server.global_params, report, trace, weights, stats)
