"""Federated round orchestration: protected and unprotected pipelines.

The protected path runs the full commitment protocol per round
(quantize, commit, sign, policy, aggregate, prove, per-client verify);
the unprotected baseline averages every update including poisoned ones.
Paired experiments share all per-round training seeds, so clean rounds
produce identical deltas in both arms and differences are attributable
to quantization (bounded) or to the attack (the point of the exercise).

Reported attack success rate is 0 before the attack's start epoch: no
poisoned data exists yet, so "attack success" is vacuous there; from the
start epoch on it is the measured source-to-target misclassification
fraction.
"""

from __future__ import annotations

import hashlib
import random
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..zkfed import (
    QuantizedVector,
    VerificationPolicy,
    aggregate,
    dequantize,
    make_client_update,
    quantize,
    serialize_broadcast,
    serialize_proof_component,
    setup,
    verify_aggregate,
)
from .data import Dataset, generate_synthetic
from .training import (
    AttackConfig,
    LocalModel,
    Shard,
    accuracy,
    attack_success_rate,
    flip_labels,
    local_train,
    mean_loss,
    model_dim,
)

__all__ = [
    "ExperimentConfig",
    "RoundRecord",
    "CryptoContext",
    "subseed",
    "make_shards",
    "run_round",
    "calibrate_norm_bound",
    "run_experiment",
    "metrics_csv_rows",
]


def subseed(seed: int, name: str) -> int:
    """Named 63-bit sub-seed: hash(seed, component-name)."""
    raw = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(raw[:8], "little") >> 1


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    epochs: int = 100
    n_clients: int = 5
    n_classes: int = 10
    d_in: int = 16
    n_train_per_class: int = 200
    n_test_per_class: int = 100
    separation: float = 3.0
    lr: float = 0.2
    local_epochs: int = 2
    batch_size: int = 32
    attack: AttackConfig | None = None
    norm_bound: float | None = None  # None: calibrate from clean rounds
    calibration_rounds: int = 20  # policy enforced from the next round on
    record_timings: bool = False
    dataset: Dataset | None = None


@dataclass(frozen=True)
class RoundRecord:
    epoch: int
    protected: bool
    accuracy: float
    loss: float
    asr: float
    rejected_ids: tuple[int, ...]
    payload_bytes: int
    overhead_bytes: int
    proof_gen_ms: float
    proof_verify_ms: float
    broadcast_ok: bool = True


@dataclass
class CryptoContext:
    params: object
    client_keys: list
    agg_key: object
    policy: VerificationPolicy
    rng: random.Random

    @classmethod
    def create(cls, seed: int, n_clients: int, norm_bound: float) -> "CryptoContext":
        params, client_keys, agg_key = setup(seed=seed, n_clients=n_clients)
        policy = VerificationPolicy(
            norm_bound=norm_bound,
            signers={i: k.public for i, k in enumerate(client_keys)},
        )
        return cls(
            params=params,
            client_keys=client_keys,
            agg_key=agg_key,
            policy=policy,
            rng=random.Random(seed ^ 0x5EED),
        )


def make_shards(dataset: Dataset, n_clients: int, seed: int) -> list[Shard]:
    """Equal-size IID shards (remainder samples are dropped)."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(dataset.x_train.shape[0])
    per = len(order) // n_clients
    if per == 0:
        raise ValueError("not enough training samples for the client count")
    return [
        Shard(
            dataset.x_train[order[i * per : (i + 1) * per]],
            dataset.y_train[order[i * per : (i + 1) * per]],
        )
        for i in range(n_clients)
    ]


def _client_deltas(
    model: LocalModel,
    shards: list[Shard],
    epoch: int,
    attack: AttackConfig | None,
    cfg: ExperimentConfig,
) -> list[np.ndarray]:
    deltas = []
    for i, shard in enumerate(shards):
        active = attack is not None and i == attack.malicious_id and epoch >= attack.start_epoch
        if active:
            shard = flip_labels(shard, attack)
        delta = local_train(
            model,
            shard,
            cfg.local_epochs,
            seed=subseed(cfg.seed, f"round{epoch}:client{i}"),
            batch_size=cfg.batch_size,
        )
        if active:
            delta = delta * attack.boost_factor
        deltas.append(delta)
    return deltas


def run_round(
    model: LocalModel,
    shards: list[Shard],
    dataset: Dataset,
    epoch: int,
    attack: AttackConfig | None,
    cfg: ExperimentConfig,
    crypto: CryptoContext | None,
    policy_active: bool = True,
) -> tuple[LocalModel, RoundRecord]:
    """One global round; ``crypto=None`` is the unprotected baseline.

    With ``policy_active=False`` the norm bound is suspended (signature
    and opening checks stay on); the experiment driver uses this during
    the aggregator's calibration window.
    """
    deltas = _client_deltas(model, shards, epoch, attack, cfg)
    d = model.weights.shape[0]
    rejected: tuple = ()
    broadcast_ok = True
    gen_ms = verify_ms = 0.0

    if crypto is None:
        mean_delta = np.mean(np.stack(deltas), axis=0)
        payload_bytes = 4 * d  # 32-bit weight broadcast analog
        overhead_bytes = 0
    else:
        updates = [
            make_client_update(
                i, epoch, quantize(delta), crypto.params, crypto.client_keys[i], crypto.rng
            )
            for i, delta in enumerate(deltas)
        ]
        policy = crypto.policy if policy_active else replace(
            crypto.policy, norm_bound=float("inf")
        )
        t0 = time.perf_counter() if cfg.record_timings else 0.0
        try:
            outcome = aggregate(
                updates, crypto.params, policy, crypto.agg_key, epoch, crypto.rng
            )
        except ValueError:
            # every update was rejected; nothing to broadcast this round
            return model, RoundRecord(
                epoch=epoch,
                protected=True,
                accuracy=accuracy(
                    model.weights, dataset.x_test, dataset.y_test, cfg.d_in, cfg.n_classes
                ),
                loss=mean_loss(
                    model.weights, dataset.x_test, dataset.y_test, cfg.d_in, cfg.n_classes
                ),
                asr=0.0
                if attack is None or epoch < attack.start_epoch
                else attack_success_rate(
                    model.weights, dataset.x_test, dataset.y_test, attack, cfg.d_in, cfg.n_classes
                ),
                rejected_ids=tuple(range(len(shards))),
                payload_bytes=0,
                overhead_bytes=0,
                proof_gen_ms=0.0,
                proof_verify_ms=0.0,
            )
        if cfg.record_timings:
            gen_ms = (time.perf_counter() - t0) * 1e3
        rejected = tuple(r.client_id for r in outcome.rejected)

        t0 = time.perf_counter() if cfg.record_timings else 0.0
        results = [
            verify_aggregate(outcome.proof, updates[i], crypto.params, crypto.agg_key.public)
            for i in outcome.accepted_ids
        ]
        if cfg.record_timings and outcome.accepted_ids:
            verify_ms = (time.perf_counter() - t0) * 1e3 / len(outcome.accepted_ids)
        broadcast_ok = all(r.accepted for r in results)

        raw = serialize_broadcast(outcome.proof)
        overhead_bytes = len(serialize_proof_component(outcome.proof))
        payload_bytes = len(raw) - overhead_bytes
        if broadcast_ok:
            mean_delta = dequantize(QuantizedVector(outcome.total)) / len(outcome.accepted_ids)
        else:
            mean_delta = np.zeros(d)  # clients raised an error; model unchanged

    new_model = model.replace_weights(model.weights + mean_delta)
    acc = accuracy(new_model.weights, dataset.x_test, dataset.y_test, cfg.d_in, cfg.n_classes)
    loss = mean_loss(new_model.weights, dataset.x_test, dataset.y_test, cfg.d_in, cfg.n_classes)
    if attack is not None and epoch >= attack.start_epoch:
        asr = attack_success_rate(
            new_model.weights, dataset.x_test, dataset.y_test, attack, cfg.d_in, cfg.n_classes
        )
    else:
        asr = 0.0
    record = RoundRecord(
        epoch=epoch,
        protected=crypto is not None,
        accuracy=acc,
        loss=loss,
        asr=asr,
        rejected_ids=rejected,
        payload_bytes=payload_bytes,
        overhead_bytes=overhead_bytes,
        proof_gen_ms=gen_ms,
        proof_verify_ms=verify_ms,
        broadcast_ok=broadcast_ok,
    )
    return new_model, record


def calibrate_norm_bound(cfg: ExperimentConfig, dataset: Dataset, shards: list[Shard]) -> float:
    """3x the median honest update norm over the clean calibration rounds.

    Replays the clean unprotected run (same per-round seeds as the real
    experiment) for ``calibration_rounds`` epochs and pools every client
    delta norm. The experiment driver enforces the resulting bound from
    the following round onward, mirroring an aggregator that must observe
    honest traffic before it can police it.
    """
    model = LocalModel.zeros(cfg.d_in, cfg.n_classes, cfg.lr)
    norms: list[float] = []
    for epoch in range(1, cfg.calibration_rounds + 1):
        deltas = _client_deltas(model, shards, epoch, None, cfg)
        norms.extend(float(np.linalg.norm(dl)) for dl in deltas)
        model = model.replace_weights(model.weights + np.mean(np.stack(deltas), axis=0))
    return 3.0 * float(np.median(norms))


def run_experiment(cfg: ExperimentConfig) -> tuple[list[RoundRecord], float]:
    """Paired protected/unprotected runs on identical seeds.

    Returns the per-epoch records (protected and unprotected row per
    epoch) and the norm bound in effect.
    """
    dataset = cfg.dataset
    if dataset is None:
        dataset = generate_synthetic(
            subseed(cfg.seed, "data"),
            n_classes=cfg.n_classes,
            d_in=cfg.d_in,
            n_train_per_class=cfg.n_train_per_class,
            n_test_per_class=cfg.n_test_per_class,
            separation=cfg.separation,
        )
    shards = make_shards(dataset, cfg.n_clients, subseed(cfg.seed, "shards"))
    norm_bound = cfg.norm_bound
    if norm_bound is None:
        norm_bound = calibrate_norm_bound(cfg, dataset, shards)

    crypto = CryptoContext.create(
        subseed(cfg.seed, "crypto"), cfg.n_clients, norm_bound
    )
    model_p = LocalModel.zeros(cfg.d_in, cfg.n_classes, cfg.lr)
    model_u = LocalModel.zeros(cfg.d_in, cfg.n_classes, cfg.lr)
    records: list[RoundRecord] = []
    for epoch in range(1, cfg.epochs + 1):
        # bound comes from a clean reference replay of the calibration
        # window; enforcement begins with its last round
        active = epoch >= cfg.calibration_rounds
        model_p, rec_p = run_round(
            model_p, shards, dataset, epoch, cfg.attack, cfg, crypto, policy_active=active
        )
        model_u, rec_u = run_round(model_u, shards, dataset, epoch, cfg.attack, cfg, None)
        records.append(rec_p)
        records.append(rec_u)
    return records, norm_bound


def metrics_csv_rows(records: list[RoundRecord]) -> list[str]:
    rows = [
        "epoch,protected,accuracy,loss,asr,rejected_ids,payload_bytes,"
        "overhead_bytes,proof_gen_ms,proof_verify_ms"
    ]
    for r in records:
        ids = ";".join(str(i) for i in r.rejected_ids)
        rows.append(
            f"{r.epoch},{int(r.protected)},{r.accuracy:.6f},{r.loss:.8g},{r.asr:.6f},"
            f"{ids},{r.payload_bytes},{r.overhead_bytes},"
            f"{r.proof_gen_ms:.3f},{r.proof_verify_ms:.3f}"
        )
    return rows
