"""Federated round engine.

Full-participation rounds: every silo runs E local Adam mini-batch
updates, emits a SharedUpdate restricted to the strategy's shared key
set, and the coordinator takes the sample-count-weighted mean. Strategy
differences live entirely in the key partition (partition_keys) and the
FedProx gradient hook; Pooled and Local are degenerate loops over the
same local-update machinery.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .optim import AdamHyper, AdamState, adam_step

log = logging.getLogger("fedsilo.federation")

STRATEGIES = ("Pooled", "Local", "FedAvg", "FedProx", "SiloBN")


@dataclass
class FederationConfig:
    strategy: str = "SiloBN"
    rounds: int = 10
    local_updates: int = 10  # E
    batch_size: int = 32
    fedprox_lambda: float = 0.0
    hyper: AdamHyper = field(default_factory=AdamHyper)
    capture_updates: bool = False

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.fedprox_lambda < 0:
            raise ValueError("fedprox_lambda must be >= 0")
        if self.local_updates < 1:
            raise ValueError("local_updates (E) must be >= 1")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")


class BatchSampler:
    """Per-epoch shuffled mini-batches with wrap-around across epochs.

    The cursor carries over between rounds; when fewer than batch_size
    samples remain in the current permutation the remainder is joined
    with the head of a fresh shuffle.
    """

    def __init__(self, n, batch_size, rng):
        if n == 0:
            raise ValueError("empty local dataset")
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self.perm = rng.permutation(n)
        self.pos = 0

    def next_indices(self):
        take = []
        need = self.batch_size
        while need > 0:
            if self.pos == self.n:
                self.perm = self.rng.permutation(self.n)
                self.pos = 0
            grab = min(need, self.n - self.pos)
            take.append(self.perm[self.pos:self.pos + grab])
            self.pos += grab
            need -= grab
        return np.concatenate(take)


@dataclass
class SiloState:
    silo_id: int
    images: np.ndarray  # training split, NCHW
    labels: np.ndarray
    params: dict
    adam: AdamState
    sampler: BatchSampler

    @property
    def n_samples(self):
        return self.images.shape[0]


@dataclass
class SharedUpdate:
    silo_id: int
    round_index: int
    entries: dict  # (layer, name) -> array, restricted to the shared set
    n_samples: int


@dataclass
class RoundLog:
    round_index: int
    losses: dict  # silo_id -> mean loss over the E local steps
    communicated_keys: tuple
    update_blobs: dict = field(default_factory=dict)  # silo_id -> bytes


@dataclass
class FederationResult:
    global_shared: dict
    silos: list
    rounds: list


def silo_rng(global_seed, silo_id):
    """Per-silo stream: decorrelated across silos, reproducible per seed."""
    return np.random.default_rng(np.random.SeedSequence([global_seed, silo_id]))


def make_silo(silo_id, images, labels, spec, init_params, config, global_seed):
    params = nn.copy_params(init_params)
    adam = AdamState.init(params, nn.grad_keys(spec))
    rng = silo_rng(global_seed, silo_id)
    sampler = BatchSampler(images.shape[0], config.batch_size, rng)
    return SiloState(silo_id=silo_id, images=images, labels=labels,
                     params=params, adam=adam, sampler=sampler)


def partition_keys(spec, strategy):
    """Split parameter keys into (shared, local) for a strategy.

    SiloBN keeps BN statistics local; FedAvg/FedProx share everything;
    Local shares nothing. Pooled trains a single state, so the partition
    does not apply.
    """
    all_keys = list(nn.param_tags(spec))
    if strategy == "SiloBN":
        local = set(nn.stat_keys(spec))
        shared = [k for k in all_keys if k not in local]
        return shared, sorted(local)
    if strategy in ("FedAvg", "FedProx"):
        return all_keys, []
    if strategy == "Local":
        return [], all_keys
    raise ValueError(f"partition_keys does not apply to strategy {strategy!r}")


def fedprox_grad(base_grads, params, global_shared, lam):
    """Add the proximal pull lam * (theta - theta_global) on shared keys.

    BN statistics never receive gradients, so the penalty cannot touch
    them even under naive FedAvg key sets. lam == 0 returns base_grads
    unchanged (bit-identical FedAvg path).
    """
    if lam == 0.0:
        return base_grads
    out = {}
    for k, g in base_grads.items():
        if k in global_shared:
            out[k] = g + lam * (params[k] - global_shared[k])
        else:
            out[k] = g
    return out


def local_update(silo, spec, global_shared, config, round_index):
    """E local Adam steps starting from the broadcast shared entries."""
    for k, v in global_shared.items():
        silo.params[k][:] = v
    losses = []
    for _ in range(config.local_updates):
        idx = silo.sampler.next_indices()
        batch = silo.images[idx]
        labels = silo.labels[idx]
        logits, caches = nn.forward(spec, silo.params, batch, mode="train")
        grads, loss = nn.backward(spec, silo.params, caches, logits, labels)
        grads = fedprox_grad(grads, silo.params, global_shared,
                             config.fedprox_lambda)
        adam_step(silo.params, grads, silo.adam, config.hyper)
        losses.append(loss)
    entries = {k: silo.params[k].copy() for k in global_shared}
    return SharedUpdate(silo_id=silo.silo_id, round_index=round_index,
                        entries=entries, n_samples=silo.n_samples), float(np.mean(losses))


def aggregate(updates):
    """Sample-count-weighted mean of the shared entries.

    Reduction runs in ascending silo_id order so the floating-point
    result is independent of completion order.
    """
    if not updates:
        raise ValueError("no updates to aggregate")
    updates = sorted(updates, key=lambda u: u.silo_id)
    key_sets = [frozenset(u.entries) for u in updates]
    if any(ks != key_sets[0] for ks in key_sets[1:]):
        raise ValueError("inconsistent key sets across updates")
    total = sum(u.n_samples for u in updates)
    if total <= 0:
        raise ValueError("zero total sample weight")
    out = {}
    for k in updates[0].entries:
        acc = (updates[0].n_samples / total) * updates[0].entries[k]
        for u in updates[1:]:
            acc = acc + (u.n_samples / total) * u.entries[k]
        out[k] = acc
    return out


def run_federation(silos, spec, config):
    """Run T federated rounds (or the Pooled/Local degenerate loops).

    Returns the final global shared map (empty for Local/Pooled), the
    per-silo states, and one RoundLog per round. For federated strategies
    the final global entries are broadcast back into every silo, so each
    silo's params form its evaluation-ready model (global shared plus its
    own BN statistics under SiloBN).
    """
    config.validate()
    if not silos:
        raise ValueError("run_federation requires at least one silo")

    if config.strategy in ("Pooled", "Local"):
        rounds = []
        for t in range(config.rounds):
            losses = {}
            for silo in silos:
                _, loss = local_update(silo, spec, {}, config, t)
                losses[silo.silo_id] = loss
            rounds.append(RoundLog(round_index=t, losses=losses,
                                   communicated_keys=()))
        return FederationResult(global_shared={}, silos=silos, rounds=rounds)

    shared_keys, _ = partition_keys(spec, config.strategy)
    lam = config.fedprox_lambda if config.strategy == "FedProx" else 0.0
    cfg = FederationConfig(**{**config.__dict__, "fedprox_lambda": lam})
    global_shared = {k: silos[0].params[k].copy() for k in shared_keys}
    rounds = []
    for t in range(config.rounds):
        updates = []
        losses = {}
        for silo in silos:
            update, loss = local_update(silo, spec, global_shared, cfg, t)
            updates.append(update)
            losses[silo.silo_id] = loss
        global_shared = aggregate(updates)
        entry = RoundLog(
            round_index=t,
            losses=losses,
            communicated_keys=tuple(sorted(f"{k[0]}.{k[1]}" for k in shared_keys)),
        )
        if config.capture_updates:
            from . import dataio
            entry.update_blobs = {
                u.silo_id: dataio.serialize_shared_update(u) for u in updates
            }
        rounds.append(entry)
        log.debug("round %d losses %s", t, losses)
    for silo in silos:
        for k, v in global_shared.items():
            silo.params[k][:] = v
    return FederationResult(global_shared=global_shared, silos=silos, rounds=rounds)
