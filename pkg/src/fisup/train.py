"""Mini-batch training with Adam, Dev-based selection, checkpointing.

A run is fully determined by (configs, seed): parameter init, per-epoch data
order, objective sampling, and the frozen random-supervision permutations all
derive from independent streams spawned off the run seed. The checkpoint kept
is the one maximizing Dev accuracy (earliest epoch wins ties).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .model import ModelConfig, init_params, params_to_nodes, predict_batch, save_checkpoint
from .objectives import composite_loss, frozen_random_supervision
from .validation import ContractError


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    eval_every: int = 1
    hidden_dim: int = 64
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be >= 1")
        return self


@dataclass
class RunRecord:
    seed: int
    preset: str
    config_hash: str
    epoch_losses: list = field(default_factory=list)   # one dict per epoch
    dev_acc_trace: list = field(default_factory=list)  # (epoch, acc) pairs
    best_epoch: int = -1
    best_dev_acc: float = -1.0
    checkpoint_id: str = ""
    diverged: bool = False
    diagnostic: str = ""
    metrics: dict | None = None
    params: dict | None = None  # best checkpoint arrays; not serialized

    def to_dict(self):
        return {
            "seed": self.seed,
            "preset": self.preset,
            "config_hash": self.config_hash,
            "epoch_losses": self.epoch_losses,
            "dev_acc_trace": self.dev_acc_trace,
            "best_epoch": self.best_epoch,
            "best_dev_acc": self.best_dev_acc,
            "checkpoint_id": self.checkpoint_id,
            "diverged": self.diverged,
            "diagnostic": self.diagnostic,
            "metrics": self.metrics,
        }


class AdamState:
    def __init__(self, params):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, lr, beta1, beta2, eps):
        self.t += 1
        bc1 = 1.0 - beta1 ** self.t
        bc2 = 1.0 - beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * g
            self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * g * g
            params[k] = params[k] - lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + eps)


def dev_accuracy(params, instances):
    preds = predict_batch(params, instances)
    labels = np.array([i.label for i in instances])
    return float(np.mean(preds == labels))


def train_run(train_instances, dev_instances, model_config, train_config,
              objective_config, seed, n_answers=None, run_dir=None, config_hash=""):
    """One seeded training run; returns the RunRecord with the best params.

    Aborts with a diagnostic record (diverged=True) if the loss goes
    non-finite.
    """
    train_config.validate()
    objective_config.validate()
    if not train_instances or not dev_instances:
        raise ContractError("train and dev splits must be nonempty")
    if any(i.important_mask is None for i in train_instances):
        raise ContractError("binarize the dataset before training")

    streams = np.random.SeedSequence(seed).spawn(4)
    params = init_params(model_config, streams[0])
    order_rng = np.random.default_rng(streams[1])
    objective_rng = np.random.default_rng(streams[2])
    rand_sup = None
    if objective_config.random_supervision:
        rand_sup = frozen_random_supervision(
            train_instances, np.random.default_rng(streams[3]).integers(2 ** 31))

    record = RunRecord(seed=seed, preset=objective_config.preset, config_hash=config_hash)
    adam = AdamState(params)
    names = sorted(params)
    best_params = {k: v.copy() for k, v in params.items()}
    n = len(train_instances)
    log_fh = None
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        log_fh = open(os.path.join(run_dir, "epochs.jsonl"), "w")

    try:
        for epoch in range(train_config.epochs):
            order = order_rng.permutation(n)
            sums, count = {}, 0
            for lo in range(0, n, train_config.batch_size):
                batch = [train_instances[i] for i in order[lo:lo + train_config.batch_size]]
                pnodes = params_to_nodes(params, trainable=True)
                total, breakdown = composite_loss(pnodes, batch, objective_config,
                                                  objective_rng, rand_sup=rand_sup,
                                                  n_answers=n_answers)
                if not np.isfinite(total.value):
                    record.diverged = True
                    record.diagnostic = (f"non-finite loss at epoch {epoch} "
                                         f"step {lo // train_config.batch_size}: {breakdown}")
                    return record
                leaves = [pnodes[k] for k in names]
                grads = ad.gradient(total, leaves)
                adam.step(params, {k: grads[pnodes[k]] for k in names},
                          train_config.learning_rate, train_config.adam_beta1,
                          train_config.adam_beta2, train_config.adam_eps)
                for k, v in breakdown.items():
                    sums[k] = sums.get(k, 0.0) + v * len(batch)
                count += len(batch)

            epoch_losses = {k: v / count for k, v in sums.items()}
            record.epoch_losses.append(epoch_losses)

            if (epoch + 1) % train_config.eval_every == 0 or epoch == train_config.epochs - 1:
                acc = dev_accuracy(params, dev_instances)
                record.dev_acc_trace.append([epoch, acc])
                if acc > record.best_dev_acc:
                    record.best_dev_acc = acc
                    record.best_epoch = epoch
                    best_params = {k: v.copy() for k, v in params.items()}
            if log_fh is not None:
                entry = {"epoch": epoch, "losses": epoch_losses,
                         "dev_acc": record.dev_acc_trace[-1][1]
                         if record.dev_acc_trace and record.dev_acc_trace[-1][0] == epoch else None,
                         "config_hash": config_hash}
                log_fh.write(json.dumps(entry) + "\n")
    finally:
        if log_fh is not None:
            log_fh.close()

    record.checkpoint_id = f"epoch{record.best_epoch}"
    record.params = best_params
    if run_dir is not None:
        save_checkpoint(os.path.join(run_dir, "checkpoint.npz"), best_params,
                        meta={"config_hash": config_hash, "seed": seed,
                              "preset": objective_config.preset,
                              "checkpoint_id": record.checkpoint_id})
        with open(os.path.join(run_dir, "run_record.json"), "w") as fh:
            json.dump(record.to_dict(), fh, indent=1, sort_keys=True)
    return record
