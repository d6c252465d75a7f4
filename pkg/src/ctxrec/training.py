"""Mini-batch training with early stopping on a validation metric.

The validation metric is RMSE for explicit feedback and the un-attenuated
mean sampled loss (with negatives fixed by seed, so epochs are comparable)
for implicit feedback. Early stopping restores the best-epoch parameter
values. Per-epoch train losses and cumulative wall-clock are logged so
convergence curves can be rebuilt from the log alone.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import AdamConfig, adam_step, backward, no_grad
from .errors import ConfigError, StateError


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 40
    patience: int = 3
    min_delta: float = 1e-4  # an epoch counts as progress only past this margin
    plateau_decay: float | None = None  # halve-style lr cut on stall instead of stopping
    plateau_floor: float = 0.125  # stop once lr has decayed below floor * lr
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be positive")
        if self.plateau_decay is not None and not 0.0 < self.plateau_decay < 1.0:
            raise ConfigError("plateau_decay must lie in (0,1)")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_metric: float
    wall_seconds: float  # cumulative since training start


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("inf")
    wall_seconds: float = 0.0
    stopped_early: bool = False

    def time_to_reach(self, target_val: float) -> float:
        """Cumulative wall-clock at the first epoch with val <= target (else total)."""
        for e in self.epochs:
            if e.val_metric <= target_val:
                return e.wall_seconds
        return self.wall_seconds

    def time_at_best(self) -> float:
        """Cumulative wall-clock at the best epoch (total if none improved)."""
        if self.best_epoch > 0:
            return self.epochs[self.best_epoch - 1].wall_seconds
        return self.wall_seconds


def iterate_batches(n: int, batch_size: int, rng):
    perm = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield perm[lo : lo + batch_size]


def validation_metric(model, dataset, domain=None, adapters=None, seed: int = 1234,
                      split: str = "validation") -> float:
    """RMSE (explicit) or seeded-negative mean loss (implicit) over a split."""
    domain = domain or dataset.domain_id
    idx = dataset.split_indices(split)
    if len(idx) == 0:
        raise ConfigError(f"empty {split!r} split")
    if dataset.feedback == "explicit":
        preds = predict_ratings(model, dataset, idx, domain=domain, adapters=adapters)
        return float(np.sqrt(np.mean((dataset.ratings[idx] - preds) ** 2)))
    rng = np.random.default_rng(seed)
    cfg = model.config.loss_config()
    total, count = 0.0, 0
    with no_grad():
        for lo in range(0, len(idx), 1024):
            chunk = idx[lo : lo + 1024]
            _, reported = model.batch_loss(dataset, chunk, rng, domain=domain,
                                           adapters=adapters, training=False, loss_cfg=cfg)
            total += reported * len(chunk)
            count += len(chunk)
    return total / count


def predict_ratings(model, dataset, idx, domain=None, adapters=None,
                    chunk: int = 2048) -> np.ndarray:
    domain = domain or dataset.domain_id
    out = np.empty(len(idx), dtype=np.float64)
    for lo in range(0, len(idx), chunk):
        sel = idx[lo : lo + chunk]
        out[lo : lo + len(sel)] = model.score_batch(
            domain, dataset.users[sel], dataset.items[sel], dataset.contexts[sel],
            adapters=adapters,
        )
    return out


def train_model(model, dataset, tcfg: TrainConfig, domain=None, adapters=None,
                adam: AdamConfig | None = None, lr_for=None, max_epochs=None,
                early_stop: bool = True, site_penalty=None, epoch_hook=None) -> TrainLog:
    """Run the standard loop; mutates model parameters in place.

    `lr_for(name)` routes per-parameter learning rates (None skips the
    parameter); `site_penalty` is forwarded to the loss. Early stopping
    tracks the validation metric with the given patience and restores the
    best-epoch values on exit.
    """
    domain = domain or dataset.domain_id
    adam = adam or AdamConfig(lr=tcfg.lr)
    epochs = max_epochs if max_epochs is not None else tcfg.max_epochs
    train_idx = dataset.split_indices("train")
    if len(train_idx) == 0:
        raise ConfigError("empty train split")
    rng = np.random.default_rng([tcfg.seed, 0x7A])

    log = TrainLog()
    best_snap = None
    bad_epochs = 0
    lr_scale = 1.0
    t0 = time.perf_counter()
    for epoch in range(1, epochs + 1):
        total, seen = 0.0, 0
        for batch in iterate_batches(len(train_idx), tcfg.batch_size, rng):
            idx = train_idx[batch]
            loss, reported = model.batch_loss(dataset, idx, rng, domain=domain,
                                              adapters=adapters, training=True,
                                              site_penalty=site_penalty)
            if not np.isfinite(reported):
                raise StateError(f"non-finite training loss at epoch {epoch}")
            backward(loss)
            if lr_scale == 1.0:
                adam_step(model.store, adam, lr_for=lr_for)
            elif lr_for is None:
                adam_step(model.store, adam, lr_override=adam.lr * lr_scale)
            else:
                adam_step(model.store, adam,
                          lr_for=lambda n: (lambda r: None if r is None else r * lr_scale)(lr_for(n)))
            total += reported * len(idx)
            seen += len(idx)
        val = validation_metric(model, dataset, domain=domain, adapters=adapters)
        log.epochs.append(EpochLog(epoch, total / seen, val, time.perf_counter() - t0))
        if epoch_hook is not None:
            epoch_hook(epoch, log.epochs[-1])
        if val < log.best_val - tcfg.min_delta:
            log.best_val = val
            log.best_epoch = epoch
            bad_epochs = 0
            if early_stop:
                best_snap = model.store.snapshot()
        else:
            bad_epochs += 1
            if early_stop and bad_epochs > tcfg.patience:
                if tcfg.plateau_decay is not None:
                    lr_scale *= tcfg.plateau_decay
                    if lr_scale >= tcfg.plateau_floor:
                        # rewind to the best point and continue more gently
                        if best_snap is not None:
                            model.store.restore(best_snap)
                        bad_epochs = 0
                        continue
                log.stopped_early = True
                break
    log.wall_seconds = time.perf_counter() - t0
    if early_stop and best_snap is not None:
        model.store.restore(best_snap)
    return log
