"""Moving shared layers from a dense source domain to sparse targets.

Three strategies, in increasing order of adaptation:

direct   copy the shared-layer values ("m1.", "m3.", "m4.") bitwise into a
         pretrained target model; embeddings ("m2.") never move.
anneal   after the copy, run one epoch in which shared layers step with an
         exponentially decaying learning rate eta0*exp(-lambda*b) (batch
         index b = 1, 2, ... within the epoch) while embeddings keep the
         full rate, then keep training embeddings alone to convergence.
         The rates vanish as lambda grows, so the infinite-lambda limit
         degenerates to direct transfer plus embedding training.
drr      freeze the shared layers entirely; learn a bounded residual input
         adapter per site (first pooled context level, gated user/item
         embeddings) plus the embeddings. Source-trained variational
         regularizers pull each adapted input distribution toward the
         region the source layers were trained on.

The regularizer for each site is a one-class boundary trained on source
inputs only: a variational encoder maps clean inputs near N(0, I) while an
adversarial poisoner generates sample-adaptive corruptions the encoder
must push away; a -log||P(x)|| term keeps the poisoner from collapsing to
zero noise. The raw clean-vs-poisoned KL difference is unstable (the push
term is unbounded), so the encoder trains on its margin-hinged form
    KL(clean) + max(0, margin - (KL(poisoned) - KL(clean)))
which stops pushing once the gap clears the margin; the poisoner output is
tanh-bounded and trained by clipped SGD so it is stationary wherever the
encoder leaves no gradient. Multiple targets can adapt concurrently as
independent jobs reading one frozen source checkpoint.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import Checkpoint
from .core import (
    AdamConfig,
    Tensor,
    adam_step,
    add,
    backward,
    exp,
    linear,
    log,
    mean,
    mul,
    no_grad,
    relu,
    slice_rows,
    sqrt,
    square,
    sum_,
    tanh,
    tensor,
)
from .errors import ConfigError, StateError, TransferError
from .model import SHARED_PREFIXES, Recommender
from .model.adapters import SITES, residual_forward  # noqa: F401  (re-exported surface)
from .training import TrainConfig, iterate_batches, train_model, validation_metric


@dataclass
class AnnealSettings:
    eta0: float | None = None  # default: the Adam learning rate in use
    lam: float | None = None  # default: ln(1000)/batches_per_epoch
    embed_epochs: int | None = None  # embedding-only epochs after annealing; None = early stop


@dataclass
class DrrSettings:
    reg_weight: float = 0.1
    latent: int | None = None  # default max(8, site_width // 4)
    hidden: int | None = None  # default 2 * latent
    reg_epochs: int = 5
    reg_lr: float = 1e-2  # encoder Adam rate; the poisoner runs SGD at half this
    adapt_epochs: int | None = None  # None = early stop
    regularize_pre_residual: bool = False  # regularize raw instead of adapted inputs


@dataclass
class TransferPlan:
    method: str = "drr"
    pretrain_epochs: int = 2
    anneal: AnnealSettings = field(default_factory=AnnealSettings)
    drr: DrrSettings = field(default_factory=DrrSettings)

    def __post_init__(self):
        if self.method not in ("direct", "anneal", "drr"):
            raise ConfigError(f"unknown transfer method {self.method!r}")
        if self.anneal.eta0 is not None and self.anneal.eta0 <= 0:
            raise ConfigError("anneal eta0 must be positive")
        if self.anneal.lam is not None and self.anneal.lam <= 0:
            raise ConfigError("anneal lambda must be positive")


# -- direct layer-transfer ---------------------------------------------------------


def direct_transfer(source: Checkpoint | Recommender, target: Recommender) -> list[str]:
    """Copy every shared-prefix parameter bitwise from source into target.

    Embedding parameters are untouched. The Adam moments of the copied
    parameters are reset (they described the pre-replacement trajectory).
    Returns the copied names; raises TransferError listing any mismatch.
    """
    if isinstance(source, Recommender):
        src_cfg = source.config.to_dict()
        src_arrays = {n: source.store[n].tensor for n in source.shared_names()}
    else:
        src_cfg = source.config
        src_arrays = {
            n: a for n, a in source.arrays.items()
            if any(n.startswith(p) for p in SHARED_PREFIXES)
        }
    target.check_compatible(src_cfg)

    tgt_shared = set(target.shared_names())
    missing = sorted(tgt_shared - set(src_arrays)) + sorted(set(src_arrays) - tgt_shared)
    if missing:
        raise TransferError(f"shared parameter sets differ: {missing}")
    bad = [
        n for n in src_arrays
        if tuple(src_arrays[n].shape) != tuple(target.store[n].tensor.shape)
    ]
    if bad:
        raise TransferError(f"shared parameter shapes differ: {sorted(bad)}")

    for n, arr in src_arrays.items():
        p = target.store[n]
        np.copyto(p.tensor, arr.astype(p.tensor.dtype, copy=False))
        p.adam_m[...] = 0.0
        p.adam_v[...] = 0.0
        p.zero_grad()
    return sorted(src_arrays)


# -- simulated annealing -------------------------------------------------------------


def anneal_lr(b: int, eta0: float, lam: float) -> float:
    """Exponentially decayed rate eta0 * exp(-lambda * b) for batch index b."""
    if b < 0:
        raise ConfigError("batch index must be non-negative")
    return eta0 * math.exp(-lam * b)


def anneal_adapt(model: Recommender, dataset, plan: TransferPlan, tcfg: TrainConfig,
                 domain: str | None = None, epoch_hook=None):
    """Anneal transferred layers for one epoch, then train embeddings only.

    Precondition: direct_transfer already applied and the target pretrained.
    During the annealing epoch the shared layers step at anneal_lr(b) with
    b counting batches from 1 (so large lambda leaves them untouched) while
    the domain's embeddings keep the full rate. Subsequent epochs update
    embeddings only, to early stop unless plan.anneal.embed_epochs pins a
    count. Returns (train_log, lr_schedule) where lr_schedule is the exact
    [(b, lr)] sequence used.
    """
    domain = domain or dataset.domain_id
    train_idx = dataset.split_indices("train")
    batches_per_epoch = max(1, math.ceil(len(train_idx) / tcfg.batch_size))
    eta0 = plan.anneal.eta0 if plan.anneal.eta0 is not None else tcfg.lr
    lam = plan.anneal.lam if plan.anneal.lam is not None else math.log(1000.0) / batches_per_epoch

    embed_prefix = f"m2.{domain}."
    adam = AdamConfig(lr=eta0)
    rng = np.random.default_rng([tcfg.seed, 0xA0])
    schedule = []

    b = 0
    for batch in iterate_batches(len(train_idx), tcfg.batch_size, rng):
        b += 1
        eta_b = anneal_lr(b, eta0, lam)
        schedule.append((b, eta_b))

        def lr_for(name, _eta=eta_b):
            if name.startswith(embed_prefix):
                return eta0
            if any(name.startswith(p) for p in SHARED_PREFIXES):
                return _eta
            return None  # other domains' parameters stay put

        loss, reported = model.batch_loss(dataset, train_idx[batch], rng,
                                          domain=domain, training=True)
        if not np.isfinite(reported):
            raise StateError("non-finite loss during annealing epoch")
        backward(loss)
        adam_step(model.store, adam, lr_for=lr_for)

    def embeds_only(name):
        return eta0 if name.startswith(embed_prefix) else None

    # subsequent epochs touch embeddings only; freezing the shared layers
    # skips their gradient work without changing what trains
    embed_epochs = plan.anneal.embed_epochs
    for p in SHARED_PREFIXES:
        model.store.set_trainable(p, False)
    try:
        log = train_model(
            model, dataset, tcfg, domain=domain, adam=adam, lr_for=embeds_only,
            max_epochs=embed_epochs, early_stop=embed_epochs is None,
            epoch_hook=epoch_hook,
        )
    finally:
        for p in SHARED_PREFIXES:
            model.store.set_trainable(p, True)
    return log, schedule


# -- distributional regularizers ------------------------------------------------------


def kl_standard_normal(mu, logvar) -> Tensor:
    """Closed-form KL(N(mu, diag(exp(logvar))) || N(0, I)) summed over dims."""
    mu = mu if isinstance(mu, Tensor) else tensor(mu)
    logvar = logvar if isinstance(logvar, Tensor) else tensor(logvar)
    inner = add(add(exp(logvar), square(mu)), add(-1.0 * logvar, -1.0))
    return mul(sum_(inner), 0.5)


def kl_rows(mu: Tensor, logvar: Tensor) -> Tensor:
    """Per-row KL for batched (B, z) encodings."""
    inner = add(add(exp(logvar), square(mu)), add(-1.0 * logvar, -1.0))
    return mul(sum_(inner, axis=1), 0.5)


class DistRegularizer:
    """Variational encoder + adversarial poisoner for one adaptation site.

    Parameters live under "reg.<site>.": enc.h / enc.mu / enc.logvar and
    poison.h / poison.out (each a .W/.b pair). The encoder maps a site
    input to (mu, logvar) of a z-dim Gaussian; the poisoner emits
    sample-adaptive additive noise of the site's width.
    """

    def __init__(self, store, site: str, width: int, latent: int | None = None,
                 hidden: int | None = None, rng=None, attach: bool = True):
        if site not in SITES:
            raise ConfigError(f"unknown adaptation site {site!r}")
        self.store = store
        self.site = site
        self.width = width
        self.z = latent if latent is not None else max(8, width // 4)
        self.h = hidden if hidden is not None else 2 * self.z
        if attach:
            rng = rng or np.random.default_rng(0)
            p = self.prefix
            he_in = math.sqrt(2.0 / width)
            store.add(f"{p}.enc.h.W", rng.uniform(-he_in, he_in, size=(self.h, width)))
            store.add(f"{p}.enc.h.b", np.zeros(self.h))
            store.add(f"{p}.enc.mu.W", rng.uniform(-0.01, 0.01, size=(self.z, self.h)))
            store.add(f"{p}.enc.mu.b", np.zeros(self.z))
            store.add(f"{p}.enc.logvar.W", rng.uniform(-0.01, 0.01, size=(self.z, self.h)))
            store.add(f"{p}.enc.logvar.b", np.zeros(self.z))
            store.add(f"{p}.poison.h.W", rng.uniform(-he_in, he_in, size=(self.h, width)))
            store.add(f"{p}.poison.h.b", np.zeros(self.h))
            # noise output starts near zero; only the norm reward grows it
            store.add(f"{p}.poison.out.W", rng.uniform(-0.001, 0.001, size=(width, self.h)))
            store.add(f"{p}.poison.out.b", np.zeros(width))

    @property
    def prefix(self) -> str:
        return f"reg.{self.site}"

    @classmethod
    def from_store(cls, store, site: str) -> "DistRegularizer":
        name = f"reg.{site}.enc.h.W"
        if name not in store:
            raise ConfigError(f"store has no regularizer for site {site!r}")
        h, width = store[name].tensor.shape
        z = store[f"reg.{site}.enc.mu.W"].tensor.shape[0]
        return cls(store, site, width, latent=z, hidden=h, attach=False)

    def _pair(self, tail):
        return self.store.leaf(f"{self.prefix}.{tail}.W"), self.store.leaf(
            f"{self.prefix}.{tail}.b"
        )

    def encode(self, x) -> tuple[Tensor, Tensor]:
        W, b = self._pair("enc.h")
        h = relu(add(linear(x, W), b))
        mW, mb = self._pair("enc.mu")
        lW, lb = self._pair("enc.logvar")
        return add(linear(h, mW), mb), add(linear(h, lW), lb)

    def poison(self, x) -> Tensor:
        W, b = self._pair("poison.h")
        h = relu(add(linear(x, W), b))
        oW, ob = self._pair("poison.out")
        return tanh(add(linear(h, oW), ob))  # bounded sample-adaptive noise

    def sample(self, mu: Tensor, logvar: Tensor, xi) -> Tensor:
        """Reparametrized draw mu + exp(logvar/2) * xi for fixed noise xi."""
        return add(mu, mul(exp(mul(logvar, 0.5)), np.asarray(xi)))

    def clean_kl(self, x) -> Tensor:
        mu, logvar = self.encode(x)
        return mean(kl_rows(mu, logvar))


def train_regularizer(site_inputs: np.ndarray, reg: DistRegularizer, epochs: int,
                      rng, lr: float = 1e-2, batch_size: int = 256,
                      include_norm_term: bool = True, kl_guard: float = 1e3,
                      margin: float | None = None, warmup_epochs: int = 2):
    """Alternating one-class training of the encoder/poisoner pair.

    Per batch: one encoder step minimizing the margin-hinged separation
    loss KL(clean) + max(0, margin - (KL(poisoned) - KL(clean))), then one
    poisoner step minimizing KL(poisoned) - log(||P(x)|| + eps). The norm
    term (removable for ablation) blocks the degenerate P(x) = 0 solution:
    without it the bounded poisoner has no incentive to leave the clean
    basin and its noise stays collapsed near zero. The first warmup_epochs
    train the encoder only; both learning rates decay exponentially to 1%
    over the run (the poisoner uses clipped SGD at lr/2, so it is
    stationary wherever the encoder leaves no gradient). Aborts with
    diagnostics if KL(clean) diverges past kl_guard.
    """
    x_all = np.asarray(site_inputs)
    if x_all.ndim != 2 or x_all.shape[1] != reg.width:
        raise ConfigError(f"site inputs must be (N, {reg.width}), got {x_all.shape}")
    store = reg.store
    enc_prefix, poison_prefix = f"{reg.prefix}.enc", f"{reg.prefix}.poison"
    poison_names = store.names(poison_prefix)
    adam_enc = AdamConfig(lr=lr)
    poison_lr = 0.5 * lr
    margin = margin if margin is not None else 0.5 * reg.z
    eps = 1e-8
    total_steps = max(1, epochs * math.ceil(len(x_all) / batch_size))
    step = 0

    for epoch in range(epochs):
        for batch in iterate_batches(len(x_all), batch_size, rng):
            decay = math.exp(-math.log(100.0) * step / max(1, total_steps - 1))
            step += 1
            x = tensor(x_all[batch])
            with no_grad():
                noise_const = reg.poison(x).data.copy()
            x_poisoned = add(x, noise_const)

            # encoder step: pull clean toward N(0,I), push the gap past the margin
            mu_c, lv_c = reg.encode(x)
            mu_p, lv_p = reg.encode(x_poisoned)
            kl_c, kl_p = kl_rows(mu_c, lv_c), kl_rows(mu_p, lv_p)
            gap_hinge = mean(relu(add(add(-1.0 * kl_p, kl_c), margin)))
            enc_loss = add(mean(kl_c), gap_hinge)
            backward(enc_loss)
            adam_step(store, adam_enc,
                      lr_for=lambda n: lr * decay if n.startswith(enc_prefix) else None)

            if epoch < warmup_epochs:
                store.zero_grads(reg.prefix)
                continue

            # poisoner step: sneak poisoned mass back in, stay away from zero noise
            store.set_trainable(enc_prefix, False)
            noise = reg.poison(x)
            mu_a, lv_a = reg.encode(add(x, noise))
            poison_loss = mean(kl_rows(mu_a, lv_a))
            if include_norm_term:
                # eps inside the sqrt keeps the gradient finite at zero noise
                norms = sqrt(add(sum_(square(noise), axis=1), eps * eps))
                poison_loss = add(poison_loss, -1.0 * mean(log(add(norms, eps))))
            backward(poison_loss)
            for name in poison_names:
                p = store[name]
                p.tensor -= (poison_lr * decay) * np.clip(p.grad, -1.0, 1.0)
                p.zero_grad()
            store.set_trainable(enc_prefix, True)
            store.zero_grads(enc_prefix)

        with no_grad():
            probe = x_all[: min(len(x_all), 1024)]
            kl_now = float(reg.clean_kl(tensor(probe)).data)
        if kl_now > kl_guard:
            raise StateError(
                f"regularizer diverged at epoch {epoch + 1}: "
                f"clean KL {kl_now:.3g} > guard {kl_guard:.3g} (site {reg.site})"
            )
    return reg


def collect_site_inputs(model: Recommender, dataset, domain: str | None = None,
                        adapters: str | None = None, chunk: int = 2048) -> dict:
    """Frozen-forward site values over the train split: site -> (N, width)."""
    domain = domain or dataset.domain_id
    idx = dataset.split_indices("train")
    out = {site: [] for site in SITES}
    with no_grad():
        for lo in range(0, len(idx), chunk):
            sel = idx[lo : lo + chunk]
            fwd = model.forward(domain, dataset.users[sel], dataset.items[sel],
                                dataset.contexts[sel], training=False, adapters=adapters)
            out["c2"].append(fwd.c2.data.copy())
            out["gated_user"].append(fwd.gated_user.data.copy())
            out["gated_item"].append(fwd.gated_item.data.copy())
    return {site: np.concatenate(rows) for site, rows in out.items()}


def train_source_regularizers(model: Recommender, dataset, plan: TransferPlan,
                              seed: int = 0, domain: str | None = None) -> dict:
    """Fit one DistRegularizer per adaptation site on source-domain inputs."""
    inputs = collect_site_inputs(model, dataset, domain=domain)
    regs = {}
    for site in SITES:
        rng = np.random.default_rng([seed, 0xE0, SITES.index(site)])
        reg = DistRegularizer(model.store, site, inputs[site].shape[1],
                              latent=plan.drr.latent, hidden=plan.drr.hidden, rng=rng)
        train_regularizer(inputs[site], reg, plan.drr.reg_epochs, rng, lr=plan.drr.reg_lr)
        regs[site] = reg
    return regs


# -- DRR adaptation --------------------------------------------------------------------


def drr_adapt(model: Recommender, dataset, plan: TransferPlan, regs: dict,
              tcfg: TrainConfig, domain: str | None = None, epoch_hook=None):
    """Train residual adapters + embeddings under distributional regularization.

    Precondition: direct_transfer applied and regularizers trained on the
    source. Shared-module parameters are frozen for the whole run; only the
    zero-initialized adapters and this domain's embeddings move. The batch
    loss gains reg_weight * sum over sites of the mean KL of the encoded
    (post-residual) site values.
    """
    domain = domain or dataset.domain_id
    for site in SITES:
        if site not in regs:
            raise ConfigError(f"missing pre-trained regularizer for site {site!r}")
    prefix = f"adapter.{domain}."
    if f"{prefix}c2.W" not in model.store:
        model.add_adapters(domain)

    weight = plan.drr.reg_weight
    pre_residual = plan.drr.regularize_pre_residual

    def site_penalty(fwd, n_pos):
        if pre_residual and fwd.sites_raw:
            vals = dict(fwd.sites_raw)
        else:
            vals = {"c2": fwd.c2, "gated_user": fwd.gated_user,
                    "gated_item": fwd.gated_item}
        total = None
        for site, val in vals.items():
            rows = slice_rows(val, 0, n_pos) if val.data.shape[0] != n_pos else val
            mu, logvar = regs[site].encode(rows)
            term = mean(kl_rows(mu, logvar))
            total = term if total is None else add(total, term)
        return mul(total, weight)

    for p in SHARED_PREFIXES:
        model.store.set_trainable(p, False)
    model.store.set_trainable("reg.", False)
    try:
        log = train_model(
            model, dataset, tcfg, domain=domain, adapters=domain,
            max_epochs=plan.drr.adapt_epochs, early_stop=plan.drr.adapt_epochs is None,
            site_penalty=site_penalty, epoch_hook=epoch_hook,
        )
    finally:
        for p in SHARED_PREFIXES:
            model.store.set_trainable(p, True)
        model.store.set_trainable("reg.", True)
    return log


# -- whole-path convenience -----------------------------------------------------------


def adapt_target(model: Recommender, dataset, plan: TransferPlan, source,
                 tcfg: TrainConfig, regs: dict | None = None, domain: str | None = None):
    """Pretrain -> direct transfer -> method-specific adaptation.

    `source` is a source Recommender or Checkpoint; `regs` (site ->
    DistRegularizer) is required for method "drr". The returned info
    carries the total wall-clock, the final validation metric, and a
    `quality_trajectory` of (wall_seconds_since_start, validation_metric)
    points so time-to-quality comparisons against from-scratch training
    can be made at any quality level.
    """
    domain = domain or dataset.domain_id
    t0 = time.perf_counter()
    trajectory: list[tuple[float, float]] = []

    def hook(epoch, entry):
        trajectory.append((time.perf_counter() - t0, entry.val_metric))

    train_model(model, dataset, tcfg, domain=domain,
                max_epochs=plan.pretrain_epochs, early_stop=False)
    direct_transfer(source, model)
    info = {"method": plan.method, "schedule": None, "log": None}
    if plan.method == "direct":
        trajectory.append((time.perf_counter() - t0,
                           validation_metric(model, dataset, domain=domain)))
    elif plan.method == "anneal":
        info["log"], info["schedule"] = anneal_adapt(
            model, dataset, plan, tcfg, domain=domain, epoch_hook=hook)
    elif plan.method == "drr":
        if regs is None:
            raise ConfigError("drr adaptation needs source-trained regularizers")
        info["log"] = drr_adapt(model, dataset, plan, regs, tcfg, domain=domain,
                                epoch_hook=hook)
    info["wall_seconds"] = time.perf_counter() - t0
    adapters = domain if plan.method == "drr" else None
    info["val_metric"] = validation_metric(model, dataset, domain=domain,
                                           adapters=adapters)
    info["quality_trajectory"] = trajectory
    return info
