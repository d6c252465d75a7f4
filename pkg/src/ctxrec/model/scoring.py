"""Scoring head and training losses.

The context-bias s_c = w . pooled + b is an inverse-novelty scalar: common
context combinations score high, rare ones low. It enters twice — added to
every prediction, and subtracted from each observed interaction's loss so
training weight shifts toward novel interactions as the easy mass is
absorbed. An L2 guard on (w, b) keeps the subtracted term from growing
without bound; gradients flow through both uses.

Implicit feedback trains against sampled corruptions (squared pull of the
observed triple toward 1, squared push of item- and context-corrupted
triples toward 0). Explicit feedback is plain squared rating error; no
negative samples are involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Tensor, add, dotv, mean, reshape, rowdot, slice_cols, square, sum_
from ..data import DomainDataset, sample_negative_arrays
from ..errors import ConfigError


@dataclass
class LossConfig:
    feedback: str
    context_bias: bool = True
    attenuation: bool = True
    n_item_neg: int = 1
    n_ctx_neg: int = 1
    curriculum_l2: float = 1e-3

    def __post_init__(self):
        if self.feedback not in ("implicit", "explicit"):
            raise ConfigError(f"bad feedback mode {self.feedback!r}")
        if self.n_item_neg < 0 or self.n_ctx_neg < 0:
            raise ConfigError("negative counts cannot be negative")
        # full experiment configs additionally require >= 1 of each kind in
        # implicit mode (ModelConfig enforces it); direct construction may
        # zero one family for diagnostics
        if self.feedback == "implicit" and self.n_item_neg + self.n_ctx_neg < 1:
            raise ConfigError("implicit feedback training needs at least one negative")


class ScoringHead:
    """Parameters m4.w (|C|,) and m4.b (scalar), both zero-initialized."""

    _WEIGHT_L2 = 1e-4  # mild boundedness on the head weights themselves

    def __init__(self, store, cfg):
        self.store = store
        store.add("m4.w", np.zeros(cfg.n_features))
        store.add("m4.b", np.asarray(0.0))

    def context_bias(self, pooled) -> Tensor:
        return add(dotv(pooled, self.store.leaf("m4.w")), self.store.leaf("m4.b"))

    def curriculum_guard(self, s_c: Tensor) -> Tensor:
        """Penalty countering the attenuation's free upward push.

        The -s_c attenuation rewards raising the *mean* of s_c without
        bound; squaring the batch mean penalizes exactly that direction
        (equilibrium offset 1/(2*weight)) while leaving the variance of
        s_c free to model genuine context effects. A small weight-norm
        term keeps the head bounded overall.
        """
        w, b = self.store.leaf("m4.w"), self.store.leaf("m4.b")
        norm = add(sum_(square(w)), square(b))
        return add(square(mean(s_c)), self._WEIGHT_L2 * norm)


def score_implicit(final_u, final_v, s_c=None) -> Tensor:
    """Interaction likelihood: final_u . final_v (+ context bias when enabled)."""
    s = rowdot(final_u, final_v)
    return s if s_c is None else add(s, s_c)


def score_explicit(final_u, final_v, s_c, s_u, s_v, s_global) -> Tensor:
    """Predicted rating: dot product plus context/user/item/global biases."""
    r = add(rowdot(final_u, final_v), add(s_u, add(s_v, s_global)))
    return r if s_c is None else add(r, s_c)


def _attenuate(per_row: Tensor, fwd, cfg: LossConfig, head: ScoringHead):
    """(training_loss, reported_loss_value): subtract s_c per row when enabled.

    The reported number stays un-attenuated; attenuation shapes gradients
    only. The L2 guard on the bias parameters rides along with the
    training loss.
    """
    loss = mean(per_row)
    reported = float(loss.data)
    if cfg.attenuation and cfg.context_bias and fwd.s_c is not None:
        loss = add(loss, -1.0 * mean(fwd.s_c))
        loss = add(loss, cfg.curriculum_l2 * head.curriculum_guard(fwd.s_c))
    return loss, reported


def loss_implicit(model, dataset: DomainDataset, batch_idx, cfg: LossConfig, rng,
                  domain: str | None = None, adapters: str | None = None,
                  training: bool = True, site_penalty=None):
    """Sampled ranking loss over one batch of observed interactions.

    Per positive: ||1 - s(u,c,v)||^2 plus the squared scores of n_item_neg
    item corruptions (u,c,v-) and n_ctx_neg context corruptions (u,c-,v).
    `site_penalty(fwd, n_positive)` may contribute an extra regularization
    term (the distributional adapters use this). Returns
    (loss_node, reported_value); reported is the un-attenuated task mean.
    """
    if dataset.feedback != "implicit":
        raise ConfigError("loss_implicit requires an implicit-feedback dataset")
    domain = domain or dataset.domain_id
    b = len(batch_idx)
    ni, nc = cfg.n_item_neg, cfg.n_ctx_neg
    neg_items, neg_ctx_rows = sample_negative_arrays(dataset, batch_idx, ni, nc, rng)

    users = dataset.users[batch_idx]
    items = dataset.items[batch_idx]
    ctx = dataset.contexts[batch_idx]
    all_users = np.concatenate([users, np.repeat(users, ni), np.repeat(users, nc)])
    all_items = np.concatenate([items, neg_items.reshape(-1), np.repeat(items, nc)])
    all_ctx = np.concatenate(
        [ctx, np.repeat(ctx, ni, axis=0), dataset.contexts[neg_ctx_rows.reshape(-1)]]
    )

    fwd = model.forward(domain, all_users, all_items, all_ctx,
                        training=training, rng=rng, adapters=adapters)
    pos = slice_cols(fwd.score, 0, b)
    item_neg = slice_cols(fwd.score, b, b + b * ni)
    ctx_neg = slice_cols(fwd.score, b + b * ni, b + b * ni + b * nc)

    per_row = square(add(-1.0 * pos, 1.0))
    per_row = add(per_row, _fold(square(item_neg), b, ni))
    per_row = add(per_row, _fold(square(ctx_neg), b, nc))

    pos_fwd = _PositiveView(None if fwd.s_c is None else slice_cols(fwd.s_c, 0, b))
    loss, reported = _attenuate(per_row, pos_fwd, cfg, model.head)
    if site_penalty is not None:
        pen = site_penalty(fwd, b)
        if pen is not None:
            loss = add(loss, pen)
    return loss, reported


def loss_explicit(model, dataset: DomainDataset, batch_idx, cfg: LossConfig,
                  rng=None, domain: str | None = None, adapters: str | None = None,
                  training: bool = True, site_penalty=None):
    """Mean squared rating error over one batch; no negative sampling."""
    if dataset.feedback != "explicit":
        raise ConfigError("loss_explicit requires an explicit-feedback dataset")
    domain = domain or dataset.domain_id
    fwd = model.forward(domain, dataset.users[batch_idx], dataset.items[batch_idx],
                        dataset.contexts[batch_idx], training=training, rng=rng,
                        adapters=adapters)
    target = dataset.ratings[batch_idx]
    per_row = square(add(fwd.score, -np.asarray(target)))
    loss, reported = _attenuate(per_row, fwd, cfg, model.head)
    if site_penalty is not None:
        pen = site_penalty(fwd, len(batch_idx))
        if pen is not None:
            loss = add(loss, pen)
    return loss, reported


@dataclass
class _PositiveView:
    s_c: Tensor | None


def _fold(flat: Tensor, b: int, k: int) -> Tensor:
    """Sum a (b*k,) tensor into (b,) groups of k consecutive entries."""
    if k == 1:
        return flat
    return sum_(reshape(flat, (b, k)), axis=1)
