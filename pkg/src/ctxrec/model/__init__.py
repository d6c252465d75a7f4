"""The assembled recommender: context tower, embeddings, conditioning, scoring.

One :class:`Recommender` owns a ParameterStore holding the shared layers
("m1.", "m3.", "m4." prefixes) plus any number of per-domain embedding
tables ("m2.<domain>.") and residual adapters ("adapter.<domain>."), so a
source model and its adapted targets can live in one checkpoint.

Forward passes over a frozen model are safe to run concurrently; training
steps need exclusive write access to the store.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..core import ParameterStore, Tensor, add, dropout, no_grad, reshape, tensor
from ..errors import ConfigError, TransferError
from . import adapters as adapters_mod
from .adapters import adapter_hook, init_adapters, residual_forward
from .conditioning import ConditioningModule, condition, tower
from .context_pool import ContextModule, multimodal_residual, pool_layer
from .embeddings import EmbeddingTable
from .scoring import (
    LossConfig,
    ScoringHead,
    loss_explicit,
    loss_implicit,
    score_explicit,
    score_implicit,
)

SHARED_PREFIXES = ("m1.", "m3.", "m4.")  # layers that move between domains

# configuration fields that must agree for parameters to be transferable
_COMPAT_FIELDS = (
    "n_features",
    "i_end",
    "h_end",
    "d",
    "n_context_layers",
    "n_user_layers",
    "n_item_layers",
    "multimodal",
    "additive_context",
    "activation",
)


@dataclass
class ModelConfig:
    n_features: int
    i_end: int
    h_end: int
    feedback: str
    d: int = 200
    n_context_layers: int = 3
    n_user_layers: int = 2
    n_item_layers: int = 2
    multimodal: bool = False
    additive_context: bool = False
    activation: str = "sigmoid"
    context_bias: bool = True
    attenuation: bool = True
    # the attenuation term pushes mean(s_c) up at a constant rate; the guard
    # sets its equilibrium at 1/(2*curriculum_l2). Keep that offset ~0.1 so
    # the shared bias head stays interchangeable between domains.
    curriculum_l2: float = 5.0
    dropout: float = 0.1
    n_item_neg: int = 1
    n_ctx_neg: int = 1

    def __post_init__(self):
        if self.feedback not in ("implicit", "explicit"):
            raise ConfigError(f"bad feedback mode {self.feedback!r}")
        if not 0 <= self.i_end <= self.h_end <= self.n_features:
            raise ConfigError("segment bounds out of order")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0,1)")
        if self.feedback == "implicit" and (self.n_item_neg < 1 or self.n_ctx_neg < 1):
            raise ConfigError("implicit training needs >= 1 item and context negative")

    def loss_config(self) -> LossConfig:
        return LossConfig(
            feedback=self.feedback,
            context_bias=self.context_bias,
            attenuation=self.attenuation,
            n_item_neg=self.n_item_neg,
            n_ctx_neg=self.n_ctx_neg,
            curriculum_l2=self.curriculum_l2,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class ForwardResult:
    score: Tensor
    s_c: Optional[Tensor]
    pooled: Tensor
    c2: Tensor
    gated_user: Tensor
    gated_item: Tensor
    final_user: Tensor
    final_item: Tensor
    # pre-adapter site values; equals the post values when no adapters ran
    sites_raw: Optional[dict] = None


class Recommender:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.store = ParameterStore()
        rng = np.random.default_rng([seed, 0xC0])
        self.context = ContextModule(self.store, config, rng)
        self.conditioning = ConditioningModule(self.store, config, rng)
        self.head = ScoringHead(self.store, config)
        self.domains: dict[str, EmbeddingTable] = {}
        self._seed = seed

    # -- domains ---------------------------------------------------------------

    def add_domain(self, domain_id: str, n_users: int, n_items: int,
                   mean_rating: float = 0.0) -> EmbeddingTable:
        if domain_id in self.domains:
            raise ConfigError(f"domain {domain_id!r} already registered")
        table = EmbeddingTable(
            self.store, domain_id, n_users, n_items, self.config.d,
            self.config.feedback, np.random.default_rng([self._seed, 0xD0, len(self.domains)]),
            mean_rating=mean_rating,
        )
        self.domains[domain_id] = table
        return table

    def add_domain_for(self, dataset) -> EmbeddingTable:
        mean_rating = 0.0
        if dataset.feedback == "explicit":
            idx = dataset.splits.get("train")
            vals = dataset.ratings if idx is None else dataset.ratings[idx]
            mean_rating = float(vals.mean()) if len(vals) else 0.0
        return self.add_domain(dataset.domain_id, dataset.n_users, dataset.n_items, mean_rating)

    def add_adapters(self, domain_id: str) -> list[str]:
        return init_adapters(self.store, domain_id, self.config.n_features, self.config.d)

    # -- forward ---------------------------------------------------------------

    def forward(self, domain: str, users, items, contexts, training: bool = False,
                rng=None, adapters: str | None = None) -> ForwardResult:
        """Score a batch of (user, item, context) rows for one domain.

        `adapters` names the domain whose residual input adapters to apply
        (normally the same as `domain`); None runs the unadapted path.
        """
        if domain not in self.domains:
            raise ConfigError(f"unknown domain {domain!r}")
        cfg = self.config
        if training and cfg.dropout > 0.0 and rng is None:
            raise ConfigError("training forward with dropout needs an rng")
        table = self.domains[domain]
        users = np.atleast_1d(np.asarray(users))
        items = np.atleast_1d(np.asarray(items))
        ctx_arr = np.asarray(contexts)
        if ctx_arr.ndim == 1:
            ctx_arr = ctx_arr[None, :]
        if ctx_arr.shape[1] != cfg.n_features:
            raise ConfigError(
                f"context width {ctx_arr.shape[1]} != configured {cfg.n_features}"
            )

        hooks = {site: None for site in adapters_mod.SITES}
        sites_raw: dict = {}
        if adapters is not None:
            for site in adapters_mod.SITES:
                inner = adapter_hook(self.store, adapters, site)

                def hook(x, _site=site, _inner=inner):
                    sites_raw[_site] = x
                    return _inner(x)

                hooks[site] = hook

        pooled, c2 = self.context.forward(tensor(ctx_arr), first_layer_hook=hooks["c2"])
        if training and cfg.dropout > 0.0:
            pooled = dropout(pooled, cfg.dropout, rng, training=True)

        e_u = table.lookup("user", users)
        e_v = table.lookup("item", items)
        final_u, final_v, gated_u, gated_v = self.conditioning.represent(
            e_u, e_v, pooled, user_hook=hooks["gated_user"], item_hook=hooks["gated_item"]
        )
        if training and cfg.dropout > 0.0:
            final_u = dropout(final_u, cfg.dropout, rng, training=True)
            final_v = dropout(final_v, cfg.dropout, rng, training=True)

        s_c = self.head.context_bias(pooled) if cfg.context_bias else None
        if cfg.feedback == "implicit":
            score = score_implicit(final_u, final_v, s_c)
        else:
            b = len(users)
            s_u = reshape(table.bias("user", users), (b,))
            s_v = reshape(table.bias("item", items), (b,))
            score = score_explicit(final_u, final_v, s_c, s_u, s_v, table.global_bias())
        return ForwardResult(
            score=score, s_c=s_c, pooled=pooled, c2=c2,
            gated_user=gated_u, gated_item=gated_v,
            final_user=final_u, final_item=final_v,
            sites_raw=sites_raw if adapters is not None else None,
        )

    def score_batch(self, domain: str, users, items, contexts,
                    adapters: str | None = None) -> np.ndarray:
        """Evaluation-mode scores as a plain array (no graph, no dropout)."""
        with no_grad():
            return self.forward(domain, users, items, contexts,
                                training=False, adapters=adapters).score.data.copy()

    # -- losses ------------------------------------------------------------------

    def batch_loss(self, dataset, batch_idx, rng, domain: str | None = None,
                   adapters: str | None = None, training: bool = True,
                   loss_cfg: LossConfig | None = None, site_penalty=None):
        cfg = loss_cfg or self.config.loss_config()
        fn = loss_implicit if cfg.feedback == "implicit" else loss_explicit
        return fn(self, dataset, batch_idx, cfg, rng, domain=domain,
                  adapters=adapters, training=training, site_penalty=site_penalty)

    # -- transfer support ----------------------------------------------------------

    def shared_names(self) -> list[str]:
        return [n for p in SHARED_PREFIXES for n in self.store.names(p)]

    def check_compatible(self, other_config: dict) -> None:
        mine = self.config.to_dict()
        bad = [f for f in _COMPAT_FIELDS if mine.get(f) != other_config.get(f)]
        if bad:
            details = {f: (other_config.get(f), mine.get(f)) for f in bad}
            raise TransferError(f"incompatible model configs (source vs target): {details}")


__all__ = [
    "ForwardResult",
    "LossConfig",
    "ModelConfig",
    "Recommender",
    "SHARED_PREFIXES",
    "condition",
    "init_adapters",
    "loss_explicit",
    "loss_implicit",
    "multimodal_residual",
    "pool_layer",
    "residual_forward",
    "score_explicit",
    "score_implicit",
    "tower",
]
