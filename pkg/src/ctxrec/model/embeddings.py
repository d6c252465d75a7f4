"""Domain-specific user/item embedding tables and rating-bias scalars.

These are the only parameters that never transfer between domains. One
container can hold several domains at once; each registers under its own
"m2.<domain_id>." prefix so a source and its targets coexist in a single
store/checkpoint.
"""

from __future__ import annotations

import numpy as np

from ..core import Tensor, gather_rows
from ..errors import ConfigError

INIT_STD = 0.1


class EmbeddingTable:
    """Embeddings (and, under explicit feedback, bias scalars) for one domain.

    Parameter names:
      m2.<dom>.users (n_users, d)    m2.<dom>.items (n_items, d)
      m2.<dom>.user_bias, m2.<dom>.item_bias, m2.<dom>.global_bias
      (bias entries exist iff the feedback mode is explicit)
    """

    def __init__(self, store, domain_id: str, n_users: int, n_items: int, d: int,
                 feedback: str, rng, mean_rating: float = 0.0):
        if n_users < 1 or n_items < 1 or d < 1:
            raise ConfigError("embedding table sizes must be positive")
        self.store = store
        self.domain_id = domain_id
        self.n_users = n_users
        self.n_items = n_items
        self.d = d
        self.explicit = feedback == "explicit"
        p = f"m2.{domain_id}"
        store.add(f"{p}.users", rng.normal(0.0, INIT_STD, size=(n_users, d)))
        store.add(f"{p}.items", rng.normal(0.0, INIT_STD, size=(n_items, d)))
        if self.explicit:
            store.add(f"{p}.user_bias", np.zeros((n_users, 1)))
            store.add(f"{p}.item_bias", np.zeros((n_items, 1)))
            # global bias starts at the train-split mean so embeddings fit residuals
            store.add(f"{p}.global_bias", np.asarray(mean_rating))

    def lookup(self, kind: str, ids) -> Tensor:
        """Embedding rows for `ids`; gradients flow only to those rows."""
        if kind not in ("user", "item"):
            raise ConfigError(f"lookup kind must be 'user' or 'item', got {kind!r}")
        table = f"m2.{self.domain_id}.{'users' if kind == 'user' else 'items'}"
        return gather_rows(self.store.leaf(table), np.asarray(ids))

    def bias(self, kind: str, ids) -> Tensor:
        table = f"m2.{self.domain_id}.{'user_bias' if kind == 'user' else 'item_bias'}"
        return gather_rows(self.store.leaf(table), np.asarray(ids))

    def global_bias(self) -> Tensor:
        return self.store.leaf(f"m2.{self.domain_id}.global_bias")
