"""Context-conditioned user/item representations.

A pooled context vector gates each embedding elementwise through a sigmoid
bilinear map, then a stack of ReLU layers clusters the gated
representations. Gate matrices map |C| -> d so the conditioned vectors stay
dimension-aligned with the embedding tables, which is what lets transferred
layers backpropagate into fresh target-domain embeddings.
"""

from __future__ import annotations

import numpy as np

from ..core import Tensor, add, linear, mul, relu, sigmoid
from ..errors import ConfigError


def condition(e, pooled, gate_W) -> Tensor:
    """Gate an embedding by pooled context: e * sigmoid(gate_W @ pooled)."""
    return mul(e, sigmoid(linear(pooled, gate_W)))


def tower(x, layers) -> Tensor:
    """Sequential relu(W x + b); an empty layer list is the identity."""
    for W, b in layers:
        x = relu(add(linear(x, W), b))
    return x


class ConditioningModule:
    """Parameters under "m3.": two gate matrices plus user/item ReLU towers.

      m3.gate_user.W (d,|C|)   m3.gate_item.W (d,|C|)
      m3.user{i}.W / .b        i = 2..n_user_layers  (width d throughout)
      m3.item{i}.W / .b        i = 2..n_item_layers
    """

    def __init__(self, store, cfg, rng):
        self.store = store
        self.cfg = cfg
        if cfg.n_user_layers < 1 or cfg.n_item_layers < 1:
            raise ConfigError("tower layer counts must be >= 1")
        d, n = cfg.d, cfg.n_features
        gate_scale = 1.0 / np.sqrt(n)
        store.add("m3.gate_user.W", rng.uniform(-gate_scale, gate_scale, size=(d, n)))
        store.add("m3.gate_item.W", rng.uniform(-gate_scale, gate_scale, size=(d, n)))
        he = np.sqrt(2.0 / d)
        for side, count in (("user", cfg.n_user_layers), ("item", cfg.n_item_layers)):
            for i in range(2, count + 1):
                store.add(f"m3.{side}{i}.W", rng.uniform(-he, he, size=(d, d)))
                store.add(f"m3.{side}{i}.b", np.zeros(d))

    def _layers(self, side: str):
        out = []
        i = 2
        while f"m3.{side}{i}.W" in self.store:
            out.append((self.store.leaf(f"m3.{side}{i}.W"), self.store.leaf(f"m3.{side}{i}.b")))
            i += 1
        return out

    def represent(self, e_u, e_v, pooled, user_hook=None, item_hook=None):
        """(final_u, final_v, gated_u, gated_v) for embedding/context tensors.

        The hooks transform the gated intermediates before the towers (the
        residual-adapter insertion point); gated_* are the post-hook values.
        """
        gated_u = condition(e_u, pooled, self.store.leaf("m3.gate_user.W"))
        gated_v = condition(e_v, pooled, self.store.leaf("m3.gate_item.W"))
        if user_hook is not None:
            gated_u = user_hook(gated_u)
        if item_hook is not None:
            gated_v = item_hook(gated_v)
        final_u = tower(gated_u, self._layers("user"))
        final_v = tower(gated_v, self._layers("item"))
        return final_u, final_v, gated_u, gated_v
