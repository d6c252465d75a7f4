"""Per-target residual input adapters for transferred layers.

A single bounded residual layer x + tanh(W x + b) per adaptation site:
the first pooled context level, and the two gated embeddings before their
towers. Zero-initialized adapters are exact identities, so a freshly
adapted model predicts bitwise identically to the plain transferred one.
"""

from __future__ import annotations

import numpy as np

from ..core import Tensor, add, linear, tanh
from ..errors import ConfigError

SITES = ("c2", "gated_user", "gated_item")


def residual_forward(x, W, b) -> Tensor:
    """x + tanh(W x + b); perturbation is bounded by 1 per coordinate."""
    return add(x, tanh(add(linear(x, W), b)))


def adapter_prefix(domain_id: str, site: str) -> str:
    return f"adapter.{domain_id}.{site}"


def init_adapters(store, domain_id: str, n_features: int, d: int) -> list[str]:
    """Register zero adapters for every site of one target domain."""
    widths = {"c2": n_features, "gated_user": d, "gated_item": d}
    names = []
    for site in SITES:
        w = widths[site]
        p = adapter_prefix(domain_id, site)
        store.add(f"{p}.W", np.zeros((w, w)))
        store.add(f"{p}.b", np.zeros(w))
        names.extend([f"{p}.W", f"{p}.b"])
    return names


def adapter_hook(store, domain_id: str, site: str):
    """A site hook applying this domain's residual adapter, or raise if absent."""
    p = adapter_prefix(domain_id, site)
    if f"{p}.W" not in store:
        raise ConfigError(f"no adapter parameters registered under {p!r}")

    def hook(x: Tensor) -> Tensor:
        return residual_forward(x, store.leaf(f"{p}.W"), store.leaf(f"{p}.b"))

    return hook
