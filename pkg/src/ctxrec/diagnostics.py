"""End-to-end gradient verification on toy models.

Builds small fully featured models (both feedback modes, cross-segment
residuals, context bias + attenuation, residual adapters with
distributional regularizers) and checks every parameter coordinate of the
full loss against central finite differences in float64. This is the
package's gradient contract; `ctxrec gradcheck` runs it from the CLI.
"""

from __future__ import annotations

import numpy as np

from .core import check_gradients, precision
from .core.gradcheck import GradCheckReport
from .data import DomainDataset, split
from .model import ModelConfig, Recommender
from .transfer import SITES, DistRegularizer, kl_rows
from .core import add, mean, mul


def _toy_dataset(feedback: str, seed: int, n: int = 24, n_users: int = 3,
                 n_items: int = 3, n_features: int = 6) -> DomainDataset:
    rng = np.random.default_rng([seed, 0x70])
    ds = DomainDataset(
        domain_id="toy",
        n_users=n_users,
        n_items=n_items,
        feedback=feedback,
        users=rng.integers(n_users, size=n).astype(np.int64),
        items=rng.integers(n_items, size=n).astype(np.int64),
        contexts=rng.random((n, n_features)),
        ratings=rng.uniform(1.0, 5.0, size=n) if feedback == "explicit" else None,
        i_end=2,
        h_end=4,
    )
    return split(ds, seed=seed)


def _toy_model(feedback: str, seed: int, dataset: DomainDataset, adapters: bool = False):
    cfg = ModelConfig(
        n_features=dataset.n_features,
        i_end=dataset.i_end,
        h_end=dataset.h_end,
        feedback=feedback,
        d=8,
        n_context_layers=3,
        multimodal=True,
        dropout=0.0,  # finite differences need a deterministic loss
    )
    model = Recommender(cfg, seed=seed)
    model.add_domain_for(dataset)
    # generic-position parameters: move off the zero inits so every path is live
    rng = np.random.default_rng([seed, 0x71])
    for name in model.store.names():
        p = model.store[name]
        p.tensor += rng.normal(0.0, 0.05, size=p.tensor.shape)
    if adapters:
        model.add_adapters(dataset.domain_id)
        for name in model.store.names(f"adapter.{dataset.domain_id}"):
            p = model.store[name]
            p.tensor += rng.normal(0.0, 0.05, size=p.tensor.shape)
    return model


def gradcheck_model_loss(feedback: str, seed: int = 0) -> GradCheckReport:
    """Full forward/loss finite-difference check for one feedback mode."""
    with precision(np.float64):
        ds = _toy_dataset(feedback, seed)
        model = _toy_model(feedback, seed, ds)
        batch = ds.split_indices("train")[:8]

        def loss_fn():
            rng = np.random.default_rng([seed, 0x72])  # fixed negatives per call
            loss, _ = model.batch_loss(ds, batch, rng, training=False)
            return loss

        return check_gradients(model.store, loss_fn)


def gradcheck_drr_loss(seed: int = 0) -> GradCheckReport:
    """Finite-difference check through adapters, encoders and KL penalties."""
    with precision(np.float64):
        ds = _toy_dataset("explicit", seed)
        model = _toy_model("explicit", seed, ds, adapters=True)
        widths = {"c2": ds.n_features, "gated_user": 8, "gated_item": 8}
        rng = np.random.default_rng([seed, 0x73])
        regs = {
            site: DistRegularizer(model.store, site, widths[site], rng=rng)
            for site in SITES
        }
        batch = ds.split_indices("train")[:8]

        def site_penalty(fwd, n_pos):
            vals = {"c2": fwd.c2, "gated_user": fwd.gated_user,
                    "gated_item": fwd.gated_item}
            total = None
            for site, val in vals.items():
                mu, logvar = regs[site].encode(val)
                term = mean(kl_rows(mu, logvar))
                total = term if total is None else add(total, term)
            return mul(total, 0.1)

        def loss_fn():
            loss, _ = model.batch_loss(ds, batch, np.random.default_rng([seed, 0x74]),
                                       adapters=ds.domain_id, training=False,
                                       site_penalty=site_penalty)
            return loss

        return check_gradients(model.store, loss_fn)


def gradcheck_suite(seed: int = 0) -> dict[str, GradCheckReport]:
    """The checks behind the `gradcheck` command; all must pass."""
    return {
        "implicit": gradcheck_model_loss("implicit", seed),
        "explicit": gradcheck_model_loss("explicit", seed),
        "drr": gradcheck_drr_loss(seed),
    }
