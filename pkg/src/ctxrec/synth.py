"""Synthetic multi-domain dataset generation.

All generated domains share one hidden context rule (a sparse set of
multiplicative context-feature monomials with fixed coefficients) while
user/item latent traits are drawn independently per domain over disjoint
entity id ranges. The shared rule is the transferable signal; the traits
are the domain-specific one. The rule is returned alongside the datasets
so experiments can verify what a model was supposed to find.

Explicit mode emits ratings
    r = clip(mid + trait_u . trait_v + rule(c) [+ novelty offset] + noise)
Implicit mode emits interactions accepted with probability
    sigmoid(item_sensitivity * rule(c) + trait_u . trait_v)
so observed interactions skew toward contexts the rule favors for that item.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import DomainDataset, _default_feature_meta
from .errors import ConfigError

_TRAIT_DIM = 4


@dataclass
class SynthConfig:
    n_domains: int = 4
    users_per_domain: int = 200
    items_per_domain: int = 100
    n_features: int = 8
    i_end: int = 3
    h_end: int = 5
    order: int = 2
    n_monomials: int = 6
    min_degree: int | None = None  # default: every monomial has full degree = order
    centered_monomials: bool = False  # products of (c_i - 0.5) instead of raw c_i
    binary_features: bool = False  # Bernoulli(1/2) predicates instead of uniform values
    source_interactions: int = 20000
    target_interactions: int = 1500
    feedback: str = "explicit"
    rating_range: tuple = (1.0, 5.0)
    noise_sigma: float = 0.3
    rule_scale: float = 1.0
    trait_scale: float = 0.5
    novelty_skew: float = 0.0  # fraction of interactions drawn near dense prototypes
    novelty_offset: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.order < 1:
            raise ConfigError("rule order must be >= 1")
        if self.n_domains < 1:
            raise ConfigError("need at least one domain")
        if self.target_interactions >= self.source_interactions:
            raise ConfigError("targets must be sparser than the source")
        if not 0.0 <= self.novelty_skew <= 1.0:
            raise ConfigError("novelty_skew must be in [0,1]")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        cfg = cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})
        if "rating_range" in d:
            cfg.rating_range = tuple(d["rating_range"])
        return cfg


def _draw_rule(cfg: SynthConfig, rng) -> dict:
    lo_deg = cfg.min_degree if cfg.min_degree is not None else cfg.order
    shift = 0.5 if cfg.centered_monomials else 0.0
    monomials = []
    seen = set()
    while len(monomials) < cfg.n_monomials:
        deg = int(rng.integers(lo_deg, cfg.order + 1))
        idx = tuple(sorted(rng.choice(cfg.n_features, size=deg, replace=False).tolist()))
        if idx in seen:
            continue
        seen.add(idx)
        coef = float(rng.normal(0.0, 1.0))
        monomials.append({"indices": list(idx), "coef": coef})
    # rescale so the centered rule has std = rule_scale over background
    # contexts, making the transferable signal strength seed-independent
    probe = _raw_features(cfg, rng, 4096) - shift
    vals = np.zeros(len(probe))
    for m in monomials:
        vals += m["coef"] * probe[:, m["indices"]].prod(axis=1)
    std = float(vals.std())
    if std > 0:
        for m in monomials:
            m["coef"] = float(m["coef"] * cfg.rule_scale / std)
    mean_feat = 0.5 - shift  # E[c_i - shift]; holds for uniform and Bernoulli(1/2)
    center = sum(m["coef"] * mean_feat ** len(m["indices"]) for m in monomials)
    rule = {"order": cfg.order, "monomials": monomials, "center": center, "shift": shift}
    if cfg.novelty_skew > 0.0:
        # a second low-order rule scores context commonness: contexts are
        # drawn preferring high scores, and ratings carry a proportional
        # offset, so frequent (low-novelty) contexts rate systematically
        # differently from rare ones
        nov_cfg = SynthConfig(**{**cfg.__dict__, "novelty_skew": 0.0, "rule_scale": 1.0})
        rule["novelty"] = {
            "skew": cfg.novelty_skew,
            "offset": cfg.novelty_offset,
            "commonness": _draw_rule(nov_cfg, rng),
        }
    return rule


def _raw_features(cfg: SynthConfig, rng, n: int) -> np.ndarray:
    if cfg.binary_features:
        return rng.integers(0, 2, size=(n, cfg.n_features)).astype(np.float64)
    return rng.random((n, cfg.n_features))


def evaluate_rule(rule: dict, contexts: np.ndarray) -> np.ndarray:
    """Centered rule value for each context row."""
    contexts = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    contexts = contexts - rule.get("shift", 0.0)
    out = np.zeros(contexts.shape[0], dtype=np.float64)
    for m in rule["monomials"]:
        out += m["coef"] * contexts[:, m["indices"]].prod(axis=1)
    return out - rule["center"]


def save_rule(rule: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rule, fh, indent=2)


def load_rule(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _draw_contexts(n: int, cfg: SynthConfig, rule: dict, rng):
    """Context rows plus the novelty offset attached to each row.

    With novelty skew active, a `skew` fraction of rows is drawn by
    rejection toward high commonness scores, and every row's rating offset
    is `offset * commonness(c)` (common contexts rate predictably higher).
    """
    ctx = _raw_features(cfg, rng, n)
    offsets = np.zeros(n)
    nov = rule.get("novelty")
    if nov:
        common = nov["commonness"]
        dense = np.flatnonzero(rng.random(n) < nov["skew"])
        need = len(dense)
        picked = []
        while need > 0:
            cand = _raw_features(cfg, rng, max(256, 4 * need))
            score = evaluate_rule(common, cand)
            keep = rng.random(len(cand)) < 1.0 / (1.0 + np.exp(-2.0 * score))
            sel = cand[keep][:need]
            picked.append(sel)
            need -= len(sel)
        if len(dense):
            ctx[dense] = np.concatenate(picked)[: len(dense)]
        offsets = nov["offset"] * evaluate_rule(common, ctx)
    return ctx, offsets


def _gen_explicit(cfg, rule, n_inter, n_users, n_items, rng):
    t_u = rng.normal(0.0, cfg.trait_scale, size=(n_users, _TRAIT_DIM))
    t_v = rng.normal(0.0, cfg.trait_scale, size=(n_items, _TRAIT_DIM))
    users = rng.integers(n_users, size=n_inter)
    items = rng.integers(n_items, size=n_inter)
    ctx, offsets = _draw_contexts(n_inter, cfg, rule, rng)
    lo, hi = cfg.rating_range
    mid = 0.5 * (lo + hi)
    raw = (
        mid
        + np.einsum("ij,ij->i", t_u[users], t_v[items])
        + evaluate_rule(rule, ctx)
        + offsets
        + rng.normal(0.0, cfg.noise_sigma, size=n_inter)
    )
    ratings = np.clip(raw, lo, hi)
    return users, items, ctx, ratings, t_u, t_v


def _gen_implicit(cfg, rule, n_inter, n_users, n_items, rng):
    t_u = rng.normal(0.0, cfg.trait_scale, size=(n_users, _TRAIT_DIM))
    t_v = rng.normal(0.0, cfg.trait_scale, size=(n_items, _TRAIT_DIM))
    sens = rng.uniform(0.2, 1.8, size=n_items)  # per-item context sensitivity
    users = np.empty(n_inter, dtype=np.int64)
    items = np.empty(n_inter, dtype=np.int64)
    ctx = np.empty((n_inter, cfg.n_features))
    filled = 0
    while filled < n_inter:
        chunk = max(1024, 2 * (n_inter - filled))
        cu = rng.integers(n_users, size=chunk)
        cv = rng.integers(n_items, size=chunk)
        cc, _ = _draw_contexts(chunk, cfg, rule, rng)
        score = 2.0 * sens[cv] * evaluate_rule(rule, cc) + np.einsum(
            "ij,ij->i", t_u[cu], t_v[cv]
        )
        accept = rng.random(chunk) < 1.0 / (1.0 + np.exp(-score))
        take = min(int(accept.sum()), n_inter - filled)
        sel = np.flatnonzero(accept)[:take]
        users[filled : filled + take] = cu[sel]
        items[filled : filled + take] = cv[sel]
        ctx[filled : filled + take] = cc[sel]
        filled += take
    return users, items, ctx, None, t_u, t_v


def synth_generate(cfg: SynthConfig) -> tuple[list[DomainDataset], dict]:
    """Generate one dense source plus sparse target domains sharing a rule.

    Domain 0 is the source. Entity raw-id ranges are globally disjoint
    across domains. Returns (datasets, rule); each dataset also carries the
    rule and its traits in extras for reconstruction/diagnostics.
    """
    rng = np.random.default_rng(cfg.seed)
    rule = _draw_rule(cfg, rng)
    datasets = []
    next_user_raw = 0
    next_item_raw = 0
    for k in range(cfg.n_domains):
        dom_rng = np.random.default_rng([cfg.seed, k + 1])
        n_inter = cfg.source_interactions if k == 0 else cfg.target_interactions
        gen = _gen_explicit if cfg.feedback == "explicit" else _gen_implicit
        users, items, ctx, ratings, t_u, t_v = gen(
            cfg, rule, n_inter, cfg.users_per_domain, cfg.items_per_domain, dom_rng
        )
        user_raw = np.arange(next_user_raw, next_user_raw + cfg.users_per_domain)
        item_raw = np.arange(next_item_raw, next_item_raw + cfg.items_per_domain)
        next_user_raw += cfg.users_per_domain
        next_item_raw += cfg.items_per_domain
        domain_id = "source" if k == 0 else f"target{k}"
        datasets.append(
            DomainDataset(
                domain_id=domain_id,
                n_users=cfg.users_per_domain,
                n_items=cfg.items_per_domain,
                feedback=cfg.feedback,
                users=users.astype(np.int64),
                items=items.astype(np.int64),
                contexts=ctx,
                ratings=ratings,
                i_end=cfg.i_end,
                h_end=cfg.h_end,
                feature_meta=_default_feature_meta(cfg.n_features, cfg.i_end, cfg.h_end),
                extras={
                    "user_raw_ids": user_raw,
                    "item_raw_ids": item_raw,
                    "rule": json.loads(json.dumps(rule)),
                    "user_traits": t_u,
                    "item_traits": t_v,
                    "rating_mid": 0.5 * (cfg.rating_range[0] + cfg.rating_range[1]),
                },
            )
        )
    return datasets, rule
