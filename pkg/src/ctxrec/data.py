"""Dataset ingestion, normalization, splitting and negative sampling.

One :class:`DomainDataset` holds the interactions of a single recommendation
domain as dense arrays (users, items, contexts, optional ratings) plus split
indices and per-feature normalization records. Datasets are immutable by
convention: every transform returns a new instance, so concurrent readers
are safe.

File formats (UTF-8):
  interactions  JSON Lines, one object per interaction:
                {"u": int, "v": int, "c": [float, ...], "r": float?}
  manifest      JSON: {"domain_id", "feedback",
                "segments": {"i_end": int, "h_end": int},
                "features": [{"name", "segment"}, ...]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
import numpy as np

from .errors import ConfigError, ParseError, SamplingError, SchemaError

SEGMENT_TAGS = ("I", "H", "A")  # interactional, historical, attributional


@dataclass
class ContextVector:
    """One interaction's context features with segment boundaries.

    values[:i_end] are interactional, values[i_end:h_end] historical,
    values[h_end:] attributional.
    """

    values: np.ndarray
    i_end: int
    h_end: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not 0 <= self.i_end <= self.h_end <= self.values.shape[0]:
            raise ConfigError(
                f"segment bounds ({self.i_end}, {self.h_end}) invalid for "
                f"{self.values.shape[0]} features"
            )

    @property
    def interactional(self) -> np.ndarray:
        return self.values[: self.i_end]

    @property
    def historical(self) -> np.ndarray:
        return self.values[self.i_end : self.h_end]

    @property
    def attributional(self) -> np.ndarray:
        return self.values[self.h_end :]


@dataclass
class Interaction:
    """A (user, context, item[, rating]) record with domain-local ids."""

    user: int
    item: int
    context: ContextVector
    rating: float | None = None


@dataclass
class FeatureMeta:
    name: str
    segment: str
    normalization: dict | None = None


@dataclass
class DomainDataset:
    """All interactions of one domain, plus splits and feature metadata."""

    domain_id: str
    n_users: int
    n_items: int
    feedback: str  # "implicit" | "explicit"
    users: np.ndarray  # (N,) int64
    items: np.ndarray  # (N,) int64
    contexts: np.ndarray  # (N, |C|) float64
    ratings: np.ndarray | None  # (N,) float64, explicit only
    i_end: int
    h_end: int
    splits: dict = field(default_factory=dict)  # name -> index array
    feature_meta: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)  # raw-id maps, generator metadata

    def __post_init__(self):
        if self.feedback not in ("implicit", "explicit"):
            raise ConfigError(f"feedback must be implicit or explicit, got {self.feedback!r}")
        if (self.ratings is not None) != (self.feedback == "explicit"):
            raise SchemaError("ratings present iff feedback mode is explicit")
        self.validate_ids()

    def validate_ids(self):
        if self.n_interactions:
            if self.users.max(initial=-1) >= self.n_users or self.users.min(initial=0) < 0:
                raise SchemaError("user id out of declared range")
            if self.items.max(initial=-1) >= self.n_items or self.items.min(initial=0) < 0:
                raise SchemaError("item id out of declared range")

    @property
    def n_interactions(self) -> int:
        return len(self.users)

    @property
    def n_features(self) -> int:
        return self.contexts.shape[1]

    def interaction(self, i: int) -> Interaction:
        return Interaction(
            user=int(self.users[i]),
            item=int(self.items[i]),
            context=ContextVector(self.contexts[i].copy(), self.i_end, self.h_end),
            rating=None if self.ratings is None else float(self.ratings[i]),
        )

    def split_indices(self, name: str) -> np.ndarray:
        if name not in self.splits:
            raise ConfigError(f"dataset has no {name!r} split; call split() first")
        return self.splits[name]

    def manifest(self) -> dict:
        return {
            "domain_id": self.domain_id,
            "feedback": self.feedback,
            "segments": {"i_end": self.i_end, "h_end": self.h_end},
            "features": [{"name": m.name, "segment": m.segment} for m in self.feature_meta],
        }


def _default_feature_meta(n_features: int, i_end: int, h_end: int) -> list[FeatureMeta]:
    metas = []
    for j in range(n_features):
        seg = "I" if j < i_end else ("H" if j < h_end else "A")
        metas.append(FeatureMeta(name=f"c{j}", segment=seg))
    return metas


def load_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    for key in ("domain_id", "feedback", "segments"):
        if key not in manifest:
            raise SchemaError(f"manifest missing {key!r}")
    return manifest


def ingest_jsonl(
    path,
    schema,
    feedback_mode: str | None = None,
    min_user_count: int = 1,
    min_item_count: int = 1,
) -> DomainDataset:
    """Read a JSON Lines interaction file into a DomainDataset.

    `schema` is a manifest dict or a path to one. Users/items with fewer
    than the min counts are removed, iterating until no entity falls below
    threshold (removing a user can push an item under its threshold and
    vice versa). Surviving raw ids are remapped densely, in sorted raw-id
    order; the raw ids are kept in extras for cross-domain bookkeeping.
    """
    manifest = schema if isinstance(schema, dict) else load_manifest(schema)
    feedback = feedback_mode or manifest["feedback"]
    explicit = feedback == "explicit"
    seg = manifest["segments"]
    i_end, h_end = int(seg["i_end"]), int(seg["h_end"])

    raw_u, raw_v, ctx_rows, ratings = [], [], [], []
    n_feat = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON ({e.msg})", line_no) from None
            try:
                u, v, c = int(rec["u"]), int(rec["v"]), rec["c"]
            except (KeyError, TypeError, ValueError) as e:
                raise ParseError(f"missing or malformed field: {e}", line_no) from None
            if n_feat is None:
                n_feat = len(c)
            elif len(c) != n_feat:
                raise SchemaError(f"line {line_no}: context length {len(c)} != {n_feat}")
            raw_u.append(u)
            raw_v.append(v)
            ctx_rows.append(c)
            if explicit:
                if "r" not in rec:
                    raise ParseError("explicit dataset record lacks rating 'r'", line_no)
                ratings.append(float(rec["r"]))

    if n_feat is None:
        n_feat = len(manifest.get("features", []))
    if not 0 <= i_end <= h_end <= n_feat:
        raise SchemaError(f"segments ({i_end}, {h_end}) invalid for {n_feat} features")

    raw_u = np.asarray(raw_u, dtype=np.int64)
    raw_v = np.asarray(raw_v, dtype=np.int64)
    contexts = (
        np.asarray(ctx_rows, dtype=np.float64)
        if ctx_rows
        else np.zeros((0, n_feat), dtype=np.float64)
    )
    rating_arr = np.asarray(ratings, dtype=np.float64) if explicit else None
    if not np.all(np.isfinite(contexts)):
        bad = int(np.flatnonzero(~np.isfinite(contexts).all(axis=1))[0])
        raise SchemaError(f"non-finite context feature in record {bad + 1}")
    if rating_arr is not None and not np.all(np.isfinite(rating_arr)):
        bad = int(np.flatnonzero(~np.isfinite(rating_arr))[0])
        raise SchemaError(f"non-finite rating in record {bad + 1}")

    # min-count filtering to fixpoint
    keep = np.ones(len(raw_u), dtype=bool)
    while True:
        u_ids, u_counts = np.unique(raw_u[keep], return_counts=True)
        v_ids, v_counts = np.unique(raw_v[keep], return_counts=True)
        ok_u = set(u_ids[u_counts >= min_user_count].tolist())
        ok_v = set(v_ids[v_counts >= min_item_count].tolist())
        new_keep = keep & np.fromiter(
            ((u in ok_u) and (v in ok_v) for u, v in zip(raw_u, raw_v)),
            dtype=bool,
            count=len(raw_u),
        )
        if new_keep.sum() == keep.sum():
            keep = new_keep
            break
        keep = new_keep

    raw_u, raw_v, contexts = raw_u[keep], raw_v[keep], contexts[keep]
    if rating_arr is not None:
        rating_arr = rating_arr[keep]

    uniq_u = np.unique(raw_u)
    uniq_v = np.unique(raw_v)
    u_map = {int(r): i for i, r in enumerate(uniq_u)}
    v_map = {int(r): i for i, r in enumerate(uniq_v)}
    users = np.fromiter((u_map[int(r)] for r in raw_u), dtype=np.int64, count=len(raw_u))
    items = np.fromiter((v_map[int(r)] for r in raw_v), dtype=np.int64, count=len(raw_v))

    features = manifest.get("features")
    if features:
        if len(features) != n_feat:
            raise SchemaError(f"manifest lists {len(features)} features, data has {n_feat}")
        metas = [FeatureMeta(name=f["name"], segment=f["segment"]) for f in features]
    else:
        metas = _default_feature_meta(n_feat, i_end, h_end)

    return DomainDataset(
        domain_id=manifest["domain_id"],
        n_users=len(uniq_u),
        n_items=len(uniq_v),
        feedback=feedback,
        users=users,
        items=items,
        contexts=contexts,
        ratings=rating_arr,
        i_end=i_end,
        h_end=h_end,
        feature_meta=metas,
        extras={"user_raw_ids": uniq_u, "item_raw_ids": uniq_v},
    )


def write_jsonl(dataset: DomainDataset, path) -> None:
    """Write interactions back out in the ingest format (raw ids if known)."""
    u_raw = dataset.extras.get("user_raw_ids")
    v_raw = dataset.extras.get("item_raw_ids")
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(dataset.n_interactions):
            u = int(u_raw[dataset.users[i]]) if u_raw is not None else int(dataset.users[i])
            v = int(v_raw[dataset.items[i]]) if v_raw is not None else int(dataset.items[i])
            rec = {"u": u, "v": v, "c": dataset.contexts[i].tolist()}
            if dataset.ratings is not None:
                rec["r"] = float(dataset.ratings[i])
            fh.write(json.dumps(rec) + "\n")


def write_manifest(dataset: DomainDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dataset.manifest(), fh, indent=2)


def split(dataset: DomainDataset, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> DomainDataset:
    """Assign train/validation/test splits by seeded uniform permutation."""
    if abs(sum(fractions) - 1.0) > 1e-9 or len(fractions) != 3:
        raise ConfigError(f"fractions must be three values summing to 1, got {fractions}")
    n = dataset.n_interactions
    if n < 3:
        raise ConfigError(f"cannot split {n} interactions into three parts")
    perm = np.random.default_rng(seed).permutation(n)
    b1 = int(round(fractions[0] * n))
    b2 = int(round((fractions[0] + fractions[1]) * n))
    splits = {
        "train": np.sort(perm[:b1]),
        "validation": np.sort(perm[b1:b2]),
        "test": np.sort(perm[b2:]),
    }
    return replace(dataset, splits=splits)


def _quantile_edges(train_col: np.ndarray, k: int) -> np.ndarray:
    return np.quantile(train_col, [j / k for j in range(1, k)])


def normalize(dataset: DomainDataset, method: str = "minmax", bins: int = 4) -> DomainDataset:
    """Normalize context features to [0,1] using train-split statistics.

    minmax:           (x - min) / (max - min); constant features map to 0.
    quantile(bins=k): bin index / (k - 1) with train-split quantile edges.

    Statistics come from the train split only and are applied unchanged to
    validation/test (values there may leave [0,1]; they are not clamped).
    Per-feature records land in feature_meta.
    """
    if method not in ("minmax", "quantile"):
        raise ConfigError(f"unknown normalization method {method!r}")
    if method == "quantile" and bins < 2:
        raise ConfigError(f"quantile binning needs k >= 2, got {bins}")
    train_idx = dataset.split_indices("train")
    if len(train_idx) == 0:
        raise ConfigError("normalize requires a non-empty train split")

    ctx = dataset.contexts.copy()
    base_meta = dataset.feature_meta or _default_feature_meta(
        dataset.n_features, dataset.i_end, dataset.h_end
    )
    metas = []
    for j, meta in enumerate(base_meta):
        col_train = dataset.contexts[train_idx, j]
        if method == "minmax":
            lo, hi = float(col_train.min()), float(col_train.max())
            if hi > lo:
                ctx[:, j] = (ctx[:, j] - lo) / (hi - lo)
            else:
                ctx[:, j] = 0.0
            record = {"method": "minmax", "min": lo, "max": hi}
        else:
            edges = _quantile_edges(col_train, bins)
            ctx[:, j] = np.searchsorted(edges, ctx[:, j], side="right") / (bins - 1)
            record = {"method": "quantile", "bins": bins, "edges": edges.tolist()}
        # val/test values outside the train range stay un-clamped; record them
        record["out_of_range"] = int(np.sum((ctx[:, j] < 0.0) | (ctx[:, j] > 1.0)))
        metas.append(replace(meta, normalization=record))
    return replace(dataset, contexts=ctx, feature_meta=metas)


def sample_negatives(
    positive: Interaction,
    dataset: DomainDataset,
    n_item_neg: int,
    n_ctx_neg: int,
    rng,
    max_tries: int = 100,
) -> list[Interaction]:
    """Draw corrupted copies of one positive interaction.

    Item negatives keep (user, context) and replace the item with a uniform
    draw over all items, rejecting the positive's item. Context negatives
    keep (user, item) and take the context of a uniformly drawn *other*
    training interaction, rejecting contexts bit-identical to the positive's.
    """
    if dataset.n_items < 2 or dataset.n_interactions < 2:
        raise SamplingError("need at least 2 items and 2 interactions to sample negatives")
    out: list[Interaction] = []
    for _ in range(n_item_neg):
        for _ in range(max_tries):
            v = int(rng.integers(dataset.n_items))
            if v != positive.item:
                out.append(Interaction(positive.user, v, positive.context, None))
                break
        else:
            raise SamplingError("item-negative rejection exhausted after 100 tries")

    if n_ctx_neg == 0:
        return out
    pool = dataset.splits.get("train")
    if pool is None or len(pool) == 0:
        pool = np.arange(dataset.n_interactions)
    for _ in range(n_ctx_neg):
        for _ in range(max_tries):
            row = int(pool[rng.integers(len(pool))])
            cand = dataset.contexts[row]
            if not np.array_equal(cand, positive.context.values):
                out.append(
                    Interaction(
                        positive.user,
                        positive.item,
                        ContextVector(cand.copy(), dataset.i_end, dataset.h_end),
                        None,
                    )
                )
                break
        else:
            raise SamplingError("context-negative rejection exhausted after 100 tries")
    return out


def sample_negative_arrays(
    dataset: DomainDataset,
    batch_idx: np.ndarray,
    n_item_neg: int,
    n_ctx_neg: int,
    rng,
    max_tries: int = 100,
):
    """Vectorized negative draws for a training batch.

    Returns (neg_items (B, n_item_neg), neg_ctx_rows (B, n_ctx_neg)) where
    neg_ctx_rows holds indices into dataset.contexts. Same rejection rules
    as sample_negatives.
    """
    b = len(batch_idx)
    pos_items = dataset.items[batch_idx]
    neg_items = np.zeros((b, n_item_neg), dtype=np.int64)
    if n_item_neg:
        if dataset.n_items < 2:
            raise SamplingError("need at least 2 items for item negatives")
        neg_items = rng.integers(dataset.n_items, size=(b, n_item_neg))
        for _ in range(max_tries):
            clash = neg_items == pos_items[:, None]
            n_clash = int(clash.sum())
            if not n_clash:
                break
            neg_items[clash] = rng.integers(dataset.n_items, size=n_clash)
        else:
            raise SamplingError("item-negative rejection exhausted after 100 tries")

    neg_ctx = np.zeros((b, n_ctx_neg), dtype=np.int64)
    if n_ctx_neg:
        pool = dataset.splits.get("train")
        if pool is None or len(pool) == 0:
            pool = np.arange(dataset.n_interactions)
        if len(pool) < 2:
            raise SamplingError("need at least 2 interactions for context negatives")
        neg_ctx = pool[rng.integers(len(pool), size=(b, n_ctx_neg))]
        pos_ctx = dataset.contexts[batch_idx]
        for _ in range(max_tries):
            same = np.all(
                dataset.contexts[neg_ctx] == pos_ctx[:, None, :], axis=2
            )
            n_same = int(same.sum())
            if not n_same:
                break
            neg_ctx[same] = pool[rng.integers(len(pool), size=n_same)]
        else:
            raise SamplingError("context-negative rejection exhausted after 100 tries")
    return neg_items, neg_ctx


def context_drop(dataset: DomainDataset, fraction: float, seed: int) -> DomainDataset:
    """Zero a random ceil(fraction*|C|) feature subset per interaction."""
    if not 0.0 <= fraction <= 0.5:
        raise ConfigError(f"context drop fraction must be in [0, 0.5], got {fraction}")
    n_zero = int(np.ceil(fraction * dataset.n_features))
    if n_zero == 0:
        return dataset
    rng = np.random.default_rng(seed)
    ctx = dataset.contexts.copy()
    for i in range(dataset.n_interactions):
        cols = rng.choice(dataset.n_features, size=n_zero, replace=False)
        ctx[i, cols] = 0.0
    return replace(dataset, contexts=ctx)
