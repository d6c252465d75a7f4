"""Metrics and experiment protocols.

Implicit feedback: Hit-Rate@K. Each test positive is ranked against 100
fixed negatives (half item-corrupted, half context-corrupted, drawn without
replacement and seeded per positive, so every method sees identical
candidate sets). Ties count against the positive. Explicit feedback: RMSE
and MAE over the test split.

`compare_transfer` runs the full one-to-many protocol: train on the dense
source, pretrain each sparse target, transfer + adapt with each requested
method, and report metric deltas and timing ratios against from-scratch
target training. Evaluation over a frozen model is read-only and safe to
parallelize across positives.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from .data import DomainDataset, context_drop
from .errors import ConfigError, EvalError
from .model import ModelConfig, Recommender
from .training import TrainConfig, predict_ratings, train_model
from .transfer import TransferPlan, adapt_target, train_source_regularizers


@dataclass
class EvalReport:
    domain_id: str
    method: str
    metrics: dict
    wall_seconds: float = 0.0
    epochs_to_convergence: int = 0
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _candidate_negatives(dataset: DomainDataset, t: int, n_item: int, n_ctx: int, seed: int):
    """Fixed per-positive negatives: distinct items and distinct train contexts."""
    rng = np.random.default_rng([seed, int(t)])
    pos_item = int(dataset.items[t])
    pool_items = dataset.n_items - 1
    if pool_items < n_item:
        raise EvalError(f"{dataset.n_items} items cannot supply {n_item} distinct negatives")
    items = rng.choice(dataset.n_items - 1, size=n_item, replace=False)
    items[items >= pos_item] += 1  # skip the positive without rejection

    train_idx = dataset.splits.get("train")
    if train_idx is None or len(train_idx) <= n_ctx:
        raise EvalError("train split too small to supply distinct context negatives")
    pos_ctx = dataset.contexts[t]
    draw = rng.choice(len(train_idx), size=min(len(train_idx), n_ctx + 8), replace=False)
    rows = train_idx[draw]
    keep = ~np.all(dataset.contexts[rows] == pos_ctx, axis=1)
    rows = rows[keep][:n_ctx]
    if len(rows) < n_ctx:
        raise EvalError("could not find enough non-identical context negatives")
    return items, rows


def hit_rate(model, dataset: DomainDataset, k_list=(1, 5), n_neg: int = 100,
             seed: int = 0, domain: str | None = None, adapters: str | None = None,
             score_fn=None, chunk_positives: int = 32) -> dict:
    """Mean Hit-Rate@K over the test split with fixed mixed negatives.

    Negatives split evenly between item corruptions and context corruptions
    of each positive, drawn once per positive from its own seed stream
    (independent of iteration order). A positive tied with a negative
    counts as a miss. `score_fn(users, items, contexts)` overrides the
    model's scorer (testing hook).
    """
    if dataset.feedback != "implicit":
        raise EvalError("hit_rate applies to implicit-feedback datasets")
    test_idx = dataset.split_indices("test")
    if len(test_idx) == 0:
        raise EvalError("empty test split")
    domain = domain or dataset.domain_id
    n_item = n_neg // 2
    n_ctx = n_neg - n_item
    if score_fn is None:
        score_fn = lambda u, v, c: model.score_batch(domain, u, v, c, adapters=adapters)

    hits = {k: 0 for k in k_list}
    for lo in range(0, len(test_idx), chunk_positives):
        sel = test_idx[lo : lo + chunk_positives]
        users, items, ctxs = [], [], []
        for t in sel:
            neg_items, neg_rows = _candidate_negatives(dataset, t, n_item, n_ctx, seed)
            u, v, c = int(dataset.users[t]), int(dataset.items[t]), dataset.contexts[t]
            block_items = np.concatenate([[v], neg_items, np.full(n_ctx, v)])
            block_ctx = np.concatenate([c[None, :], np.repeat(c[None, :], n_item, axis=0),
                                        dataset.contexts[neg_rows]])
            users.append(np.full(1 + n_neg, u))
            items.append(block_items)
            ctxs.append(block_ctx)
        scores = np.asarray(
            score_fn(np.concatenate(users), np.concatenate(items), np.concatenate(ctxs))
        ).reshape(len(sel), 1 + n_neg)
        pos = scores[:, 0]
        beaten_by = (scores[:, 1:] >= pos[:, None]).sum(axis=1)  # ties lose
        for k in k_list:
            hits[k] += int((beaten_by < k).sum())
    return {k: hits[k] / len(test_idx) for k in k_list}


def rmse_mae(model, dataset: DomainDataset, domain: str | None = None,
             adapters: str | None = None) -> tuple[float, float]:
    """Root-mean-square and mean-absolute rating error over the test split."""
    if dataset.feedback != "explicit":
        raise EvalError("rmse_mae applies to explicit-feedback datasets")
    test_idx = dataset.split_indices("test")
    if len(test_idx) == 0:
        raise EvalError("empty test split")
    preds = predict_ratings(model, dataset, test_idx, domain=domain, adapters=adapters)
    resid = dataset.ratings[test_idx] - preds
    return float(np.sqrt(np.mean(resid**2))), float(np.mean(np.abs(resid)))


def primary_metrics(model, dataset, domain=None, adapters=None, seed: int = 0) -> dict:
    """The headline test metric(s) for the dataset's feedback mode."""
    if dataset.feedback == "explicit":
        r, m = rmse_mae(model, dataset, domain=domain, adapters=adapters)
        return {"rmse": r, "mae": m}
    hr = hit_rate(model, dataset, seed=seed, domain=domain, adapters=adapters)
    return {f"hr@{k}": v for k, v in hr.items()}


def _headline(metrics: dict) -> tuple[str, float, bool]:
    """(name, value, lower_is_better) of the comparison metric."""
    if "rmse" in metrics:
        return "rmse", metrics["rmse"], True
    return "hr@1", metrics["hr@1"], False


def train_fresh(cfg: ModelConfig, dataset, tcfg: TrainConfig, seed: int):
    model = Recommender(cfg, seed=seed)
    model.add_domain_for(dataset)
    log = train_model(model, dataset, tcfg)
    return model, log


def robustness_sweep(model_cfg: ModelConfig, dataset: DomainDataset,
                     drop_fracs=(0.05, 0.10, 0.15, 0.20), seeds=(0, 1, 2),
                     tcfg: TrainConfig | None = None) -> dict:
    """Retrain + evaluate under random context-feature dropout.

    Dropout applies at train and test time (the whole dataset is degraded).
    Returns {fraction: mean % degradation vs the clean run}; degradation is
    the relative RMSE increase or relative HR@1 decrease.
    """
    tcfg = tcfg or TrainConfig()
    rows = {f: [] for f in drop_fracs}
    for seed in seeds:
        run_cfg = TrainConfig(lr=tcfg.lr, batch_size=tcfg.batch_size,
                              max_epochs=tcfg.max_epochs, patience=tcfg.patience, seed=seed)
        model0, _ = train_fresh(model_cfg, dataset, run_cfg, seed)
        name, base, lower = _headline(primary_metrics(model0, dataset, seed=seed))
        for frac in drop_fracs:
            ds = context_drop(dataset, frac, seed=seed + 77)
            model, _ = train_fresh(model_cfg, ds, run_cfg, seed)
            _, val, _ = _headline(primary_metrics(model, ds, seed=seed))
            degr = (val - base) / base if lower else (base - val) / base
            rows[frac].append(100.0 * degr)
    return {f: float(np.mean(v)) for f, v in rows.items()}


def compare_transfer(source_ds: DomainDataset, target_ds_list, methods, seeds,
                     model_cfg: ModelConfig, tcfg: TrainConfig | None = None,
                     plan: TransferPlan | None = None):
    """From-scratch baseline vs each transfer method on every target.

    Returns (reports, summary). Per seed: the source model trains once and
    its shared layers serve all targets (regularizers included when "drr"
    is requested).

    Each method's `timing_ratio` divides the from-scratch wall-clock to
    reach the adapted model's final validation quality by the method's
    total adaptation wall-clock (pretraining included). A from-scratch run
    that never reaches that quality is charged its full training budget at
    the measured per-epoch cost -- giving up early is not reaching it.
    """
    for t in target_ds_list:
        if t.n_features != source_ds.n_features:
            raise ConfigError("all domains in one experiment must share |C|")
    tcfg = tcfg or TrainConfig()
    plan = plan or TransferPlan()
    reports: list[EvalReport] = []
    deltas: dict = {}

    for seed in seeds:
        run_tcfg = TrainConfig(lr=tcfg.lr, batch_size=tcfg.batch_size,
                               max_epochs=tcfg.max_epochs, patience=tcfg.patience, seed=seed)
        t_src = time.perf_counter()
        source_model, src_log = train_fresh(model_cfg, source_ds, run_tcfg, seed)
        src_wall = time.perf_counter() - t_src
        reports.append(EvalReport(source_ds.domain_id, "source",
                                  primary_metrics(source_model, source_ds, seed=seed),
                                  src_wall, src_log.best_epoch, seed))
        regs = None
        if "drr" in methods:
            regs = train_source_regularizers(source_model, source_ds, plan, seed=seed)

        for target_ds in target_ds_list:
            scratch_model, scratch_log = train_fresh(model_cfg, target_ds, run_tcfg, seed)
            scratch_metrics = primary_metrics(scratch_model, target_ds, seed=seed)
            name, scratch_val, lower = _headline(scratch_metrics)
            reports.append(EvalReport(target_ds.domain_id, "scratch", scratch_metrics,
                                      scratch_log.wall_seconds, scratch_log.best_epoch, seed))

            for method in methods:
                m_plan = TransferPlan(method=method, pretrain_epochs=plan.pretrain_epochs,
                                      anneal=plan.anneal, drr=plan.drr)
                model = Recommender(model_cfg, seed=seed)
                model.add_domain_for(target_ds)
                info = adapt_target(model, target_ds, m_plan, source_model, run_tcfg,
                                    regs=regs)
                adapters = target_ds.domain_id if method == "drr" else None
                metrics = primary_metrics(model, target_ds, adapters=adapters, seed=seed)
                _, val, _ = _headline(metrics)
                improve = 100.0 * ((scratch_val - val) / scratch_val if lower
                                   else (val - scratch_val) / scratch_val)
                # from-scratch wall-clock to reach the adapted model's
                # validation quality: the first epoch that matched it, or --
                # when the run never matches -- the full training budget
                # (early-stop surrender is not achievement; extrapolate the
                # measured epoch cost over max_epochs)
                reached = [e.wall_seconds for e in scratch_log.epochs
                           if e.val_metric <= info["val_metric"]]
                if reached:
                    scratch_cost = reached[0]
                else:
                    per_epoch = scratch_log.wall_seconds / max(len(scratch_log.epochs), 1)
                    scratch_cost = per_epoch * tcfg.max_epochs
                ratio = scratch_cost / max(info["wall_seconds"], 1e-9)
                metrics = dict(metrics)
                metrics["improvement_pct"] = improve
                metrics["timing_ratio"] = ratio
                metrics["scratch_seconds_to_adapt_quality"] = scratch_cost
                log = info.get("log")
                epochs = log.best_epoch if log is not None and log.best_epoch > 0 else 0
                reports.append(EvalReport(target_ds.domain_id, method, metrics,
                                          info["wall_seconds"], epochs, seed))
                deltas.setdefault((target_ds.domain_id, method), []).append(improve)

    summary = {
        "metric_deltas_pct": {
            f"{dom}/{meth}": {
                "mean": float(np.mean(v)),
                "std": float(np.std(v)),
                "wins": int(sum(1 for x in v if x > 0)),
                "runs": len(v),
            }
            for (dom, meth), v in deltas.items()
        }
    }
    return reports, summary


def write_reports(reports, json_path=None, csv_path=None, summary=None) -> None:
    """Persist reports as one JSON document and/or a flat CSV summary."""
    if json_path:
        payload = {"reports": [r.to_dict() for r in reports]}
        if summary is not None:
            payload["summary"] = summary
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
    if csv_path:
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["domain", "method", "metric", "value", "seed", "wall_seconds"])
            for r in reports:
                for metric, value in r.metrics.items():
                    w.writerow([r.domain_id, r.method, metric, value, r.seed,
                                f"{r.wall_seconds:.3f}"])
