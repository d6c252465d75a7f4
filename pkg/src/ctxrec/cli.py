"""Command-line entry points.

    ctxrec synth      --config synth.json --out DIR
    ctxrec train      --data D.jsonl [--manifest M.json] [--config C.json] --out CKPT
    ctxrec eval       --ckpt CKPT --data D.jsonl [--metrics hr@1,hr@5|rmse,mae]
    ctxrec transfer   --source CKPT --data T.jsonl --method direct|anneal|drr
                      [--source-data S.jsonl] --out CKPT
    ctxrec gradcheck  [--seed N]
    ctxrec compare    --source S.jsonl --targets T1.jsonl,T2.jsonl
                      --methods direct,anneal,drr --seeds 0,1,2 --out DIR

Any extra `--section.key value` pair overrides the corresponding config
field (e.g. --model.d 16 --train.lr 0.002 --transfer.method anneal).
Only log verbosity is environment-controlled (CTXREC_QUIET=1); every
scientific input flows through config files or flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_mod
from . import evaluation, synth, transfer
from .config import ExperimentConfig, load_dataset
from .data import write_jsonl, write_manifest
from .errors import CtxrecError
from .evaluation import EvalReport, primary_metrics, write_reports
from .model import Recommender
from .training import train_model


def _say(*args):
    if os.environ.get("CTXREC_QUIET", "") != "1":
        print(*args)


def _parse_overrides(pairs):
    if len(pairs) % 2:
        raise SystemExit(f"dangling override flag {pairs[-1]!r}")
    out = {}
    for flag, value in zip(pairs[::2], pairs[1::2]):
        if not flag.startswith("--"):
            raise SystemExit(f"expected --section.key flag, got {flag!r}")
        try:
            out[flag[2:]] = json.loads(value)
        except json.JSONDecodeError:
            out[flag[2:]] = value
    return out


def _experiment(args, extra) -> ExperimentConfig:
    cfg = ExperimentConfig.load(getattr(args, "config", None), _parse_overrides(extra))
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out = args.out
    return cfg


def _load(cfg: ExperimentConfig, path, manifest=None):
    path = path or cfg.data.get("path")
    if not path:
        raise CtxrecError("no dataset given: pass --data or set data.path")
    return load_dataset(path, manifest_path=manifest, data_cfg=cfg.data, seed=cfg.seed)


def cmd_synth(args, extra) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    doc.update(_parse_overrides(extra))
    scfg = synth.SynthConfig.from_dict(doc)
    datasets, rule = synth.synth_generate(scfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for ds in datasets:
        write_jsonl(ds, out / f"{ds.domain_id}.jsonl")
        write_manifest(ds, out / f"{ds.domain_id}.manifest.json")
    synth.save_rule(rule, out / "rule.json")
    _say(f"wrote {len(datasets)} domains + rule.json to {out}")
    return 0


def cmd_train(args, extra) -> int:
    cfg = _experiment(args, extra)
    ds = _load(cfg, args.data, args.manifest)
    model = Recommender(cfg.model_config(ds), seed=cfg.seed)
    model.add_domain_for(ds)
    tcfg = cfg.train_config()

    out = Path(cfg.out or "ckpt")
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "epochs.jsonl"
    log_fh = open(log_path, "w", encoding="utf-8")

    def epoch_hook(epoch, entry):
        log_fh.write(json.dumps({
            "epoch": entry.epoch, "train_loss": entry.train_loss,
            "val_metric": entry.val_metric, "wall_seconds": entry.wall_seconds,
        }) + "\n")
        log_fh.flush()
        _say(f"epoch {entry.epoch:3d}  train {entry.train_loss:.5f}  val {entry.val_metric:.5f}")

    t0 = time.perf_counter()
    tlog = train_model(model, ds, tcfg, epoch_hook=epoch_hook)
    log_fh.close()
    digest = ckpt_mod.save_model(model, out)
    report = EvalReport(ds.domain_id, "train", primary_metrics(model, ds, seed=cfg.seed),
                        time.perf_counter() - t0, tlog.best_epoch, cfg.seed)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    _say(f"checkpoint {out} (sha256 {digest[:12]}…)  metrics {report.metrics}")
    return 0


def cmd_eval(args, extra) -> int:
    cfg = _experiment(args, extra)
    ds = _load(cfg, args.data, args.manifest)
    model = ckpt_mod.restore_model(args.ckpt)
    adapters = ds.domain_id if f"adapter.{ds.domain_id}.c2.W" in model.store else None
    metrics = primary_metrics(model, ds, adapters=adapters, seed=cfg.seed)
    if args.metrics:
        wanted = args.metrics.split(",")
        metrics = {k: v for k, v in metrics.items() if k in wanted}
    report = EvalReport(ds.domain_id, "eval", metrics, 0.0, 0, cfg.seed)
    print(json.dumps(report.to_dict(), indent=2))
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2)
    return 0


def cmd_transfer(args, extra) -> int:
    cfg = _experiment(args, extra)
    if args.method:
        cfg.transfer["method"] = args.method
    plan = cfg.transfer_plan()
    ds = _load(cfg, args.data, args.manifest)
    source_ckpt = ckpt_mod.load_checkpoint(args.source)

    model = Recommender(cfg.model_config(ds), seed=cfg.seed)
    model.add_domain_for(ds)

    regs = None
    if plan.method == "drr":
        source_model = ckpt_mod.restore_model(source_ckpt)
        has_regs = all(f"reg.{s}.enc.h.W" in source_model.store for s in transfer.SITES)
        if not has_regs:
            if not args.source_data:
                raise CtxrecError(
                    "drr needs regularizers: none in the source checkpoint and "
                    "no --source-data to train them from"
                )
            src_ds = _load(cfg, args.source_data, args.source_manifest)
            transfer.train_source_regularizers(
                source_model, src_ds, plan, seed=cfg.seed, domain=source_ckpt.domains[0])
        # adopt the pre-trained regularizer parameters into the target store
        for name in source_model.store.names("reg."):
            model.store.add(name, source_model.store[name].tensor.copy())
        regs = {s: transfer.DistRegularizer.from_store(model.store, s)
                for s in transfer.SITES}

    info = transfer.adapt_target(model, ds, plan, source_ckpt, cfg.train_config(),
                                 regs=regs)
    adapters = ds.domain_id if plan.method == "drr" else None
    metrics = primary_metrics(model, ds, adapters=adapters, seed=cfg.seed)
    out = Path(cfg.out or "ckpt_transfer")
    digest = ckpt_mod.save_model(model, out)
    log = info.get("log")
    report = EvalReport(ds.domain_id, plan.method, metrics, info["wall_seconds"],
                        log.best_epoch if log and log.best_epoch > 0 else 0, cfg.seed)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    _say(f"{plan.method} transfer done: {metrics} (ckpt sha256 {digest[:12]}…)")
    return 0


def cmd_gradcheck(args, extra) -> int:
    from .diagnostics import gradcheck_suite

    ok = True
    for name, report in gradcheck_suite(args.seed).items():
        status = "PASS" if report.ok else "FAIL"
        ok &= report.ok
        print(f"gradcheck {name}: {status} ({report.checked} coordinates)")
        if not report.ok:
            print(report.summary())
    return 0 if ok else 1


def cmd_compare(args, extra) -> int:
    cfg = _experiment(args, extra)
    source_ds = _load(cfg, args.source, None)
    targets = [_load(cfg, p, None) for p in args.targets.split(",")]
    methods = args.methods.split(",")
    seeds = [int(s) for s in args.seeds.split(",")]
    model_cfg = cfg.model_config(source_ds)
    reports, summary = evaluation.compare_transfer(
        source_ds, targets, methods, seeds, model_cfg,
        tcfg=cfg.train_config(), plan=cfg.transfer_plan(),
    )
    out = Path(cfg.out or "compare_out")
    out.mkdir(parents=True, exist_ok=True)
    write_reports(reports, out / "reports.json", out / "reports.csv", summary=summary)
    print(json.dumps(summary, indent=2))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ctxrec", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic multi-domain datasets")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train all modules on one domain")
    p.add_argument("--data")
    p.add_argument("--manifest")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data")
    p.add_argument("--manifest")
    p.add_argument("--config")
    p.add_argument("--metrics")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("transfer", help="adapt a source checkpoint to a target domain")
    p.add_argument("--source", required=True)
    p.add_argument("--data")
    p.add_argument("--manifest")
    p.add_argument("--source-data")
    p.add_argument("--source-manifest")
    p.add_argument("--method", choices=["direct", "anneal", "drr"])
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("compare", help="compare transfer methods against from-scratch")
    p.add_argument("--source", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--methods", default="direct,anneal,drr")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    args, extra = parser.parse_known_args(argv)
    handler = {
        "synth": cmd_synth,
        "train": cmd_train,
        "eval": cmd_eval,
        "transfer": cmd_transfer,
        "gradcheck": cmd_gradcheck,
        "compare": cmd_compare,
    }[args.command]
    try:
        return handler(args, extra)
    except CtxrecError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
