"""Command line front-end: ``epass-lab {train,eval,ablate,gen-data}``.

Exit codes: 0 success, 1 numeric failure during training, 2 invalid input
(bad config, infeasible split, unreadable file or checkpoint).
"""
import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import config as config_mod
from . import data
from .errors import (ConfigError, CorruptCheckpoint, EmptySet, EpassError,
                     InfeasibleSplit, TrainingAborted)
from .evalcalib import metrics_document, reliability, write_metrics
from .trainer import Trainer, read_checkpoint

log = logging.getLogger("epass_lab")

STEPS_LOG = "steps.jsonl"
TIMING_LOG = "timing.jsonl"
EVAL_LOG = "evals.jsonl"
CHECKPOINT = "checkpoint.npz"


class UsageError(Exception):
    """Bad input; reported with exit code 2."""


def _evaluate(trainer, test, bins, out_dir, live=False):
    out_dir = Path(out_dir)
    doc = {}
    for name, use_ema in (("ema", True), ("live", False)):
        if name == "live" and not live:
            continue
        plog = trainer.predict(test, use_ema=use_ema)
        doc[name] = metrics_document(plog, bins)
        if name == "ema":
            bins_tbl = reliability(plog, bins)
            (out_dir / "reliability.tsv").write_text(bins_tbl.to_tsv())
            (out_dir / "histogram.tsv").write_text(bins_tbl.histogram_tsv())
    write_metrics(doc, out_dir / "metrics.json")
    return doc


def run_training(cfg, out_dir, resume=None, quiet=True):
    """Train per ``cfg`` into ``out_dir``; returns the metrics document."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labeled, unlabeled, test = config_mod.build_datasets(cfg)
    spec = config_mod.network_spec(cfg, labeled)
    policy = config_mod.policy(cfg, labeled.kind)
    (out_dir / "config.yaml").write_text(cfg.to_yaml())
    if resume:
        trainer = Trainer.load(resume, labeled, unlabeled, policy)
        mode = "a"
    else:
        trainer = Trainer(spec, cfg.train, labeled, unlabeled, policy)
        mode = "w"
    every = cfg.train.eval_every
    ckpt_every = cfg.train.checkpoint_every
    with open(out_dir / STEPS_LOG, mode) as steps_fh, \
            open(out_dir / TIMING_LOG, mode) as time_fh, \
            open(out_dir / EVAL_LOG, mode) as eval_fh:

        def on_record(rec, tr):
            steps_fh.write(rec.to_json() + "\n")
            time_fh.write(json.dumps({"step": rec.step, "wall_time": rec.wall_time}) + "\n")
            if every and tr.step % every == 0:
                acc = tr.accuracy(test)
                eval_fh.write(json.dumps({"step": tr.step, "accuracy": acc}) + "\n")
                if not quiet:
                    log.info("step %d  loss %.4f  test acc %.4f", tr.step, rec.total, acc)
            if ckpt_every and tr.step % ckpt_every == 0:
                tr.save(out_dir / CHECKPOINT, extra={"experiment": cfg.to_dict()})

        trainer.run(on_record=on_record)
    trainer.save(out_dir / CHECKPOINT, extra={"experiment": cfg.to_dict()})
    return _evaluate(trainer, test, cfg.eval.bins, out_dir)


def _load_cfg(args):
    overrides = {"seed": args.seed}
    return config_mod.load_config(args.config, overrides)


def cmd_train(args):
    cfg = _load_cfg(args)
    out = args.out or cfg.out
    doc = run_training(cfg, out, resume=args.resume, quiet=args.quiet)
    if not args.quiet:
        print(f"accuracy {doc['ema']['accuracy']:.4f}  ece {doc['ema']['ece']:.4f}  -> {out}")
    return 0


def cmd_eval(args):
    try:
        meta, _ = read_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise UsageError(f"checkpoint not found: {args.checkpoint}") from None
    exp = meta.get("extra", {}).get("experiment")
    cfg = config_mod.ExperimentConfig()
    if exp is not None:
        # --seed swaps in the test set generated for another seed
        cfg = config_mod.parse_config(_dump_yaml(exp), {"seed": args.seed})
    if args.data:
        if not os.path.exists(args.data):
            raise UsageError(f"dataset file not found: {args.data}")
        test = data.load_dataset(args.data)
        labeled = unlabeled = test
    else:
        if exp is None:
            raise UsageError("checkpoint has no experiment record; pass --data")
        labeled, unlabeled, test = config_mod.build_datasets(cfg)
    trainer = Trainer.load(args.checkpoint, labeled, unlabeled)
    out = Path(args.out or Path(args.checkpoint).parent)
    out.mkdir(parents=True, exist_ok=True)
    doc = _evaluate(trainer, test, args.bins or cfg.eval.bins, out, live=args.live)
    if not args.quiet:
        for name, d in doc.items():
            print(f"{name}: accuracy {d['accuracy']:.4f}  ece {d['ece']:.4f}")
    return 0


def _dump_yaml(d):
    return yaml.safe_dump(d, sort_keys=False)


def _parse_axis(text):
    name, _, values = text.partition("=")
    name = name.strip()
    vals = [v.strip() for v in values.split(",") if v.strip()]
    if name not in ("projectors", "strategy") or not vals:
        raise UsageError("--axis must look like projectors=1,2,3 or strategy=mean,sum")
    if name == "projectors":
        try:
            return name, [int(v) for v in vals]
        except ValueError:
            raise UsageError("projector counts must be integers") from None
    bad = set(vals) - {"mean", "sum", "concat"}
    if bad:
        raise UsageError(f"unknown strategies: {sorted(bad)}")
    return name, vals


def _ablation_job(job):
    cfg_dict, out_dir = job
    cfg = config_mod.parse_config(_dump_yaml(cfg_dict))
    try:
        doc = run_training(cfg, out_dir)
        return doc["ema"]["accuracy"], None
    except EpassError as exc:
        return None, str(exc)


def cmd_ablate(args):
    cfg = _load_cfg(args)
    axis, values = _parse_axis(args.axis)
    out = Path(args.out or cfg.out)
    jobs, keys = [], []
    for value in values:
        for i in range(args.seeds):
            d = cfg.to_dict()
            d["seed"] = cfg.seed + i
            if axis == "projectors":
                d["train"]["num_projectors"] = value
            else:
                d["train"]["strategy"] = value
            jobs.append((d, str(out / f"{axis}={value}" / f"seed={cfg.seed + i}")))
            keys.append(value)
    workers = max(1, int(os.environ.get("EPASS_LAB_THREADS", "1")))
    if workers == 1:
        results = [_ablation_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_ablation_job, jobs))
    lines = ["axis\tvalue\tmean_accuracy\tstd_accuracy\tn_runs\terror"]
    for value in values:
        accs = [r[0] for k, r in zip(keys, results) if k == value and r[0] is not None]
        errs = [r[1] for k, r in zip(keys, results) if k == value and r[1] is not None]
        mean = f"{np.mean(accs):.6g}" if accs else "nan"
        std = f"{np.std(accs):.6g}" if accs else "nan"
        lines.append(f"{axis}\t{value}\t{mean}\t{std}\t{len(accs)}\t{'; '.join(errs) or '-'}")
    table = "\n".join(lines) + "\n"
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.tsv").write_text(table)
    if not args.quiet:
        print(table, end="")
    return 0


def cmd_gen_data(args):
    if args.out is None:
        raise UsageError("gen-data needs --out FILE")
    ds = data.gen_two_moons(args.n, args.noise, args.seed or 0)
    if args.imbalance is not None:
        n_max = int(np.bincount(ds.labels).min())
        ds = data.make_imbalanced(ds, data.ImbalanceSpec(n_max, args.imbalance, ds.num_classes),
                                  args.seed or 0)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    data.save_vectors(ds, args.out)
    if not args.quiet:
        print(f"wrote {len(ds)} samples to {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="epass-lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="experiment YAML file")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="output directory (or file for gen-data)")
        sp.add_argument("--quiet", action="store_true", help="only print errors")

    sp = sub.add_parser("train", help="train one model")
    common(sp)
    sp.add_argument("--resume", default=None, help="checkpoint to continue from")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp, config=False)
    sp.add_argument("--checkpoint", required=True, help="checkpoint.npz written by train")
    sp.add_argument("--data", default=None, help="dataset file (default: regenerate test set)")
    sp.add_argument("--live", action="store_true", help="also report the non-EMA weights")
    sp.add_argument("--bins", type=int, default=None, help="ECE bins (default: from the run config)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="sweep projector count or ensemble strategy")
    common(sp)
    sp.add_argument("--axis", required=True, help="projectors=1,2,3,4 or strategy=mean,sum,concat")
    sp.add_argument("--seeds", type=int, default=3, help="runs per value (seed, seed+1, ...)")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("gen-data", help="write a two-moons dataset as CSV")
    common(sp, config=False)
    sp.add_argument("--n", type=int, default=1000, help="number of samples")
    sp.add_argument("--noise", type=float, default=0.05, help="Gaussian noise std")
    sp.add_argument("--imbalance", type=float, default=None, help="long-tail ratio N_max/N_min")
    sp.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, InfeasibleSplit, EmptySet, CorruptCheckpoint) as exc:
        print(f"epass-lab: error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"epass-lab: error: {exc}", file=sys.stderr)
        return 2
    except TrainingAborted as exc:
        print(f"epass-lab: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
