"""Command line pipeline: gen, train, calibrate, eval, decide.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys

import numpy as np

from . import config as C
from .calibration import TableFormatError, calibrate, load_table, save_table
from .data import DatasetFormatError, generate, load_csv, save_csv
from .decision import compare, estimate, verify
from .metrics import EvalReport, comparability_section, mae, per_group_mae, verification_section, UnreachableTPRError
from .model import CheckpointError, TrainingDivergedError, forward, load_model, save_model, train, write_history

log = logging.getLogger("confage")

METHOD_ALIASES = {"sr": "singular_regression", "singular_regression": "singular_regression", "confidence": "confidence"}


class UsageError(Exception):
    pass


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _method(name):
    if name not in METHOD_ALIASES:
        raise UsageError(f"unknown method {name!r}")
    return METHOD_ALIASES[name]


def _provenance(cfg, **inputs):
    return {"config": C.to_json_dict(cfg), "seed": cfg["seed"], "inputs": inputs}


# -- commands ---------------------------------------------------------------

def cmd_gen(args, cfg):
    if args.n is not None and args.n < 1:
        raise UsageError(f"--n must be positive, got {args.n}")
    gcfg = C.gen_config(cfg)
    save_csv(generate(gcfg), args.out)
    log.info("wrote %d samples to %s", gcfg.n, args.out)


def cmd_train(args, cfg):
    data = load_csv(args.data)
    spec = C.model_spec(cfg, data.input_dim)
    loss_cfg = C.loss_config(cfg)
    train_cfg = C.train_config(cfg)
    params, history = train(data, spec, loss_cfg, train_cfg)
    extra = {**_provenance(cfg, data_sha256=_sha256(args.data)), "training_log": history}
    save_model(args.out, params, spec, loss_cfg, extra)
    if args.log:
        write_history(history, args.log)
    last = history[-1]
    log.info("final epoch: train loss %.5f, val mae %s", last["train_l_total"], last.get("val_mae"))


def _predict(model_path, features):
    params, spec, _, _ = load_model(model_path)
    if np.ndim(features) == 1:
        features = np.reshape(features, (1, -1))
    if np.shape(features)[1] != spec.input_dim:
        raise UsageError(f"model expects {spec.input_dim} features, got {np.shape(features)[1]}")
    return forward(params, spec, features)


def cmd_calibrate(args, cfg):
    if not 0 < cfg["calib.target_fpr"] < 0.5:
        raise UsageError(f"target FPR must be in (0, 0.5), got {cfg['calib.target_fpr']}")
    data = load_csv(args.data)
    mu, sigma = _predict(args.model, data.features)
    kw = dict(
        target_fpr=cfg["calib.target_fpr"], bucket_width=cfg["calib.bucket_width"],
        side_split=cfg["calib.side_split"], min_bucket_n=cfg["calib.min_bucket_n"],
    )
    prov = _provenance(cfg, model_sha256=_sha256(args.model), data_sha256=_sha256(args.data))
    save_table(args.out, calibrate(mu, sigma, data.ages, **kw), prov)
    if args.baseline_out:
        save_table(args.baseline_out, calibrate(mu, sigma, data.ages, sigma_blind=True, **kw), prov)


def cmd_eval(args, cfg):
    data = load_csv(args.data)
    table = load_table(args.table) if args.table else None
    baseline = load_table(args.baseline_table) if args.baseline_table else None
    methods = ("singular_regression", "confidence") if args.method == "both" else (_method(args.method),)
    if args.task == "verify" and "confidence" in methods and table is None:
        raise UsageError("--table is required for the confidence method")
    if args.task == "compare":
        if table is None:
            raise UsageError("--table is required for --task compare")
        if args.baseline == "fixed" and baseline is None:
            raise UsageError("--baseline fixed needs --baseline-table (see calibrate --baseline-out)")
    mu, sigma = _predict(args.model, data.features)
    report = EvalReport(
        overall_mae=mae(mu, data.ages),
        per_group_mae=per_group_mae(mu, data.ages, data.groups),
        n=len(data),
    )
    if args.task == "verify":
        pol = C.policy(cfg)
        report.verification = verification_section(
            mu, sigma, data.ages, pol.legal_age, pol.challenge_age, table, methods,
            match=len(methods) == 2,
        )
    elif args.task == "compare":
        report.comparability = comparability_section(
            mu, sigma, data.ages, table, baseline if args.baseline == "fixed" else None
        )
    inputs = {"model_sha256": _sha256(args.model), "data_sha256": _sha256(args.data)}
    if args.table:
        inputs["table_sha256"] = _sha256(args.table)
    if args.baseline_table:
        inputs["baseline_table_sha256"] = _sha256(args.baseline_table)
    report.config = {**_provenance(cfg, **inputs), "task": args.task, "method": args.method, "baseline": args.baseline}
    report.write(args.out, args.summary)
    if args.summary is None:
        sys.stdout.write("\n".join(report.summary_lines()) + "\n")


def cmd_decide(args, cfg):
    if args.mu is not None or args.sigma is not None:
        if args.mu is None or args.sigma is None:
            raise UsageError("--mu and --sigma go together")
        mu, sigma = args.mu, args.sigma
    elif args.model and args.features:
        try:
            feats = np.array([float(v) for v in args.features.split(",")])
        except ValueError:
            raise UsageError("--features must be comma-separated numbers") from None
        m, s = _predict(args.model, feats)
        mu, sigma = float(m[0]), float(s[0])
    else:
        raise UsageError("give --mu/--sigma or --model with --features")
    if not sigma > 0:
        raise UsageError(f"--sigma must be positive, got {sigma}")
    table = load_table(args.table) if args.table else None
    if args.task == "estimate":
        rec = estimate(mu, sigma)
    elif args.task == "verify":
        pol = C.policy(cfg, _method(args.method) if args.method else None)
        if pol.method == "confidence" and table is None:
            raise UsageError("--table is required for the confidence method")
        rec = verify(mu, sigma, pol, table)
    else:
        if args.claimed is None:
            raise UsageError("--claimed is required for --task compare")
        if table is None:
            raise UsageError("--table is required for --task compare")
        rec = compare(mu, sigma, args.claimed, table)
    sys.stdout.write(rec.to_json() + "\n")


# -- parser -----------------------------------------------------------------

def _global_flags(parser, suppress):
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=d, help="JSON file of flat dotted keys")
    parser.add_argument("--seed", type=int, default=d)
    parser.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser():
    p = argparse.ArgumentParser(prog="confage", description=__doc__)
    _global_flags(p, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="write a synthetic dataset CSV")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, dest="n")
    g.add_argument("--input-dim", type=int, dest="gen.input_dim")
    g.add_argument("--noise-base", type=float, dest="gen.noise_base")
    g.add_argument("--noise-slope", type=float, dest="gen.noise_slope")
    g.add_argument("--groups", type=int, dest="gen.groups")
    g.add_argument("--group-noise-mult", dest="gen.group_noise_mult", help="comma-separated multipliers")
    g.add_argument("--embedding-seed", type=int, dest="gen.embedding_seed")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", parents=[common], help="fit the model, write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="also write the per-epoch log as CSV")
    t.add_argument("--epochs", type=int, dest="train.epochs")
    t.add_argument("--batch-size", type=int, dest="train.batch_size")
    t.add_argument("--learning-rate", type=float, dest="train.learning_rate")
    t.add_argument("--optimizer", choices=("adam", "sgd"), dest="train.optimizer")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("calibrate", parents=[common], help="fit per-bucket thresholds")
    c.add_argument("--model", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--baseline-out", help="also write the sigma-blind fixed-width table")
    c.add_argument("--target-fpr", type=float, dest="calib.target_fpr")
    c.add_argument("--bucket-width", type=float, dest="calib.bucket_width")
    c.add_argument("--side-split", type=float, dest="calib.side_split")
    c.add_argument("--min-bucket-n", type=int, dest="calib.min_bucket_n")
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("eval", parents=[common], help="evaluate a model on a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--table")
    e.add_argument("--task", choices=("estimate", "verify", "compare"), default="estimate")
    e.add_argument("--legal", type=float, dest="policy.legal_age")
    e.add_argument("--challenge", type=float, dest="policy.challenge_age")
    e.add_argument("--method", choices=("both", "sr", "singular_regression", "confidence"), default="both")
    e.add_argument("--baseline", choices=("none", "fixed"), default="none")
    e.add_argument("--baseline-table")
    e.add_argument("--out", required=True, help="JSON report path")
    e.add_argument("--summary", help="flat name/value summary path (stdout if omitted)")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("decide", parents=[common], help="one decision record on stdout")
    d.add_argument("--task", choices=("estimate", "verify", "compare"), default="estimate")
    d.add_argument("--mu", type=float)
    d.add_argument("--sigma", type=float)
    d.add_argument("--model")
    d.add_argument("--features", help="comma-separated feature vector")
    d.add_argument("--table")
    d.add_argument("--legal", type=float, dest="policy.legal_age")
    d.add_argument("--challenge", type=float, dest="policy.challenge_age")
    d.add_argument("--method", choices=("sr", "singular_regression", "confidence"))
    d.add_argument("--claimed", type=float)
    d.set_defaults(func=cmd_decide)
    return p


def _overrides(args):
    out = {k: v for k, v in vars(args).items() if "." in k}
    if getattr(args, "n", None) is not None:
        out["gen.n"] = args.n
    if args.seed is not None:
        out["seed"] = args.seed
    mult = out.get("gen.group_noise_mult")
    if isinstance(mult, str):
        try:
            out["gen.group_noise_mult"] = [float(v) for v in mult.split(",")]
        except ValueError:
            raise UsageError("--group-noise-mult must be comma-separated numbers") from None
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        file_values = C.load(args.config) if args.config else {}
        cfg = C.resolve(file_values, _overrides(args))
        args.func(args, cfg)
    except (UsageError, C.ConfigError) as exc:
        parser.exit(2, f"confage: error: {exc}\n")
    except (TrainingDivergedError, DatasetFormatError, CheckpointError, TableFormatError,
            UnreachableTPRError, OSError) as exc:
        parser.exit(1, f"confage: error: {exc}\n")
    except ValueError as exc:
        parser.exit(2, f"confage: error: {exc}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
