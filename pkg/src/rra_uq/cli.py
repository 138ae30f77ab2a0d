"""Command-line entry point.

Subcommands share one workspace convention: `--out` names a directory where
each stage reads its predecessor's artifacts (train writes member checkpoints,
predict reads them and writes the predictive set, metrics reads that).  Exit
codes: 0 success, 2 configuration/usage error, 3 training divergence,
4 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import experiments as exp
from . import network as netmod
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (ConfigError, ContractError, DataFormatError,
                     ParameterError, TrainingDivergence)
from .inference import (PredictiveSet, aggregate, load_predictive_set,
                        predictive_set_to_csv, save_predictive_set)
from .metrics import accuracy, diversity_matrix, ece
from .serialize import write_text
from .variance import (analytic_dropout_var, analytic_droprelu_var_floor,
                       dominance_scan, empirical_epsilon, empirical_layer_var,
                       scan_to_csv)

PAPER_Q_GRID = (0.8, 0.85, 0.9, 0.95)


def _add_common(parser, config_required=True):
    parser.add_argument("--config", required=config_required,
                        help="path to a JSON experiment config")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config's master seed")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--format", choices=("json", "csv"), default="json",
                        help="report format (default json)")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (fallback: RRA_UQ_THREADS, then 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rra-uq",
        description="Uncertainty estimation via randomized ReLU activations")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_config in (("train", True), ("predict", True),
                               ("metrics", True), ("variance-check", False),
                               ("sweep", True), ("position", True),
                               ("suite", True)):
        _add_common(sub.add_parser(name), needs_config)
    return parser


def _load_config(args) -> exp.ExperimentConfig:
    cfg = exp.load_config(args.config)
    if args.seed is not None:
        cfg.master_seed = args.seed
    return cfg


def _emit(report: exp.Report, args, stem: str) -> str:
    path = os.path.join(args.out, f"{stem}.{args.format}")
    exp.emit_report(report, args.format, path)
    return path


def _ckpt_path(out_dir: str, member: int) -> str:
    return os.path.join(out_dir, f"member{member}.ckpt")


def cmd_train(args) -> int:
    cfg = _load_config(args)
    setup = exp.prepare_experiment(cfg)
    trained = exp.train_models(cfg, setup)
    body = {
        "schema": "rra-uq/train/v1",
        "kind": "training",
        "status": trained.status,
        "method": cfg.method.label(),
        "config": cfg.to_dict(),
        "parameter_count": sum(n.parameter_count() for n in trained.nets) or None,
        "members": [
            {"checkpoint": f"member{m}.ckpt",
             "final_loss": (c.loss_curve[-1] if c.loss_curve else None),
             "loss_curve": c.loss_curve, "lr_curve": c.lr_curve}
            for m, c in enumerate(trained.curves)
        ],
    }
    if trained.status != "ok":
        body["diverged_epoch"] = trained.diverged_epoch
    for m, net in enumerate(trained.nets):
        save_checkpoint(net.params, _ckpt_path(args.out, m))
    _emit(exp.Report(body, {"train_seconds": trained.seconds}), args, "report-train")
    return 0 if trained.status == "ok" else 3


def _load_members(cfg: exp.ExperimentConfig, setup: exp.ExperimentSetup, out_dir: str):
    members = cfg.method.members if cfg.method.name == "deep_ensemble" else 1
    nets = []
    for m in range(members):
        path = _ckpt_path(out_dir, m)
        if not os.path.exists(path):
            raise DataFormatError(f"missing checkpoint {path}; run `rra-uq train` first")
        params = load_checkpoint(path)
        net = netmod.build_network(setup.layers, setup.input_shape, None)
        for lname, entry in net.params.items():
            if lname not in params:
                raise ContractError(f"checkpoint lacks parameters for layer '{lname}'")
            for key, tensor in entry.items():
                loaded = params[lname][key]
                if loaded.shape != tensor.shape:
                    raise ContractError(
                        f"checkpoint tensor '{lname}/{key}' has shape "
                        f"{loaded.shape}, expected {tensor.shape}")
                net.params[lname][key] = loaded
        nets.append(net)
    return nets


def cmd_predict(args) -> int:
    cfg = _load_config(args)
    setup = exp.prepare_experiment(cfg)
    nets = _load_members(cfg, setup, args.out)
    ps = exp.predict_with_method(cfg, nets, setup.test_norm.features,
                                 exp.inference_stream(setup))
    save_predictive_set(ps, os.path.join(args.out, "predictions.bin"))
    if args.format == "csv":
        write_text(os.path.join(args.out, "predictions.csv"),
                   predictive_set_to_csv(ps))
    body = {
        "schema": "rra-uq/predict/v1",
        "kind": "prediction",
        "method": cfg.method.label(),
        "n_passes": ps.n_passes,
        "n_samples": int(ps.probs.shape[1]),
        "n_classes": int(ps.probs.shape[2]),
        "artifact": "predictions.bin",
    }
    _emit(exp.Report(body), args, "report-predict")
    return 0


def cmd_metrics(args) -> int:
    cfg = _load_config(args)
    setup = exp.prepare_experiment(cfg)
    ps = load_predictive_set(os.path.join(args.out, "predictions.bin"))
    labels = setup.test_norm.labels
    if ps.probs.shape[1] != labels.shape[0]:
        raise ContractError(
            f"predictions cover {ps.probs.shape[1]} samples but the test "
            f"split has {labels.shape[0]}")
    summary = aggregate(ps)
    ece_val, bins = ece(summary.confidence, summary.labels == labels, cfg.ece_bins)
    body = {
        "schema": "rra-uq/metrics/v1",
        "kind": "metrics",
        "method": cfg.method.label(),
        "accuracy": accuracy(summary.labels, labels),
        "ece": ece_val,
        "ece_bins": cfg.ece_bins,
        "mean_entropy": float(summary.entropy.mean()),
        "mean_variance": float(summary.mean_class_variance.mean()),
    }
    member_probs = exp.diversity_members(cfg, ps)
    if member_probs is None:
        body["diversity"] = None
    else:
        rep = diversity_matrix(member_probs)
        body["diversity"] = rep.summary()
    write_text(os.path.join(args.out, "reliability.csv"), bins.to_csv())
    _emit(exp.Report(body), args, "report-metrics")
    return 0


def cmd_variance_check(args) -> int:
    seed = args.seed if args.seed is not None else 0
    from .rng import RngStream
    vec_rng = RngStream(seed, stream_id=99)
    checks = []
    for i in range(5):
        x = vec_rng.uniform(-2.0, 2.0, (8,))
        for p in (0.2, 0.5):
            est, se = empirical_layer_var("dropout_unscaled", x, p, 100_000,
                                          vec_rng.fork(10 + i).stream_id)
            checks.append({"kind": "dropout_unscaled", "p": p,
                           "analytic": analytic_dropout_var(x, p),
                           "empirical": est, "se": se,
                           "within_3se": abs(est - analytic_dropout_var(x, p)) <= 3 * se})
        xneg = -np.abs(x)
        for q in (0.8, 0.9):
            est, se = empirical_layer_var("droprelu", xneg, q, 100_000,
                                          vec_rng.fork(20 + i).stream_id)
            floor = analytic_droprelu_var_floor(xneg, q)
            checks.append({"kind": "droprelu_all_negative", "q": q,
                           "analytic": floor, "empirical": est, "se": se,
                           "within_3se": abs(est - floor) <= 3 * se})
        eps, eps_se = empirical_epsilon(x, 0.8, 100_000,
                                        vec_rng.fork(30 + i).stream_id)
        checks.append({"kind": "epsilon", "q": 0.8, "empirical": eps,
                       "se": eps_se, "nonnegative": eps >= -3 * eps_se})
    scan_x = vec_rng.uniform(-2.0, 2.0, (8,))
    rows = dominance_scan(scan_x, [0.1, 0.2, 0.3, 0.4, 0.5],
                          [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95],
                          trials=100_000, seed=seed)
    write_text(os.path.join(args.out, "dominance-scan.csv"), scan_to_csv(rows))
    in_region = [r for r in rows if r["region"] == "q<=1-p"]
    body = {
        "schema": "rra-uq/variance/v1",
        "kind": "variance_check",
        "seed": seed,
        "checks": checks,
        "all_within_3se": all(c.get("within_3se", c.get("nonnegative", True))
                              for c in checks),
        "scan_cells": len(rows),
        "scan_cells_in_region": len(in_region),
        "scan_dominant_in_region": sum(1 for r in in_region if r["dominant"]),
        "scan_artifact": "dominance-scan.csv",
    }
    _emit(exp.Report(body), args, "report-variance")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    report = exp.q_sweep(cfg, PAPER_Q_GRID)
    _emit(report, args, "report-qsweep")
    return 0


def cmd_position(args) -> int:
    cfg = _load_config(args)
    report = exp.position_analysis(cfg, exp.POSITIONS)
    _emit(report, args, "report-position")
    return 0


def cmd_suite(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        import json
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"suite config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict) or "experiments" not in raw:
        raise ConfigError("suite config must be an object with an 'experiments' list")
    configs = [exp.config_from_dict(d) for d in raw["experiments"]]
    if args.seed is not None:
        for cfg in configs:
            cfg.master_seed = args.seed
    report = exp.run_suite(configs, args.threads)
    _emit(report, args, "report-suite")
    if any(row["status"] != "ok" for row in report.body["rows"]):
        return 3
    return 0


_COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "metrics": cmd_metrics,
    "variance-check": cmd_variance_check,
    "sweep": cmd_sweep,
    "position": cmd_position,
    "suite": cmd_suite,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        os.makedirs(args.out, exist_ok=True)
        return _COMMANDS[args.command](args)
    except (ConfigError, ParameterError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except (OSError, DataFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
