"""Config-driven experiment harness.

An experiment is (method, architecture, dataset, training recipe, inference
budget, master seed).  The master seed forks into named streams -- data
generation, init, training, inference, corruption -- so changing one phase's
consumption never perturbs another.  Report bodies are canonical JSON and are
byte-identical across reruns and thread counts; wall-clock timings live
outside the body.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import activations as act
from . import data as datamod
from . import network as netmod
from . import serialize
from .errors import ConfigError, ContractError, TrainingDivergence
from .inference import aggregate, ensemble_predict, mc_predict, single_predict
from .metrics import DEFAULT_BIN_COUNT, accuracy, diversity_matrix, ece, shift_sweep
from .rng import RngStream
from .training import DEFAULT_SCHEDULE, OptimizerState, train

METHOD_NAMES = ("single", "mc_dropout", "deep_ensemble", "mc_droprelu", "mc_rrelu")
ARCHITECTURES = ("mlp-1x32", "mlp-2x64", "mlp-3x128", "cnn-small")
POSITIONS = ("all", "first", "last")

# named stream indices off the master seed
_S_DATA_TRAIN, _S_DATA_TEST, _S_INIT, _S_TRAIN, _S_INFER, _S_CORRUPT = range(6)

_HIDDEN = {"mlp-1x32": [32], "mlp-2x64": [64, 64], "mlp-3x128": [128, 128, 128]}

DIVERSITY_MEMBERS = 4  # MC methods: diversity over the first 4 passes


@dataclass(frozen=True)
class MethodSpec:
    name: str
    drop_rate: float = 0.0
    retain_rate: float = 0.0
    members: int = 1
    low: float = 0.125
    high: float = 1.0 / 3.0

    def label(self) -> str:
        if self.name == "mc_dropout":
            return f"mc_dropout(p={self.drop_rate:g})"
        if self.name == "mc_droprelu":
            return f"mc_droprelu(q={self.retain_rate:g})"
        if self.name == "mc_rrelu":
            return f"mc_rrelu(l={self.low:g},u={self.high:g})"
        if self.name == "deep_ensemble":
            return f"deep_ensemble(M={self.members})"
        return self.name

    def to_dict(self) -> dict:
        d = {"name": self.name}
        if self.name == "mc_dropout":
            d["drop_rate"] = self.drop_rate
        elif self.name == "mc_droprelu":
            d["retain_rate"] = self.retain_rate
        elif self.name == "mc_rrelu":
            d["low"], d["high"] = self.low, self.high
        elif self.name == "deep_ensemble":
            d["members"] = self.members
        return d


def _method_from_dict(d) -> MethodSpec:
    if not isinstance(d, dict) or "name" not in d:
        raise ConfigError("method must be an object with a 'name' field")
    name = d["name"]
    if name not in METHOD_NAMES:
        raise ConfigError(f"unknown method '{name}' (expected one of {METHOD_NAMES})")
    if name == "mc_dropout":
        p = float(d.get("drop_rate", 0.2))
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"drop_rate must lie in [0, 1), got {p}")
        return MethodSpec(name, drop_rate=p)
    if name == "mc_droprelu":
        q = float(d.get("retain_rate", 0.9))
        if not 0.0 <= q <= 1.0:
            raise ConfigError(f"retain_rate must lie in [0, 1], got {q}")
        return MethodSpec(name, retain_rate=q)
    if name == "mc_rrelu":
        low = float(d.get("low", 0.125))
        high = float(d.get("high", 1.0 / 3.0))
        if not 0.0 <= low < high <= 1.0:
            raise ConfigError(f"need 0 <= low < high <= 1, got ({low}, {high})")
        return MethodSpec(name, low=low, high=high)
    if name == "deep_ensemble":
        m = int(d.get("members", 4))
        if m < 1:
            raise ConfigError(f"ensemble needs at least 1 member, got {m}")
        return MethodSpec(name, members=m)
    return MethodSpec(name)


@dataclass
class ExperimentConfig:
    method: MethodSpec
    architecture: str = "mlp-2x64"
    dataset: dict = field(default_factory=lambda: {
        "name": "two_moons", "train_size": 400, "test_size": 400, "noise": 0.12})
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    schedule: tuple = DEFAULT_SCHEDULE
    n_passes: int = 50
    activation_position: str = "all"
    master_seed: int = 0
    ece_bins: int = DEFAULT_BIN_COUNT
    corruptions: tuple = ()
    severities: tuple = (1, 2, 3, 4, 5)

    def to_dict(self) -> dict:
        return {
            "method": self.method.to_dict(),
            "architecture": self.architecture,
            "dataset": dict(self.dataset),
            "training": {
                "epochs": self.epochs, "batch_size": self.batch_size,
                "learning_rate": self.learning_rate, "momentum": self.momentum,
                "weight_decay": self.weight_decay,
                "schedule": [list(pair) for pair in self.schedule],
            },
            "n_passes": self.n_passes,
            "activation_position": self.activation_position,
            "master_seed": self.master_seed,
            "ece_bins": self.ece_bins,
            "corruptions": list(self.corruptions),
            "severities": list(self.severities),
        }


_DEFAULT_2D_CORRUPTIONS = ("gaussian_noise", "shot_noise", "pixel_dropout", "rotation")
_DEFAULT_IMG_CORRUPTIONS = datamod.CORRUPTION_KINDS


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    known = {"method", "architecture", "dataset", "training", "n_passes",
             "activation_position", "master_seed", "ece_bins", "corruptions",
             "severities"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    if "method" not in raw:
        raise ConfigError("config is missing the 'method' field")
    method = _method_from_dict(raw["method"])

    arch = raw.get("architecture", "mlp-2x64")
    if arch not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture '{arch}' (expected one of {ARCHITECTURES})")

    dataset = dict(raw.get("dataset", {"name": "two_moons", "train_size": 400,
                                       "test_size": 400, "noise": 0.12}))
    ds_name = dataset.get("name")
    if ds_name not in ("two_moons", "blobs", "idx"):
        raise ConfigError(f"unknown dataset '{ds_name}' (expected two_moons, blobs or idx)")
    if ds_name in ("two_moons", "blobs"):
        for key in ("train_size", "test_size"):
            if int(dataset.get(key, 0)) < 2:
                raise ConfigError(f"dataset.{key} must be at least 2")
    if ds_name == "blobs" and "centers" not in dataset:
        raise ConfigError("blobs dataset needs a 'centers' field")
    if ds_name == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if key not in dataset:
                raise ConfigError(f"idx dataset needs a '{key}' path")

    tr = raw.get("training", {})
    if not isinstance(tr, dict):
        raise ConfigError("'training' must be an object")
    cfg = ExperimentConfig(
        method=method,
        architecture=arch,
        dataset=dataset,
        epochs=int(tr.get("epochs", 100)),
        batch_size=int(tr.get("batch_size", 64)),
        learning_rate=float(tr.get("learning_rate", 0.1)),
        momentum=float(tr.get("momentum", 0.9)),
        weight_decay=float(tr.get("weight_decay", 1e-4)),
        schedule=tuple(tuple(map(float, pair)) for pair in tr.get("schedule", DEFAULT_SCHEDULE)),
        n_passes=int(raw.get("n_passes", 50)),
        activation_position=raw.get("activation_position", "all"),
        master_seed=int(raw.get("master_seed", 0)),
        ece_bins=int(raw.get("ece_bins", DEFAULT_BIN_COUNT)),
        corruptions=tuple(raw.get("corruptions", ())),
        severities=tuple(int(s) for s in raw.get("severities", (1, 2, 3, 4, 5))),
    )
    if not cfg.corruptions:
        is_image = ds_name == "idx"
        cfg.corruptions = _DEFAULT_IMG_CORRUPTIONS if is_image else _DEFAULT_2D_CORRUPTIONS
    for kind in cfg.corruptions:
        if kind not in datamod.CORRUPTION_KINDS:
            raise ConfigError(f"unknown corruption kind '{kind}'")
    for sev in cfg.severities:
        if not 1 <= sev <= 5:
            raise ConfigError(f"severity must lie in 1..5, got {sev}")
    if cfg.epochs < 0:
        raise ConfigError(f"epochs must be non-negative, got {cfg.epochs}")
    if cfg.batch_size < 1:
        raise ConfigError(f"batch_size must be positive, got {cfg.batch_size}")
    if cfg.learning_rate <= 0:
        raise ConfigError(f"learning_rate must be positive, got {cfg.learning_rate}")
    if not 0.0 <= cfg.momentum < 1.0:
        raise ConfigError(f"momentum must lie in [0, 1), got {cfg.momentum}")
    if cfg.weight_decay < 0:
        raise ConfigError(f"weight_decay must be non-negative, got {cfg.weight_decay}")
    if cfg.n_passes < 1:
        raise ConfigError(f"n_passes must be at least 1, got {cfg.n_passes}")
    if cfg.activation_position not in POSITIONS:
        raise ConfigError(
            f"activation_position must be one of {POSITIONS}, got '{cfg.activation_position}'")
    if cfg.master_seed < 0:
        raise ConfigError(f"master_seed must be a non-negative integer")
    if cfg.ece_bins < 1:
        raise ConfigError(f"ece_bins must be at least 1, got {cfg.ece_bins}")
    return cfg


def config_from_json(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_json(fh.read())


def _activation_kind(method: MethodSpec) -> act.ActivationKind:
    if method.name == "mc_droprelu":
        return act.droprelu(method.retain_rate)
    if method.name == "mc_rrelu":
        return act.rrelu(method.low, method.high)
    return act.relu()


def _selected_sites(n_sites: int, position: str):
    if position == "first":
        return {0}
    if position == "last":
        return {n_sites - 1}
    return set(range(n_sites))


def build_architecture(arch: str, input_shape, n_classes: int,
                       method: MethodSpec, position: str = "all"):
    """Realize a preset into a layer list for the given method and position.

    Activation sites sit after every hidden (non-head) weight layer.  The
    position selects which sites carry the stochastic activation (or, for
    mc_dropout, which sites get a dropout layer appended); unselected sites
    stay plain ReLU.
    """
    stochastic_kind = _activation_kind(method)
    drop_rate = method.drop_rate if method.name == "mc_dropout" else 0.0

    if arch in _HIDDEN:
        dims = _HIDDEN[arch]
        n_sites = len(dims)
        selected = _selected_sites(n_sites, position)
        layers = []
        in_dim = int(np.prod(input_shape))
        if len(input_shape) > 1:
            layers.append(netmod.flatten("flatten0"))
        site = 0
        for width in dims:
            layers.append(netmod.dense(in_dim, width, f"dense{site}"))
            kind = stochastic_kind if site in selected else act.relu()
            layers.append(netmod.activation(kind, f"act{site}"))
            if drop_rate > 0.0 and site in selected:
                layers.append(netmod.dropout_layer(drop_rate, f"drop{site}"))
            in_dim = width
            site += 1
        layers.append(netmod.dense(in_dim, n_classes, "head"))
        return layers

    if arch == "cnn-small":
        if len(input_shape) != 3:
            raise ConfigError(f"cnn-small needs (channels, h, w) input, got {input_shape}")
        c, h, w = input_shape
        n_sites = 3
        selected = _selected_sites(n_sites, position)

        def site_kind(site):
            return stochastic_kind if site in selected else act.relu()

        layers = [
            netmod.conv2d(c, 8, 3, stride=1, padding="valid", name="conv0"),
            netmod.activation(site_kind(0), "act0"),
        ]
        if drop_rate > 0.0 and 0 in selected:
            layers.append(netmod.dropout_layer(drop_rate, "drop0"))
        layers += [
            netmod.conv2d(8, 16, 3, stride=2, padding="valid", name="conv1"),
            netmod.activation(site_kind(1), "act1"),
        ]
        if drop_rate > 0.0 and 1 in selected:
            layers.append(netmod.dropout_layer(drop_rate, "drop1"))
        oh = (h - 3) + 1
        ow = (w - 3) + 1
        oh = (oh - 3) // 2 + 1
        ow = (ow - 3) // 2 + 1
        flat = 16 * oh * ow
        layers += [
            netmod.flatten("flatten0"),
            netmod.dense(flat, 64, "dense0"),
            netmod.activation(site_kind(2), "act2"),
        ]
        if drop_rate > 0.0 and 2 in selected:
            layers.append(netmod.dropout_layer(drop_rate, "drop2"))
        layers.append(netmod.dense(64, n_classes, "head"))
        return layers

    raise ConfigError(f"unknown architecture '{arch}'")


def architecture_signature(layers) -> tuple:
    """Hashable identity of a realized layer stack, used for dedup."""
    sig = []
    for layer in layers:
        if isinstance(layer, netmod.Dense):
            sig.append(("dense", layer.in_dim, layer.out_dim))
        elif isinstance(layer, netmod.Conv2d):
            sig.append(("conv2d", layer.in_channels, layer.out_channels,
                        layer.kernel_size, layer.stride, layer.padding))
        elif isinstance(layer, netmod.Flatten):
            sig.append(("flatten",))
        elif isinstance(layer, netmod.Activation):
            k = layer.kind
            sig.append(("act", k.tag, k.retain_rate, k.low, k.high))
        elif isinstance(layer, netmod.Dropout):
            sig.append(("dropout", layer.spec.drop_rate))
    return tuple(sig)


def _derived_seed(stream: RngStream, index: int) -> int:
    return stream.fork(index).stream_id


def _build_datasets(cfg: ExperimentConfig, root: RngStream):
    d = cfg.dataset
    seed_train = _derived_seed(root, _S_DATA_TRAIN)
    seed_test = _derived_seed(root, _S_DATA_TEST)
    if d["name"] == "two_moons":
        noise = float(d.get("noise", 0.12))
        train_ds = datamod.gen_two_moons(int(d["train_size"]), noise, seed_train)
        test_ds = datamod.gen_two_moons(int(d["test_size"]), noise, seed_test)
    elif d["name"] == "blobs":
        sigma = float(d.get("sigma", 0.5))
        centers = d["centers"]
        train_ds = datamod.gen_blobs(int(d["train_size"]), centers, sigma, seed_train)
        test_ds = datamod.gen_blobs(int(d["test_size"]), centers, sigma, seed_test)
    else:
        train_ds = datamod.load_idx(d["train_images"], d["train_labels"],
                                    d.get("n_classes"))
        test_ds = datamod.load_idx(d["test_images"], d["test_labels"],
                                   d.get("n_classes"))
        if "train_size" in d:
            order = RngStream(seed_train).permutation(len(train_ds))
            train_ds = datamod.take(train_ds, order[:int(d["train_size"])])
        if "test_size" in d:
            order = RngStream(seed_test).permutation(len(test_ds))
            test_ds = datamod.take(test_ds, order[:int(d["test_size"])])
    return train_ds, test_ds


class Report:
    """Deterministic body plus wall-clock timing kept outside the contract."""

    def __init__(self, body: dict, timing: dict | None = None):
        self.body = body
        self.timing = timing or {}

    @property
    def status(self) -> str:
        return self.body.get("status", "ok")

    def full_dict(self) -> dict:
        merged = dict(self.body)
        merged["timing"] = dict(self.timing)
        return merged

    def body_text(self) -> str:
        return serialize.dumps(self.body)

    def full_text(self) -> str:
        return serialize.dumps(self.full_dict())

    def csv_text(self) -> str:
        rows = []
        _flatten_into(self.full_dict(), "", rows)
        return serialize.rows_to_csv(("field", "value"), rows)


def _flatten_into(obj, prefix: str, rows: list):
    if isinstance(obj, dict):
        if not obj:
            rows.append((prefix, "{}"))
            return
        for k, v in obj.items():
            _flatten_into(v, f"{prefix}.{k}" if prefix else str(k), rows)
    elif isinstance(obj, (list, tuple)):
        if not obj:
            rows.append((prefix, "[]"))
            return
        for i, v in enumerate(obj):
            _flatten_into(v, f"{prefix}[{i}]", rows)
    elif obj is None:
        rows.append((prefix, "null"))  # explicit marker, not omitted
    else:
        rows.append((prefix, obj))


def emit_report(report: Report, fmt: str, path) -> None:
    if fmt == "json":
        serialize.write_text(path, report.full_text())
    elif fmt == "csv":
        serialize.write_text(path, report.csv_text())
    else:
        raise ConfigError(f"unknown report format '{fmt}' (expected json or csv)")


def inference_stream(setup: ExperimentSetup, set_index: int = 0) -> RngStream:
    """Forked stream for eval-set `set_index` (0 = clean test split)."""
    return setup.root.fork(_S_INFER).fork(set_index)


def predict_with_method(cfg: ExperimentConfig, nets, features, infer_rng: RngStream):
    if cfg.method.name == "deep_ensemble":
        return ensemble_predict(nets, features)
    if cfg.method.name == "single":
        return single_predict(nets[0], features)
    return mc_predict(nets[0], features, cfg.n_passes, infer_rng)


def _eval_metrics(cfg: ExperimentConfig, ps, labels) -> dict:
    summary = aggregate(ps)
    acc = accuracy(summary.labels, labels)
    ece_val, _ = ece(summary.confidence, summary.labels == labels, cfg.ece_bins)
    return {
        "accuracy": acc,
        "ece": ece_val,
        "mean_entropy": float(summary.entropy.mean()),
        "mean_variance": float(summary.mean_class_variance.mean()),
    }


def diversity_members(cfg: ExperimentConfig, ps) -> np.ndarray | None:
    if cfg.method.name == "single":
        return None
    if cfg.method.name == "deep_ensemble":
        return ps.probs if ps.n_passes >= 2 else None
    count = min(DIVERSITY_MEMBERS, ps.n_passes)
    return ps.probs[:count] if count >= 2 else None


@dataclass
class ExperimentSetup:
    """Deterministic pre-training state shared by train/predict/metrics."""

    root: RngStream
    train_ds: datamod.Dataset
    test_ds: datamod.Dataset
    train_norm: datamod.Dataset
    test_norm: datamod.Dataset
    stats: datamod.NormStats
    layers: list

    @property
    def input_shape(self):
        return self.train_ds.feature_shape


@dataclass
class TrainedModels:
    nets: list
    curves: list
    status: str
    diverged_epoch: int | None
    seconds: float


def prepare_experiment(cfg: ExperimentConfig) -> ExperimentSetup:
    root = RngStream(cfg.master_seed)
    train_ds, test_ds = _build_datasets(cfg, root)
    layers = build_architecture(cfg.architecture, train_ds.feature_shape,
                                train_ds.n_classes, cfg.method,
                                cfg.activation_position)
    train_norm, stats = datamod.normalize(train_ds)
    test_norm, _ = datamod.normalize(test_ds, stats)
    return ExperimentSetup(root, train_ds, test_ds, train_norm, test_norm,
                           stats, layers)


def train_models(cfg: ExperimentConfig, setup: ExperimentSetup | None = None) -> TrainedModels:
    """Train the model (or every ensemble member) from per-member streams."""
    if setup is None:
        setup = prepare_experiment(cfg)
    members = cfg.method.members if cfg.method.name == "deep_ensemble" else 1
    init_root = setup.root.fork(_S_INIT)
    train_root = setup.root.fork(_S_TRAIN)
    nets, curves = [], []
    status, diverged_epoch = "ok", None
    t0 = time.perf_counter()
    for m in range(members):
        net = netmod.build_network(setup.layers, setup.input_shape, init_root.fork(m))
        opt = OptimizerState(cfg.learning_rate, cfg.momentum, cfg.weight_decay,
                             cfg.schedule)
        try:
            res = train(net, setup.train_norm.features, setup.train_norm.labels,
                        opt, cfg.epochs, min(cfg.batch_size, len(setup.train_norm)),
                        train_root.fork(m))
        except TrainingDivergence as exc:
            status, diverged_epoch = "diverged", exc.epoch
            break
        nets.append(net)
        curves.append(res)
    return TrainedModels(nets, curves, status, diverged_epoch,
                         time.perf_counter() - t0)


def corrupted_eval_sets(cfg: ExperimentConfig, setup: ExperimentSetup):
    """(kind, severity, normalized dataset) triples for the configured grid.

    Corruption happens on the raw test split, then the train-split
    normalization stats are reused, mirroring shift-evaluation practice.
    """
    corrupt_root = setup.root.fork(_S_CORRUPT)
    sets = []
    idx = 0
    for kind in cfg.corruptions:
        for sev in cfg.severities:
            cds = datamod.corrupt(setup.test_ds, kind, int(sev),
                                  _derived_seed(corrupt_root, idx))
            cnorm, _ = datamod.normalize(cds, setup.stats)
            sets.append((kind, int(sev), cnorm))
            idx += 1
    return sets


def run_experiment(cfg: ExperimentConfig) -> Report:
    """Train, infer on clean and corrupted test splits, compute all metrics.

    Training divergence is recorded in the report (status "diverged") rather
    than raised, so callers can still persist the config echo and exit
    nonzero.
    """
    setup = prepare_experiment(cfg)
    trained = train_models(cfg, setup)
    nets, curves = trained.nets, trained.curves
    status = trained.status
    members = cfg.method.members if cfg.method.name == "deep_ensemble" else 1
    train_seconds = trained.seconds

    body = {
        "schema": "rra-uq/report/v1",
        "kind": "experiment",
        "status": status,
        "method": cfg.method.label(),
        "config": cfg.to_dict(),
        "seed": cfg.master_seed,
        "normalization": "train-stats-reused",
    }
    if status != "ok":
        body["diverged_epoch"] = trained.diverged_epoch
        body["evaluation"] = None
        body["sweeps"] = None
        body["diversity"] = None
        body["parameter_count"] = None
        body["size_multiplier"] = None
        return Report(body, {"train_seconds": train_seconds, "inference_seconds": 0.0})

    single_count = netmod.build_network(setup.layers, setup.input_shape,
                                        None).parameter_count()
    body["parameter_count"] = single_count * members
    body["size_multiplier"] = members

    body["training"] = {
        "epochs": cfg.epochs,
        "members": [
            {"final_loss": (c.loss_curve[-1] if c.loss_curve else None),
             "loss_curve": c.loss_curve, "lr_curve": c.lr_curve}
            for c in curves
        ],
    }

    eval_sets = [("clean", 0, setup.test_norm)]
    eval_sets += corrupted_eval_sets(cfg, setup)

    infer_root = setup.root.fork(_S_INFER)
    t1 = time.perf_counter()
    clean_ps = None
    corrupted_rows = []
    acc_by_sev: dict = {}
    ece_by_sev: dict = {}
    ent_by_sev: dict = {}
    clean_metrics = None
    for set_index, (kind, sev, ds) in enumerate(eval_sets):
        ps = predict_with_method(cfg, nets, ds.features, infer_root.fork(set_index))
        m = _eval_metrics(cfg, ps, ds.labels)
        if kind == "clean":
            clean_ps = ps
            clean_metrics = m
        else:
            corrupted_rows.append({"kind": kind, "severity": sev, **m})
        acc_by_sev.setdefault(sev, []).append(m["accuracy"])
        ece_by_sev.setdefault(sev, []).append(m["ece"])
        ent_by_sev.setdefault(sev, []).append(m["mean_entropy"])
    inference_seconds = time.perf_counter() - t1

    body["evaluation"] = {"clean": clean_metrics, "corrupted": corrupted_rows}
    body["sweeps"] = {
        "accuracy": shift_sweep(acc_by_sev),
        "ece": shift_sweep(ece_by_sev),
        "mean_entropy": shift_sweep(ent_by_sev),
    }

    member_probs = diversity_members(cfg, clean_ps)
    if member_probs is None:
        body["diversity"] = None
    else:
        rep = diversity_matrix(member_probs)
        body["diversity"] = {
            "members": rep.member_count,
            "protocol": ("ensemble members" if cfg.method.name == "deep_ensemble"
                         else f"first {rep.member_count} passes"),
            "mean_jsd": rep.mean_jsd, "max_jsd": rep.max_jsd,
            "mean_disagreement": rep.mean_dis, "max_disagreement": rep.max_dis,
        }

    timing = {"train_seconds": train_seconds, "inference_seconds": inference_seconds}
    return Report(body, timing)


def _thread_count(threads: int | None) -> int:
    if threads is not None and threads >= 1:
        return threads
    import os
    env = os.environ.get("RRA_UQ_THREADS", "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"RRA_UQ_THREADS is not an integer: '{env}'") from exc
    return 1


def run_suite(configs, threads: int | None = None) -> Report:
    """Run several methods on one dataset and tabulate the comparison.

    All configs must share a dataset spec; the size multiplier column is
    relative to the single-model parameter count of each row's architecture.
    Entries may run in thread parallel; row order follows config order either
    way, so the table body is identical across thread counts.
    """
    configs = list(configs)
    if not configs:
        raise ConfigError("suite needs at least one experiment config")
    datasets = {json.dumps(c.dataset, sort_keys=True) for c in configs}
    if len(datasets) != 1:
        raise ContractError("suite configs mix different datasets")

    workers = _thread_count(threads)
    if workers == 1:
        reports = [run_experiment(c) for c in configs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run_experiment, configs))

    rows, row_times = [], []
    for cfg, rep in zip(configs, reports):
        ok = rep.status == "ok"
        rows.append({
            "method": cfg.method.label(),
            "status": rep.status,
            "accuracy": rep.body["evaluation"]["clean"]["accuracy"] if ok else None,
            "ece": rep.body["evaluation"]["clean"]["ece"] if ok else None,
            "size_multiplier": rep.body["size_multiplier"],
            "parameter_count": rep.body["parameter_count"],
            "seed": cfg.master_seed,
        })
        row_times.append(rep.timing.get("train_seconds", 0.0))
    body = {
        "schema": "rra-uq/suite/v1",
        "kind": "suite",
        "dataset": dict(configs[0].dataset),
        "rows": rows,
    }
    return Report(body, {"train_seconds_per_row": row_times})


def position_analysis(base: ExperimentConfig, positions) -> Report:
    """One experiment per activation position, deduplicating identical stacks.

    Requires a stochastic-activation method.  When two positions realize the
    same architecture (a one-site network), the duplicate row points at the
    original instead of re-running.
    """
    if base.method.name not in ("mc_droprelu", "mc_rrelu"):
        raise ConfigError(
            f"position analysis needs mc_droprelu or mc_rrelu, got '{base.method.name}'")
    positions = list(positions)
    if not positions:
        raise ConfigError("need at least one position")
    for pos in positions:
        if pos not in POSITIONS:
            raise ConfigError(f"unknown position '{pos}'")

    root = RngStream(base.master_seed)
    probe_train, _ = _build_datasets(base, root)
    seen: dict = {}
    rows, row_times = [], []
    for pos in positions:
        layers = build_architecture(base.architecture, probe_train.feature_shape,
                                    probe_train.n_classes, base.method, pos)
        sig = architecture_signature(layers)
        if sig in seen:
            first = seen[sig]
            rows.append({"position": pos, "duplicate_of": first["position"],
                         "accuracy": first["accuracy"], "ece": first["ece"]})
            row_times.append(0.0)
            continue
        cfg = ExperimentConfig(**{**base.__dict__, "activation_position": pos})
        rep = run_experiment(cfg)
        clean = rep.body["evaluation"]["clean"]
        row = {"position": pos, "duplicate_of": None,
               "accuracy": clean["accuracy"], "ece": clean["ece"]}
        seen[sig] = row
        rows.append(row)
        row_times.append(rep.timing.get("train_seconds", 0.0))
    body = {
        "schema": "rra-uq/position/v1",
        "kind": "position",
        "method": base.method.label(),
        "architecture": base.architecture,
        "rows": rows,
    }
    return Report(body, {"train_seconds_per_row": row_times})


def q_sweep(base: ExperimentConfig, q_values) -> Report:
    """Accuracy-vs-ECE rows over a grid of DropReLU retention rates."""
    q_values = [float(q) for q in q_values]
    if len(q_values) < 2:
        raise ConfigError(f"q sweep needs at least 2 values, got {len(q_values)}")
    for q in q_values:
        if not 0.0 <= q <= 1.0:
            raise ConfigError(f"retention rate {q} outside [0, 1]")
    if base.method.name != "mc_droprelu":
        raise ConfigError(f"q sweep needs an mc_droprelu config, got '{base.method.name}'")

    rows, row_times = [], []
    for q in q_values:
        cfg = ExperimentConfig(**{**base.__dict__,
                                  "method": MethodSpec("mc_droprelu", retain_rate=q)})
        rep = run_experiment(cfg)
        clean = rep.body["evaluation"]["clean"]
        rows.append({"q": q, "accuracy": clean["accuracy"], "ece": clean["ece"]})
        row_times.append(rep.timing.get("train_seconds", 0.0))
    body = {
        "schema": "rra-uq/qsweep/v1",
        "kind": "q_sweep",
        "architecture": base.architecture,
        "rows": rows,
    }
    return Report(body, {"train_seconds_per_row": row_times})
