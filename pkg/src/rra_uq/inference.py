"""Monte-Carlo and ensemble prediction.

A PredictiveSet is the (n_passes, n_samples, n_classes) stack of per-pass
softmax outputs; every uncertainty statistic is a deterministic function of
it.  Stochastic passes run the network in eval mode with mask sampling left
on (dropout included), each pass on its own forked stream, so pass i of a
50-pass run equals pass i of a 10-pass run on the same stream.
"""

from __future__ import annotations

import math
import struct
import warnings

import numpy as np

from .errors import ContractError, DataFormatError, ParameterError
from .network import NetworkGraph, forward, softmax
from .rng import RngStream

PS_MAGIC = b"RRAUQPRD"
PS_VERSION = 1


class PredictiveSet:
    """Stacked per-pass class probabilities plus the stream ids that made them."""

    def __init__(self, probs: np.ndarray, pass_seeds=None):
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 3:
            raise ContractError(f"predictive set must be 3-d, got shape {probs.shape}")
        if probs.shape[0] < 1:
            raise ContractError("predictive set needs at least one pass")
        if np.any(probs < 0.0):
            raise ContractError("predictive set contains negative probabilities")
        sums = probs.sum(axis=2)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            worst = float(np.abs(sums - 1.0).max())
            raise ContractError(f"probability rows deviate from 1 by up to {worst:.3g}")
        self.probs = probs
        self.pass_seeds = list(pass_seeds) if pass_seeds is not None else list(range(probs.shape[0]))

    @property
    def n_passes(self) -> int:
        return self.probs.shape[0]


class PredictionSummary:
    """Aggregated statistics over the passes of a PredictiveSet."""

    def __init__(self, mean_probs, labels, entropy, mean_class_variance, mean_pass_entropy):
        self.mean_probs = mean_probs
        self.labels = labels
        self.entropy = entropy
        self.mean_class_variance = mean_class_variance
        self.mean_pass_entropy = mean_pass_entropy

    @property
    def confidence(self) -> np.ndarray:
        return self.mean_probs.max(axis=1)


def entropy_nats(probs: np.ndarray) -> np.ndarray:
    """Row-wise Shannon entropy in nats with the 0*log(0) := 0 convention."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0.0, probs * np.log(probs), 0.0)
    return -terms.sum(axis=-1)


def mc_predict(net: NetworkGraph, x: np.ndarray, n_passes: int,
               rng: RngStream) -> PredictiveSet:
    """Run `n_passes` stochastic forward passes and stack the softmax outputs."""
    if n_passes < 1:
        raise ParameterError(f"n_passes must be at least 1, got {n_passes}")
    if not net.stochastic_layer_names():
        warnings.warn("network has no stochastic layers; all passes will be identical",
                      stacklevel=2)
    probs = np.empty((n_passes, x.shape[0], net.output_shape()[0]))
    streams = []
    for i in range(n_passes):
        pass_rng = rng.fork(i)
        streams.append(pass_rng.stream_id)
        logits, _ = forward(net, x, mode="eval", rng=pass_rng, sample_dropout=True)
        probs[i] = softmax(logits)
    return PredictiveSet(probs, streams)


def single_predict(net: NetworkGraph, x: np.ndarray) -> PredictiveSet:
    """One deterministic pass: no dropout, stochastic slopes at their fixed points."""
    logits, _ = forward(net, x, mode="eval", deterministic=True)
    return PredictiveSet(softmax(logits)[None, :, :], [0])


def ensemble_predict(nets, x: np.ndarray) -> PredictiveSet:
    """Pool deterministic passes of independently trained members."""
    nets = list(nets)
    if len(nets) < 1:
        raise ParameterError("an ensemble needs at least 1 member")
    heads = {net.output_shape() for net in nets}
    if len(heads) != 1:
        raise ContractError(f"ensemble members disagree on output shape: {sorted(heads)}")
    stacked = [single_predict(net, x).probs[0] for net in nets]
    return PredictiveSet(np.stack(stacked), list(range(len(nets))))


def aggregate(ps: PredictiveSet) -> PredictionSummary:
    """Mean probabilities, argmax labels, predictive entropy, and spread stats.

    mean_class_variance is the per-class variance across passes averaged over
    classes (population variance); mean_pass_entropy averages each pass's own
    entropy, so (entropy - mean_pass_entropy) isolates between-pass spread.
    Reductions run over a sorted view of the pass axis, which makes every
    statistic bit-identical under pass reordering, not just equal in value.
    """
    canon = np.sort(ps.probs, axis=0)
    mean = canon.mean(axis=0)
    labels = mean.argmax(axis=1).astype(np.int64)
    max_ent = math.log(ps.probs.shape[2])
    ent = np.clip(entropy_nats(mean), 0.0, max_ent)
    var = canon.var(axis=0).mean(axis=1)
    pass_ent = np.sort(entropy_nats(ps.probs), axis=0).mean(axis=0)
    pass_ent = np.clip(pass_ent, 0.0, max_ent)
    return PredictionSummary(mean, labels, ent, var, pass_ent)


def save_predictive_set(ps: PredictiveSet, path) -> None:
    n_passes, n, c = ps.probs.shape
    with open(path, "wb") as fh:
        fh.write(PS_MAGIC)
        fh.write(struct.pack("<QQQQ", PS_VERSION, n_passes, n, c))
        fh.write(np.ascontiguousarray(ps.probs, dtype="<f8").tobytes())


def load_predictive_set(path) -> PredictiveSet:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < len(PS_MAGIC) + 32:
        raise DataFormatError("predictive set file too short for its header")
    if buf[:len(PS_MAGIC)] != PS_MAGIC:
        raise DataFormatError(f"bad predictive set magic {buf[:len(PS_MAGIC)]!r}")
    version, n_passes, n, c = struct.unpack_from("<QQQQ", buf, len(PS_MAGIC))
    if version != PS_VERSION:
        raise DataFormatError(f"unsupported predictive set version {version}")
    start = len(PS_MAGIC) + 32
    expected = n_passes * n * c * 8
    if len(buf) - start != expected:
        raise DataFormatError(
            f"payload is {len(buf) - start} bytes, expected {expected}")
    probs = np.frombuffer(buf, dtype="<f8", offset=start).reshape(n_passes, n, c).copy()
    return PredictiveSet(probs)


def predictive_set_to_csv(ps: PredictiveSet) -> str:
    from .serialize import rows_to_csv
    n_passes, n, c = ps.probs.shape
    rows = [(p, s, k, float(ps.probs[p, s, k]))
            for p in range(n_passes) for s in range(n) for k in range(c)]
    return rows_to_csv(("pass", "sample", "class", "prob"), rows)
