"""Layered feed-forward networks with reverse-mode gradients.

A network is an ordered list of layer specs plus a parameter store keyed by
layer name.  ``forward`` returns the logits together with a trace that holds
every per-layer cache and every sampled mask, so the exact stochastic pass can
be replayed bit-for-bit -- backprop, finite-difference checks, and the mask
replay tests all rely on that.  Stochastic activations sample fresh masks in
both train and eval mode; plain dropout samples only in train mode unless the
Monte-Carlo engine switches eval sampling on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import activations as act
from .errors import ContractError, DimensionError, ParameterError
from .rng import RngStream


@dataclass(frozen=True)
class LayerSpec:
    name: str


@dataclass(frozen=True)
class Dense(LayerSpec):
    in_dim: int = 0
    out_dim: int = 0


@dataclass(frozen=True)
class Conv2d(LayerSpec):
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    padding: str = "valid"  # "valid" | "same"


@dataclass(frozen=True)
class Flatten(LayerSpec):
    pass


@dataclass(frozen=True)
class Activation(LayerSpec):
    kind: act.ActivationKind = act.relu()


@dataclass(frozen=True)
class Dropout(LayerSpec):
    spec: act.DropoutSpec = act.DropoutSpec(0.0)


def dense(in_dim: int, out_dim: int, name: str = "") -> Dense:
    if in_dim < 1 or out_dim < 1:
        raise ParameterError(f"dense dims must be positive, got {in_dim}x{out_dim}")
    return Dense(name, in_dim, out_dim)


def conv2d(in_channels: int, out_channels: int, kernel_size: int,
           stride: int = 1, padding: str = "valid", name: str = "") -> Conv2d:
    if min(in_channels, out_channels, kernel_size) < 1 or stride < 1:
        raise ParameterError("conv2d channels, kernel size and stride must be positive")
    if padding not in ("valid", "same"):
        raise ParameterError(f"conv2d padding must be 'valid' or 'same', got '{padding}'")
    return Conv2d(name, in_channels, out_channels, kernel_size, stride, padding)


def flatten(name: str = "") -> Flatten:
    return Flatten(name)


def activation(kind: act.ActivationKind, name: str = "") -> Activation:
    return Activation(name, kind)


def dropout_layer(drop_rate: float, name: str = "") -> Dropout:
    return Dropout(name, act.DropoutSpec(drop_rate))


class NetworkGraph:
    """Ordered layer specs plus parameters ({layer name -> {"w","b"}})."""

    def __init__(self, layers, input_shape, params):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.params = params

    def parameter_count(self) -> int:
        return sum(int(t.size) for entry in self.params.values() for t in entry.values())

    def stochastic_layer_names(self) -> list:
        names = []
        for layer in self.layers:
            if isinstance(layer, Activation) and layer.kind.is_stochastic():
                names.append(layer.name)
            elif isinstance(layer, Dropout) and layer.spec.drop_rate > 0.0:
                names.append(layer.name)
        return names

    def output_shape(self):
        return _infer_shapes(self.layers, self.input_shape)[-1]


def _conv_out_hw(h: int, w: int, k: int, stride: int, padding: str, name: str):
    if padding == "same":
        oh = -(-h // stride)
        ow = -(-w // stride)
        pad_h = max((oh - 1) * stride + k - h, 0)
        pad_w = max((ow - 1) * stride + k - w, 0)
        return oh, ow, pad_h // 2, pad_h - pad_h // 2, pad_w // 2, pad_w - pad_w // 2
    if h < k or w < k:
        raise DimensionError(f"layer '{name}': {h}x{w} input smaller than {k}x{k} kernel")
    return (h - k) // stride + 1, (w - k) // stride + 1, 0, 0, 0, 0


def _infer_shapes(layers, input_shape):
    """Per-layer output shapes (batch dim excluded); raises DimensionError on breaks."""
    shape = tuple(input_shape)
    shapes = []
    for layer in layers:
        if isinstance(layer, Dense):
            if len(shape) != 1 or shape[0] != layer.in_dim:
                raise DimensionError(
                    f"layer '{layer.name}': expected ({layer.in_dim},) input, got {shape}")
            shape = (layer.out_dim,)
        elif isinstance(layer, Conv2d):
            if len(shape) != 3 or shape[0] != layer.in_channels:
                raise DimensionError(
                    f"layer '{layer.name}': expected ({layer.in_channels}, h, w) input, got {shape}")
            oh, ow, *_ = _conv_out_hw(shape[1], shape[2], layer.kernel_size,
                                      layer.stride, layer.padding, layer.name)
            shape = (layer.out_channels, oh, ow)
        elif isinstance(layer, Flatten):
            shape = (int(np.prod(shape)),)
        elif isinstance(layer, (Activation, Dropout)):
            pass
        else:
            raise ParameterError(f"unknown layer spec {layer!r}")
        shapes.append(shape)
    return shapes


def build_network(layers, input_shape, rng: RngStream | None = None) -> NetworkGraph:
    """Validate layer wiring, assign names, and initialize parameters.

    Weights use Kaiming-uniform fan-in scaling (the standard choice for
    ReLU-family activations), biases start at zero.  With rng=None all
    parameters start at zero, which some tests rely on.
    """
    named = []
    seen = set()
    for i, layer in enumerate(layers):
        name = layer.name or f"{type(layer).__name__.lower()}{i}"
        if name in seen:
            raise ParameterError(f"duplicate layer name '{name}'")
        seen.add(name)
        named.append(replace(layer, name=name))

    _infer_shapes(named, input_shape)  # validates wiring

    params = {}
    for i, layer in enumerate(named):
        if isinstance(layer, Dense):
            fan_in = layer.in_dim
            shape_w, shape_b = (layer.in_dim, layer.out_dim), (layer.out_dim,)
        elif isinstance(layer, Conv2d):
            fan_in = layer.in_channels * layer.kernel_size ** 2
            shape_w = (layer.out_channels, layer.in_channels, layer.kernel_size, layer.kernel_size)
            shape_b = (layer.out_channels,)
        else:
            continue
        if rng is None:
            w = np.zeros(shape_w)
        else:
            bound = math.sqrt(6.0 / fan_in)
            w = rng.fork(i).uniform(-bound, bound, shape_w)
        params[layer.name] = {"w": w, "b": np.zeros(shape_b)}
    return NetworkGraph(named, input_shape, params)


@dataclass
class LayerTrace:
    name: str
    x_in: np.ndarray
    mask: np.ndarray | None = None   # activation slopes or dropout multiplier
    cache: tuple | None = None       # conv im2col state


@dataclass
class Trace:
    net: NetworkGraph
    entries: list
    logits_shape: tuple
    mode: str

    @property
    def masks(self) -> dict:
        """Stochastic realizations by layer name; feed back to forward() to replay."""
        return {e.name: e.mask for e in self.entries if e.mask is not None}


def forward(net: NetworkGraph, x: np.ndarray, mode: str = "train",
            rng: RngStream | None = None, masks: dict | None = None,
            deterministic: bool = False, sample_dropout: bool | None = None):
    """Run the network, returning (logits, trace).

    mode: "train" or "eval".  Stochastic activations sample fresh masks in
    both; plain dropout samples in train mode only, unless `sample_dropout`
    forces it (Monte-Carlo eval) or `deterministic` disables all sampling
    (single-pass baseline: dropout is identity, DropReLU acts as pure ReLU,
    RReLU uses its midpoint slope).  `masks` replays recorded realizations
    instead of sampling.
    """
    if mode not in ("train", "eval"):
        raise ParameterError(f"forward mode must be 'train' or 'eval', got '{mode}'")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != net.input_shape:
        raise DimensionError(
            f"input shape {x.shape[1:]} does not match network input {net.input_shape}")
    do_dropout = (mode == "train") if sample_dropout is None else sample_dropout
    if deterministic:
        do_dropout = False

    entries = []
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Dense):
            if x.ndim != 2 or x.shape[1] != layer.in_dim:
                raise DimensionError(f"layer '{layer.name}': got input shape {x.shape}")
            w, b = net.params[layer.name]["w"], net.params[layer.name]["b"]
            entries.append(LayerTrace(layer.name, x))
            x = x @ w + b
        elif isinstance(layer, Conv2d):
            y, cache = _conv_forward(x, net.params[layer.name]["w"],
                                     net.params[layer.name]["b"], layer)
            entries.append(LayerTrace(layer.name, x, cache=cache))
            x = y
        elif isinstance(layer, Flatten):
            entries.append(LayerTrace(layer.name, x))
            x = x.reshape(x.shape[0], -1)
        elif isinstance(layer, Activation):
            if masks is not None and layer.name in masks:
                mask = act.SampledMask(masks[layer.name])
            elif deterministic or not layer.kind.is_stochastic():
                mask = act.deterministic_mask(layer.kind, x.shape)
            else:
                mask = act.sample_mask(layer.kind, x.shape, rng.fork(i) if rng else None)
            entries.append(LayerTrace(layer.name, x, mask=mask.slopes))
            x = act.activate(x, mask)
        elif isinstance(layer, Dropout):
            if masks is not None and layer.name in masks:
                mult = masks[layer.name]
                if mult.shape != x.shape:
                    raise DimensionError(
                        f"layer '{layer.name}': replay mask {mult.shape} vs input {x.shape}")
                y = x * mult
            elif do_dropout and layer.spec.drop_rate > 0.0:
                y, mult = act.dropout_forward(x, layer.spec, "train",
                                              rng.fork(i) if rng else None)
            else:
                y, mult = x, np.ones_like(x)
            entries.append(LayerTrace(layer.name, x, mask=mult))
            x = y
        else:
            raise ParameterError(f"unknown layer spec {layer!r}")
    return x, Trace(net, entries, x.shape, mode)


def backward(net: NetworkGraph, trace: Trace, grad_logits: np.ndarray) -> dict:
    """Gradients w.r.t. every parameter, flowing through the recorded masks."""
    if trace.net is not net:
        raise ContractError("trace was produced by a different network")
    if len(trace.entries) != len(net.layers):
        raise ContractError("trace does not cover this network's layers")
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    if grad_logits.shape != trace.logits_shape:
        raise ContractError(
            f"grad_logits shape {grad_logits.shape} does not match logits {trace.logits_shape}")

    grads = {}
    g = grad_logits
    for layer, entry in zip(reversed(net.layers), reversed(trace.entries)):
        if isinstance(layer, Dense):
            w = net.params[layer.name]["w"]
            grads[layer.name] = {"w": entry.x_in.T @ g, "b": g.sum(axis=0)}
            g = g @ w.T
        elif isinstance(layer, Conv2d):
            g, dw, db = _conv_backward(g, net.params[layer.name]["w"], layer, entry.cache)
            grads[layer.name] = {"w": dw, "b": db}
        elif isinstance(layer, Flatten):
            g = g.reshape(entry.x_in.shape)
        elif isinstance(layer, Activation):
            g = act.activate_backward(entry.x_in, act.SampledMask(entry.mask), g)
        elif isinstance(layer, Dropout):
            g = g * entry.mask
    return grads


def _conv_forward(x, w, b, layer: Conv2d):
    if x.ndim != 4 or x.shape[1] != layer.in_channels:
        raise DimensionError(f"layer '{layer.name}': got input shape {x.shape}")
    n, c, h, w_in = x.shape
    k, stride = layer.kernel_size, layer.stride
    oh, ow, pt, pb, pl, pr = _conv_out_hw(h, w_in, k, stride, layer.padding, layer.name)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if pt + pb + pl + pr else x
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    windows = windows[:, :, :oh, :ow]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, c * k * k)
    ymat = cols @ w.reshape(layer.out_channels, -1).T + b
    y = ymat.reshape(n, oh, ow, layer.out_channels).transpose(0, 3, 1, 2)
    return y, (cols, x.shape, xp.shape, (pt, pl), (oh, ow))


def _conv_backward(g, w, layer: Conv2d, cache):
    cols, x_shape, xp_shape, (pt, pl), (oh, ow) = cache
    n, c, h, w_in = x_shape
    k, stride = layer.kernel_size, layer.stride
    gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, layer.out_channels)
    dw = (gmat.T @ cols).reshape(w.shape)
    db = gmat.sum(axis=0)
    dwin = (gmat @ w.reshape(layer.out_channels, -1)).reshape(n, oh, ow, c, k, k)
    dwin = dwin.transpose(0, 3, 1, 2, 4, 5)
    dxp = np.zeros(xp_shape)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += dwin[:, :, :, :, ki, kj]
    return dxp[:, :, pt:pt + h, pl:pl + w_in], dw, db


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax via the log-sum-exp-stable path."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. the logits.

    Returns (loss, grad) with grad already divided by the batch size.
    """
    labels = np.asarray(labels)
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ContractError(f"labels shape {labels.shape} does not match batch {n}")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(n), labels]))
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def grad_check(net: NetworkGraph, x: np.ndarray, labels: np.ndarray,
               rng: RngStream, n_samples: int = 10, step: float = 1e-5) -> dict:
    """Compare analytic gradients against central finite differences.

    Masks are sampled once and replayed across all perturbed evaluations.
    Returns {"max_rel_error": float, "per_param": {(layer, key): err}}.
    """
    logits, trace = forward(net, x, mode="train", rng=rng.fork(0))
    frozen = trace.masks
    _, grad_logits = softmax_cross_entropy(logits, labels)
    analytic = backward(net, trace, grad_logits)

    def loss_at():
        lg, _ = forward(net, x, mode="train", masks=frozen)
        return softmax_cross_entropy(lg, labels)[0]

    pick = rng.fork(1)
    per_param = {}
    worst = 0.0
    for lname, entry in net.params.items():
        for key, tensor in entry.items():
            size = tensor.size
            count = min(n_samples, size)
            idx = np.unique((pick.uniform(0, size, (count,))).astype(np.int64))
            flat = tensor.reshape(-1)
            err = 0.0
            for j in idx:
                orig = flat[j]
                flat[j] = orig + step
                up = loss_at()
                flat[j] = orig - step
                down = loss_at()
                flat[j] = orig
                numeric = (up - down) / (2.0 * step)
                a = float(analytic[lname][key].reshape(-1)[j])
                err = max(err, abs(a - numeric) / max(1e-8, abs(a) + abs(numeric)))
            per_param[(lname, key)] = err
            worst = max(worst, err)
    return {"max_rel_error": worst, "per_param": per_param}
