"""Minimal CNN engine: explicit forward/backward over a layer chain.

Supported layers: Conv3x3 (padding 1, stride 1), Dense, ReLU, MaxPool2,
GlobalAvgPool, BatchNorm. Activations are NCHW numpy arrays; parameters
live in a flat dict keyed by (layer_index, name). Batch-norm running
statistics are stored alongside the trainable parameters but carry the
"local_statistic" tag, which the federation layer uses to decide what is
allowed on the wire.
"""

from dataclasses import dataclass

import numpy as np

from . import backend, bnorm

CONV3X3 = "Conv3x3"
DENSE = "Dense"
RELU = "ReLU"
MAXPOOL2 = "MaxPool2"
GLOBAL_AVG_POOL = "GlobalAvgPool"
BATCH_NORM = "BatchNorm"

SHARED = "shared"
LOCAL_STATISTIC = "local_statistic"


class ModelSpecError(ValueError):
    """Raised when a layer chain is inconsistent."""


class NumericalError(FloatingPointError):
    """Raised when a forward or backward pass produces NaN/Inf."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple
    with_bn: bool
    in_channels: int = 3
    image_size: int = 32

    def validate(self):
        c = self.in_channels
        spatial = True  # still in NCHW territory (before GlobalAvgPool)
        n_bn = 0
        for i, layer in enumerate(self.layers):
            if layer.kind == CONV3X3:
                if not spatial:
                    raise ModelSpecError(f"layer {i}: Conv3x3 after flattening")
                if layer.in_channels != c:
                    raise ModelSpecError(
                        f"layer {i}: Conv3x3 expects {layer.in_channels} input "
                        f"channels but the chain provides {c}"
                    )
                c = layer.out_channels
            elif layer.kind == BATCH_NORM:
                if not spatial:
                    raise ModelSpecError(f"layer {i}: BatchNorm after flattening")
                if layer.in_channels != c:
                    raise ModelSpecError(
                        f"layer {i}: BatchNorm over {layer.in_channels} channels "
                        f"but the chain provides {c}"
                    )
                n_bn += 1
            elif layer.kind == DENSE:
                if layer.in_channels != c:
                    raise ModelSpecError(
                        f"layer {i}: Dense expects {layer.in_channels} features "
                        f"but the chain provides {c}"
                    )
                c = layer.out_channels
                spatial = False
            elif layer.kind == GLOBAL_AVG_POOL:
                if not spatial:
                    raise ModelSpecError(f"layer {i}: GlobalAvgPool after flattening")
                spatial = False
            elif layer.kind not in (RELU, MAXPOOL2):
                raise ModelSpecError(f"layer {i}: unknown kind {layer.kind!r}")
        if self.with_bn:
            for i, layer in enumerate(self.layers):
                if layer.kind == CONV3X3 and (
                    i + 1 >= len(self.layers) or self.layers[i + 1].kind != BATCH_NORM
                ):
                    raise ModelSpecError(
                        f"layer {i}: with_bn model lacks BatchNorm after Conv3x3"
                    )
        elif n_bn:
            raise ModelSpecError("with_bn=False model contains BatchNorm layers")
        if c != 2:
            raise ModelSpecError(f"final layer produces {c} outputs, expected 2 logits")


def dcnn_spec(with_bn, conv_channels=(16, 32, 64), in_channels=3, image_size=32,
              bn_momentum=0.1, bn_eps=1e-5):
    """Default architecture: conv blocks (Conv3x3 -> [BN] -> ReLU -> MaxPool2)
    followed by GlobalAvgPool and a 2-logit Dense head."""
    layers = []
    c = in_channels
    for out in conv_channels:
        layers.append(LayerSpec(CONV3X3, in_channels=c, out_channels=out))
        if with_bn:
            layers.append(LayerSpec(BATCH_NORM, in_channels=out,
                                    bn_momentum=bn_momentum, bn_eps=bn_eps))
        layers.append(LayerSpec(RELU))
        layers.append(LayerSpec(MAXPOOL2))
        c = out
    layers.append(LayerSpec(GLOBAL_AVG_POOL))
    layers.append(LayerSpec(DENSE, in_channels=c, out_channels=2))
    spec = ModelSpec(layers=tuple(layers), with_bn=with_bn,
                     in_channels=in_channels, image_size=image_size)
    spec.validate()
    return spec


def param_tags(spec):
    """Map (layer_index, name) -> shared | local_statistic for every entry."""
    tags = {}
    for i, layer in enumerate(spec.layers):
        if layer.kind in (CONV3X3, DENSE):
            tags[(i, "weight")] = SHARED
            tags[(i, "bias")] = SHARED
        elif layer.kind == BATCH_NORM:
            tags[(i, "gamma")] = SHARED
            tags[(i, "beta")] = SHARED
            tags[(i, "mean")] = LOCAL_STATISTIC
            tags[(i, "var")] = LOCAL_STATISTIC
    return tags


def stat_keys(spec):
    return [k for k, t in param_tags(spec).items() if t == LOCAL_STATISTIC]


def grad_keys(spec):
    """Keys that receive gradients (everything except BN statistics)."""
    return [k for k, t in param_tags(spec).items() if t == SHARED]


def build_model(spec, seed, dtype=np.float64):
    """Initialize a ParamSet for ``spec``: fan-in scaled normal weights,
    zero biases, identity batch norm. Deterministic for a fixed seed."""
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    params = {}
    for i, layer in enumerate(spec.layers):
        if layer.kind == CONV3X3:
            fan_in = layer.in_channels * 9
            std = np.sqrt(2.0 / fan_in)
            params[(i, "weight")] = (
                rng.standard_normal((layer.out_channels, layer.in_channels, 3, 3)) * std
            ).astype(dtype)
            params[(i, "bias")] = np.zeros(layer.out_channels, dtype=dtype)
        elif layer.kind == DENSE:
            std = np.sqrt(2.0 / layer.in_channels)
            params[(i, "weight")] = (
                rng.standard_normal((layer.out_channels, layer.in_channels)) * std
            ).astype(dtype)
            params[(i, "bias")] = np.zeros(layer.out_channels, dtype=dtype)
        elif layer.kind == BATCH_NORM:
            c = layer.in_channels
            params[(i, "gamma")] = np.ones(c, dtype=dtype)
            params[(i, "beta")] = np.zeros(c, dtype=dtype)
            params[(i, "mean")] = np.zeros(c, dtype=dtype)
            params[(i, "var")] = np.ones(c, dtype=dtype)
    return params


def copy_params(params):
    return {k: v.copy() for k, v in params.items()}


def _conv_forward(x, weight, bias):
    n, c, h, w = x.shape
    cout = weight.shape[0]
    cols = backend.im2col3x3(x)  # (C*9, N*H*W)
    out = weight.reshape(cout, -1) @ cols  # (Cout, N*H*W)
    y = out.reshape(cout, n, h, w).transpose(1, 0, 2, 3)
    y += bias[None, :, None, None]
    return np.ascontiguousarray(y), cols


def _conv_backward(dy, cols, weight, x_shape):
    n, c, h, w = x_shape
    cout = weight.shape[0]
    dy2 = np.ascontiguousarray(dy.transpose(1, 0, 2, 3)).reshape(cout, n * h * w)
    dw = (dy2 @ cols.T).reshape(weight.shape)
    db = dy2.sum(axis=1)
    # dx = convolution of dy with the spatially flipped, channel-transposed
    # kernel (stride 1, padding 1 is self-adjoint up to this flip)
    w_flip = weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    dx, _ = _conv_forward(dy, np.ascontiguousarray(w_flip),
                          np.zeros(c, dtype=dy.dtype))
    return dx, dw, db


def forward(spec, params, batch, mode):
    """Run the layer chain on ``batch``; returns (logits, caches).

    mode="train" uses batch statistics in BN layers and updates the running
    statistics in ``params`` in place; mode="eval" reads running statistics
    and leaves ``params`` untouched.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and batch.shape[0] < 2:
        raise ValueError("train-mode forward requires batch size >= 2")
    if batch.ndim != 4 or batch.shape[1] != spec.in_channels:
        raise ValueError(
            f"batch shape {batch.shape} does not match model input "
            f"(N, {spec.in_channels}, H, W)"
        )
    x = batch
    caches = []
    for i, layer in enumerate(spec.layers):
        if layer.kind == CONV3X3:
            y, cols = _conv_forward(x, params[(i, "weight")], params[(i, "bias")])
            caches.append(("conv", x.shape, cols))
            x = y
        elif layer.kind == BATCH_NORM:
            if mode == "train":
                x, cache = bnorm.bn_forward_train(
                    x, params[(i, "gamma")], params[(i, "beta")],
                    params[(i, "mean")], params[(i, "var")],
                    layer.bn_momentum, layer.bn_eps,
                )
                caches.append(("bn", cache))
            else:
                x = bnorm.bn_forward_eval(
                    x, params[(i, "gamma")], params[(i, "beta")],
                    params[(i, "mean")], params[(i, "var")], layer.bn_eps,
                )
                caches.append(("bn", None))
        elif layer.kind == RELU:
            mask = x > 0
            x = x * mask
            caches.append(("relu", mask))
        elif layer.kind == MAXPOOL2:
            h, w = x.shape[2], x.shape[3]
            x, idx = backend.maxpool2_forward(x)
            caches.append(("pool", idx, h, w))
        elif layer.kind == GLOBAL_AVG_POOL:
            caches.append(("gap", x.shape))
            x = x.mean(axis=(2, 3))
        elif layer.kind == DENSE:
            caches.append(("dense", x))
            x = x @ params[(i, "weight")].T + params[(i, "bias")]
    if not np.all(np.isfinite(x)):
        raise NumericalError("non-finite activation in forward pass")
    return x, caches


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and the gradient w.r.t. logits."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    loss = -log_probs[np.arange(n), labels].mean()
    probs = np.exp(log_probs)
    dlogits = probs
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def backward(spec, params, caches, logits, labels):
    """Backpropagate mean softmax cross-entropy; returns (grads, loss).

    ``grads`` holds an entry for every shared-tagged parameter (weights,
    biases, gamma, beta); BN statistics get none.
    """
    if len(caches) != len(spec.layers):
        raise ValueError("cache does not match the model spec")
    loss, dx = softmax_cross_entropy(logits, labels)
    grads = {}
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        cache = caches[i]
        if layer.kind == CONV3X3:
            _, x_shape, cols = cache
            dx, dw, db = _conv_backward(dx, cols, params[(i, "weight")], x_shape)
            grads[(i, "weight")] = dw
            grads[(i, "bias")] = db
        elif layer.kind == BATCH_NORM:
            if cache[1] is None:
                raise ValueError("backward requires a train-mode cache")
            dx, dgamma, dbeta = bnorm.bn_backward(cache[1], dx)
            grads[(i, "gamma")] = dgamma
            grads[(i, "beta")] = dbeta
        elif layer.kind == RELU:
            dx = dx * cache[1]
        elif layer.kind == MAXPOOL2:
            _, idx, h, w = cache
            dx = backend.maxpool2_backward(dx, idx, h, w)
        elif layer.kind == GLOBAL_AVG_POOL:
            _, x_shape = cache
            n, c, h, w = x_shape
            dx = np.broadcast_to((dx / (h * w))[:, :, None, None], x_shape)
            dx = np.ascontiguousarray(dx)
        elif layer.kind == DENSE:
            x_in = cache[1]
            grads[(i, "weight")] = dx.T @ x_in
            grads[(i, "bias")] = dx.sum(axis=0)
            dx = dx @ params[(i, "weight")]
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {k}")
    return grads, loss
