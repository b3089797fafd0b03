"""Batch normalization with an explicit local/shared split.

gamma and beta are trainable and travel with the shared parameters;
the running mean/variance are descriptive statistics of the local data
and are mutated in place only here (train-mode forward) and in
``adabn_recompute``. Variances use the biased (population) convention
throughout so train-time normalization and AdaBN agree.
"""

import numpy as np


def bn_forward_train(x, gamma, beta, running_mean, running_var, momentum, eps):
    """Normalize with batch statistics and EMA-update the running ones.

    Statistics reduce over batch and spatial axes, per channel. Mutates
    running_mean/running_var in place.
    """
    n, c, h, w = x.shape
    m = n * h * w
    if m < 2:
        raise ValueError("batch-norm reduction extent must be >= 2")
    mu_b = x.mean(axis=(0, 2, 3))
    var_b = x.var(axis=(0, 2, 3))  # biased
    inv_std = 1.0 / np.sqrt(var_b + eps)
    xhat = (x - mu_b[None, :, None, None]) * inv_std[None, :, None, None]
    y = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    running_mean[:] = (1.0 - momentum) * running_mean + momentum * mu_b
    running_var[:] = (1.0 - momentum) * running_var + momentum * var_b
    cache = (xhat, inv_std, gamma, m)
    return y, cache


def bn_forward_eval(x, gamma, beta, running_mean, running_var, eps):
    """Normalize with the stored running statistics; pure function."""
    scale = gamma / np.sqrt(running_var + eps)
    shift = beta - running_mean * scale
    return x * scale[None, :, None, None] + shift[None, :, None, None]


def bn_backward(cache, dy):
    """Gradient through train-mode normalization.

    Accounts for the dependence of the batch mean/variance on x, so the
    per-channel sum of dx vanishes identically.
    """
    xhat, inv_std, gamma, m = cache
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    coeff = (gamma * inv_std / m)[None, :, None, None]
    dx = coeff * (
        m * dy
        - dbeta[None, :, None, None]
        - xhat * dgamma[None, :, None, None]
    )
    return dx, dgamma, dbeta


def adabn_recompute(spec, params, adaptation_batches):
    """Replace every BN layer's running statistics with the exact
    mean/variance of its pre-normalization activations over the given
    batches; all other parameters stay frozen.

    The recomputation is layer-sequential: statistics of earlier BN layers
    are finalized first and used when propagating to later layers, so the
    result is self-consistent. Mutates the statistic arrays in ``params``
    and returns it.
    """
    from . import nn  # local import; nn imports this module

    if not adaptation_batches:
        raise ValueError("adabn_recompute requires at least one adaptation batch")

    bn_indices = [i for i, l in enumerate(spec.layers) if l.kind == nn.BATCH_NORM]
    for bn_i in bn_indices:
        # stream per-batch moments of the activations feeding this layer
        count = 0
        total = None
        total_sq = None
        for batch in adaptation_batches:
            x = batch
            for i, layer in enumerate(spec.layers[:bn_i]):
                if layer.kind == nn.CONV3X3:
                    x, _ = nn._conv_forward(x, params[(i, "weight")], params[(i, "bias")])
                elif layer.kind == nn.BATCH_NORM:
                    x = bn_forward_eval(
                        x, params[(i, "gamma")], params[(i, "beta")],
                        params[(i, "mean")], params[(i, "var")], layer.bn_eps,
                    )
                elif layer.kind == nn.RELU:
                    x = np.maximum(x, 0)
                elif layer.kind == nn.MAXPOOL2:
                    from . import backend
                    x, _ = backend.maxpool2_forward(x)
                elif layer.kind == nn.GLOBAL_AVG_POOL:
                    x = x.mean(axis=(2, 3))
                elif layer.kind == nn.DENSE:
                    x = x @ params[(i, "weight")].T + params[(i, "bias")]
            count += x.shape[0] * x.shape[2] * x.shape[3]
            s = x.sum(axis=(0, 2, 3))
            sq = (x * x).sum(axis=(0, 2, 3))
            total = s if total is None else total + s
            total_sq = sq if total_sq is None else total_sq + sq
        mean = total / count
        var = np.maximum(total_sq / count - mean * mean, 0.0)
        params[(bn_i, "mean")][:] = mean
        params[(bn_i, "var")][:] = var
    return params
