"""Finite-difference validation of the analytic backward pass."""

from dataclasses import dataclass

import numpy as np

from . import nn


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_key: tuple
    worst_index: tuple
    per_key: dict


def _loss_at(spec, params, batch, labels):
    # forward mutates running BN statistics; evaluate on a scratch copy so
    # every probe sees the same starting state
    scratch = nn.copy_params(params)
    logits, _ = nn.forward(spec, scratch, batch, mode="train")
    loss, _ = nn.softmax_cross_entropy(logits, labels)
    return loss


def grad_check(spec, seed, batch_size=4, h=1e-5):
    """Compare backward() against central finite differences of the loss.

    Error is elementwise |analytic - numeric| / max(|analytic|, |numeric|,
    0.01); the absolute floor keeps structurally-zero gradients (e.g. a
    conv bias immediately followed by batch norm) from inflating the
    ratio. Requires 64-bit parameters; returns the worst entry and its key.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xFD]))
    params = nn.build_model(spec, seed, dtype=np.float64)
    batch = rng.uniform(0.0, 1.0, size=(batch_size, spec.in_channels,
                                        spec.image_size, spec.image_size))
    labels = rng.integers(0, 2, size=batch_size)

    scratch = nn.copy_params(params)
    logits, caches = nn.forward(spec, scratch, batch, mode="train")
    analytic, _ = nn.backward(spec, scratch, caches, logits, labels)

    per_key = {}
    worst = (0.0, None, None)
    for key, a in analytic.items():
        theta = params[key]
        num = np.zeros_like(a)
        flat = theta.reshape(-1)
        num_flat = num.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            lp = _loss_at(spec, params, batch, labels)
            flat[j] = orig - h
            lm = _loss_at(spec, params, batch, labels)
            flat[j] = orig
            num_flat[j] = (lp - lm) / (2.0 * h)
        rel = np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-2)
        err = float(rel.max())
        per_key[key] = err
        if err > worst[0]:
            idx = np.unravel_index(int(rel.argmax()), a.shape)
            worst = (err, key, idx)
    return GradCheckResult(max_rel_error=worst[0], worst_key=worst[1],
                           worst_index=worst[2], per_key=per_key)
