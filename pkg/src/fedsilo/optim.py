"""Adam with bias correction and additive L2 regularization.

Defaults follow the training configuration used for the BN-bearing
network: beta1=0, beta2=0.99, lr=1e-4, L2=1e-3. The L2 term is added to
the gradient (lambda * theta) before the moment update, and applies to
weights and biases only, never to gamma/beta or the BN statistics.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-4
    beta1: float = 0.0
    beta2: float = 0.99
    l2: float = 1e-3
    eps: float = 1e-8


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def init(cls, params, keys):
        return cls(
            m={k: np.zeros_like(params[k]) for k in keys},
            v={k: np.zeros_like(params[k]) for k in keys},
            t=0,
        )


def adam_step(params, grads, state, hyper):
    """One Adam update over every key in ``grads``; mutates params/state."""
    state.t += 1
    t = state.t
    bc1 = 1.0 - hyper.beta1 ** t
    bc2 = 1.0 - hyper.beta2 ** t
    for k, g in grads.items():
        theta = params[k]
        if theta.shape != g.shape:
            raise ValueError(f"gradient shape mismatch for {k}: "
                             f"{g.shape} vs {theta.shape}")
        if hyper.l2 != 0.0 and k[1] in ("weight", "bias"):
            g = g + hyper.l2 * theta
        m = state.m[k]
        v = state.v[k]
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * (g * g)
        theta -= hyper.lr * (m / bc1) / (np.sqrt(v / bc2) + hyper.eps)
    return params, state
