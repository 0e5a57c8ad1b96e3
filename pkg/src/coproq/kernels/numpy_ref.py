"""Pure-numpy twin of the compiled kernels.

Same signatures, same math, same order of operations. The compiled backend
must agree with this module to float64 rounding (see test_kernels), so any
change here is a contract change.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def q_forward(lay, p: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Q-values [B, A] for a batch of observations [B, obs_dim]."""
    h0 = np.maximum(X @ lay.weight(p, "t0") + lay.bias(p, "t0"), 0.0)
    h1 = np.maximum(h0 @ lay.weight(p, "t1") + lay.bias(p, "t1"), 0.0)
    hv = np.maximum(h1 @ lay.weight(p, "v0") + lay.bias(p, "v0"), 0.0)
    ha = np.maximum(h1 @ lay.weight(p, "a0") + lay.bias(p, "a0"), 0.0)
    v = hv @ lay.weight(p, "v1") + lay.bias(p, "v1")
    adv = ha @ lay.weight(p, "a1") + lay.bias(p, "a1")
    return v + adv - adv.sum(axis=1, keepdims=True) / lay.n_actions


def q_forward_cached(lay, p: np.ndarray, X: np.ndarray):
    """Forward keeping post-activation hiddens for q_backward."""
    h0 = np.maximum(X @ lay.weight(p, "t0") + lay.bias(p, "t0"), 0.0)
    h1 = np.maximum(h0 @ lay.weight(p, "t1") + lay.bias(p, "t1"), 0.0)
    hv = np.maximum(h1 @ lay.weight(p, "v0") + lay.bias(p, "v0"), 0.0)
    ha = np.maximum(h1 @ lay.weight(p, "a0") + lay.bias(p, "a0"), 0.0)
    v = hv @ lay.weight(p, "v1") + lay.bias(p, "v1")
    adv = ha @ lay.weight(p, "a1") + lay.bias(p, "a1")
    q = v + adv - adv.sum(axis=1, keepdims=True) / lay.n_actions
    return q, (X, h0, h1, hv, ha)


def q_backward(lay, p: np.ndarray, cache, dQ: np.ndarray) -> np.ndarray:
    """Flat gradient of sum(dQ * Q) w.r.t. the parameter vector."""
    X, h0, h1, hv, ha = cache
    g = np.zeros_like(p)

    # dueling combination: dV = rowsum(dQ), dADV = dQ - rowmean(dQ)
    dv = dQ.sum(axis=1, keepdims=True)
    dadv = dQ - dv / lay.n_actions

    # advantage output layer
    lay.weight(g, "a1")[:] = ha.T @ dadv
    lay.bias(g, "a1")[:] = dadv.sum(axis=0)
    dha = dadv @ lay.weight(p, "a1").T
    dha *= ha > 0

    lay.weight(g, "a0")[:] = h1.T @ dha
    lay.bias(g, "a0")[:] = dha.sum(axis=0)
    dh1 = dha @ lay.weight(p, "a0").T

    # value output layer
    lay.weight(g, "v1")[:] = hv.T @ dv
    lay.bias(g, "v1")[:] = dv.sum(axis=0)
    dhv = dv @ lay.weight(p, "v1").T
    dhv *= hv > 0

    lay.weight(g, "v0")[:] = h1.T @ dhv
    lay.bias(g, "v0")[:] = dhv.sum(axis=0)
    dh1 += dhv @ lay.weight(p, "v0").T
    dh1 *= h1 > 0

    # trunk
    lay.weight(g, "t1")[:] = h0.T @ dh1
    lay.bias(g, "t1")[:] = dh1.sum(axis=0)
    dh0 = dh1 @ lay.weight(p, "t1").T
    dh0 *= h0 > 0

    lay.weight(g, "t0")[:] = X.T @ dh0
    lay.bias(g, "t0")[:] = dh0.sum(axis=0)
    return g


def adam_update(p: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray,
                step: int, alpha: float, beta1: float, beta2: float,
                eps: float) -> None:
    """In-place Adam over flat vectors; `step` is the already-incremented t."""
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= alpha * (m / bc1) / (np.sqrt(v / bc2) + eps)
