"""Dense MLP forward/backward plus Adam, numpy only, float64 throughout.

This is the reference math for the whole package: the fused kernels in
coproq.kernels must agree with these ops bit for bit (same order of
operations), and everything else is built on top. Keep it small.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError, NumericalError

Array = np.ndarray

MAGIC = b"ICPR"
FORMAT_VERSION = 1

_ACTIVATIONS = ("relu", "tanh", "linear")


@dataclass
class MlpParams:
    """Per-layer weights [in, out], biases [out], and activation names."""

    W: list[Array]
    b: list[Array]
    activations: list[str]

    @property
    def sizes(self) -> list[int]:
        return [self.W[0].shape[0]] + [w.shape[1] for w in self.W]

    def copy(self) -> "MlpParams":
        return MlpParams(
            [w.copy() for w in self.W],
            [b.copy() for b in self.b],
            list(self.activations),
        )


def mlp_init(sizes, rng: np.random.Generator, activations=None) -> MlpParams:
    """Fresh parameters, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for W and b.

    Default activations: relu on hidden layers, linear on the last.
    """
    if len(sizes) < 2:
        raise ConfigurationError(f"need at least two sizes, got {sizes!r}")
    if activations is None:
        activations = ["relu"] * (len(sizes) - 2) + ["linear"]
    if len(activations) != len(sizes) - 1:
        raise ConfigurationError(
            f"{len(activations)} activations for {len(sizes) - 1} layers"
        )
    for act in activations:
        if act not in _ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {act!r}")
    W, b = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        W.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        b.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(W, b, list(activations))


def _activate(name: str, z: Array) -> Array:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(name: str, h: Array, dout: Array) -> Array:
    # both relu and tanh are recoverable from the post-activation value
    if name == "relu":
        return dout * (h > 0)
    if name == "tanh":
        return dout * (1.0 - h * h)
    return dout


def _as_batch(params: MlpParams, x: Array):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise ConfigurationError(f"input must be 1D or 2D, got shape {x.shape}")
    if x.shape[1] != params.W[0].shape[0]:
        raise ConfigurationError(
            f"input width {x.shape[1]} != first layer fan-in {params.W[0].shape[0]}"
        )
    return x, False


def mlp_forward(params: MlpParams, x: Array) -> Array:
    x, squeeze = _as_batch(params, x)
    h = x
    for w, bias, act in zip(params.W, params.b, params.activations):
        h = _activate(act, h @ w + bias)
    return h[0] if squeeze else h


def mlp_forward_cached(params: MlpParams, x: Array):
    """Forward pass that keeps every layer's post-activation for backward.

    Returns (y, cache); cache[0] is the input batch, cache[i] the output of
    layer i-1, cache[-1] == y.
    """
    x, squeeze = _as_batch(params, x)
    if squeeze:
        raise ConfigurationError("cached forward expects a 2D batch")
    cache = [x]
    h = x
    for w, bias, act in zip(params.W, params.b, params.activations):
        h = _activate(act, h @ w + bias)
        cache.append(h)
    return h, cache


def mlp_backward(params: MlpParams, cache, dout: Array):
    """Gradients of sum(dout * y) w.r.t. every W, b, and the input.

    Returns (dW, db, dx) with dW/db shaped like params.W/params.b.
    """
    dout = np.asarray(dout, dtype=np.float64)
    if dout.shape != cache[-1].shape:
        raise ConfigurationError(
            f"dout shape {dout.shape} != output shape {cache[-1].shape}"
        )
    n_layers = len(params.W)
    dW = [None] * n_layers
    db = [None] * n_layers
    for i in reversed(range(n_layers)):
        dout = _activation_grad(params.activations[i], cache[i + 1], dout)
        dW[i] = cache[i].T @ dout
        db[i] = dout.sum(axis=0)
        dout = dout @ params.W[i].T
    return dW, db, dout


@dataclass
class AdamState:
    """Bias-corrected Adam moments for a list of tensors."""

    m: list[Array]
    v: list[Array]
    t: int
    alpha: float
    beta1: float
    beta2: float
    eps: float


def adam_init(tensors, alpha: float, eps: float, beta1: float = 0.9,
              beta2: float = 0.999) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p) for p in tensors],
        v=[np.zeros_like(p) for p in tensors],
        t=0,
        alpha=alpha,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(state: AdamState, tensors, grads) -> None:
    """One in-place Adam update over every tensor/grad pair.

    The exact order of operations here is the contract the compiled kernel
    replicates: p -= alpha * (m / bc1) / (sqrt(v / bc2) + eps).
    """
    if len(tensors) != len(state.m) or len(grads) != len(state.m):
        raise ConfigurationError("tensor/grad count does not match Adam state")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(tensors, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.alpha * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def reset_moments(state: AdamState) -> None:
    """Zero m, v and the step counter; hyperparameters survive. Idempotent."""
    for m in state.m:
        m[:] = 0.0
    for v in state.v:
        v[:] = 0.0
    state.t = 0


def check_finite(name: str, value) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericalError(f"non-finite values in {name}")


def save_mlp(file, params: MlpParams) -> None:
    """Binary dump: magic, version u32, layer count u32, then per layer
    rows u32, cols u32, row-major f64 weights, f64 biases. Little-endian.

    Activations are structural (fixed per network role) and not stored.
    """
    own = isinstance(file, (str, bytes)) or hasattr(file, "__fspath__")
    f = open(file, "wb") if own else file
    try:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(params.W)))
        for w, bias in zip(params.W, params.b):
            check_finite("weights", w)
            check_finite("biases", bias)
            rows, cols = w.shape
            f.write(struct.pack("<II", rows, cols))
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(bias, dtype="<f8").tobytes())
    finally:
        if own:
            f.close()


def load_mlp(file, activations=None) -> MlpParams:
    """Inverse of save_mlp; round-trips bit-exactly.

    activations defaults to relu hidden + linear final.
    """
    own = isinstance(file, (str, bytes)) or hasattr(file, "__fspath__")
    f = open(file, "rb") if own else file
    try:
        magic = f.read(4)
        if magic != MAGIC:
            raise ConfigurationError(f"bad magic {magic!r}, expected {MAGIC!r}")
        version, n_layers = struct.unpack("<II", f.read(8))
        if version != FORMAT_VERSION:
            raise ConfigurationError(f"unsupported format version {version}")
        W, b = [], []
        for _ in range(n_layers):
            rows, cols = struct.unpack("<II", f.read(8))
            w = np.frombuffer(f.read(rows * cols * 8), dtype="<f8")
            if w.size != rows * cols:
                raise ConfigurationError("truncated weight block")
            W.append(w.reshape(rows, cols).astype(np.float64))
            bias = np.frombuffer(f.read(cols * 8), dtype="<f8")
            if bias.size != cols:
                raise ConfigurationError("truncated bias block")
            b.append(bias.astype(np.float64))
    finally:
        if own:
            f.close()
    if activations is None:
        activations = ["relu"] * (n_layers - 1) + ["linear"]
    if len(activations) != n_layers:
        raise ConfigurationError(
            f"{len(activations)} activations for {n_layers} layers"
        )
    return MlpParams(W, b, list(activations))
