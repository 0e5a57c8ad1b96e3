"""Flat parameter layout for the dueling Q-network.

The hot path keeps all weights in one contiguous float64 vector so the
forward/backward/Adam kernels can run over plain arrays. This module is the
single source of truth for where each layer lives inside that vector.

Layer order (offsets ascend): trunk t0, t1; value head v0, v1; advantage
head a0, a1. Each layer stores row-major W [in, out] then b [out]. Hidden
layers are rectified, v1/a1 are linear.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import ConfigurationError
from ..nn import MlpParams


class DuelingLayout:
    HIDDEN_ACT = "relu"

    def __init__(self, obs_dim: int, n_actions: int, hidden: int = 128):
        if obs_dim < 1 or n_actions < 2 or hidden < 1:
            raise ConfigurationError(
                f"bad dueling dims obs={obs_dim} actions={n_actions} hidden={hidden}"
            )
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.hidden = hidden
        # (name, rows, cols)
        self.layers = [
            ("t0", obs_dim, hidden),
            ("t1", hidden, hidden),
            ("v0", hidden, hidden),
            ("v1", hidden, 1),
            ("a0", hidden, hidden),
            ("a1", hidden, n_actions),
        ]
        self.offsets = {}
        off = 0
        for name, rows, cols in self.layers:
            self.offsets[name] = (off, off + rows * cols)
            off += rows * cols + cols
        self.size = off

    def weight(self, p: np.ndarray, name: str) -> np.ndarray:
        """View of layer `name`'s weight matrix inside flat vector p."""
        w_off, b_off = self.offsets[name]
        rows, cols = next((r, c) for n, r, c in self.layers if n == name)
        return p[w_off:b_off].reshape(rows, cols)

    def bias(self, p: np.ndarray, name: str) -> np.ndarray:
        w_off, b_off = self.offsets[name]
        cols = next(c for n, r, c in self.layers if n == name)
        return p[b_off:b_off + cols]

    def empty(self) -> np.ndarray:
        return np.zeros(self.size, dtype=np.float64)

    def pack(self, trunk: MlpParams, value: MlpParams,
             advantage: MlpParams) -> np.ndarray:
        """Flatten three component networks into one parameter vector."""
        parts = [
            ("t0", trunk, 0), ("t1", trunk, 1),
            ("v0", value, 0), ("v1", value, 1),
            ("a0", advantage, 0), ("a1", advantage, 1),
        ]
        p = self.empty()
        for name, net, i in parts:
            w, b = net.W[i], net.b[i]
            rows, cols = next((r, c) for n, r, c in self.layers if n == name)
            if w.shape != (rows, cols) or b.shape != (cols,):
                raise ConfigurationError(
                    f"layer {name}: got {w.shape}/{b.shape}, want {(rows, cols)}"
                )
            self.weight(p, name)[:] = w
            self.bias(p, name)[:] = b
        return p

    def unpack(self, p: np.ndarray):
        """Copies of (trunk, value_head, advantage_head) as MlpParams."""
        def net(n0, n1, last_act):
            return MlpParams(
                W=[self.weight(p, n0).copy(), self.weight(p, n1).copy()],
                b=[self.bias(p, n0).copy(), self.bias(p, n1).copy()],
                activations=[self.HIDDEN_ACT, last_act],
            )
        return (
            MlpParams(
                W=[self.weight(p, "t0").copy(), self.weight(p, "t1").copy()],
                b=[self.bias(p, "t0").copy(), self.bias(p, "t1").copy()],
                activations=[self.HIDDEN_ACT, self.HIDDEN_ACT],
            ),
            net("v0", "v1", "linear"),
            net("a0", "a1", "linear"),
        )
