"""Dueling Q-network: action values, ε-greedy selection, target copies,
and checkpoint I/O.

Parameters live in one flat float64 vector (see kernels.layout) so the same
buffer feeds the compiled kernels and the optimizer without repacking.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass

import numpy as np

from . import kernels, nn
from .exceptions import ConfigurationError
from .kernels.layout import DuelingLayout


@dataclass
class QFunction:
    layout: DuelingLayout
    params: np.ndarray

    @property
    def obs_dim(self) -> int:
        return self.layout.obs_dim

    @property
    def action_count(self) -> int:
        return self.layout.n_actions

    def components(self):
        """Copies of (trunk, value_head, advantage_head) as MlpParams."""
        return self.layout.unpack(self.params)


def init_qfunction(obs_dim: int, n_actions: int, rng: np.random.Generator,
                   hidden: int = 128) -> QFunction:
    lay = DuelingLayout(obs_dim, n_actions, hidden)
    trunk = nn.mlp_init([obs_dim, hidden, hidden], rng,
                        activations=["relu", "relu"])
    value = nn.mlp_init([hidden, hidden, 1], rng)
    advantage = nn.mlp_init([hidden, hidden, n_actions], rng)
    return QFunction(lay, lay.pack(trunk, value, advantage))


def from_components(trunk: nn.MlpParams, value: nn.MlpParams,
                    advantage: nn.MlpParams) -> QFunction:
    obs_dim = trunk.W[0].shape[0]
    hidden = trunk.W[-1].shape[1]
    n_actions = advantage.W[-1].shape[1]
    lay = DuelingLayout(obs_dim, n_actions, hidden)
    return QFunction(lay, lay.pack(trunk, value, advantage))


def q_values(q: QFunction, obs: np.ndarray) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 1 or obs.shape[0] != q.obs_dim:
        raise ConfigurationError(
            f"expected obs of shape ({q.obs_dim},), got {obs.shape}"
        )
    return kernels.q_forward(q.layout, q.params, obs[None, :])[0]


def q_values_batch(q: QFunction, X: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != q.obs_dim:
        raise ConfigurationError(
            f"expected batch of shape (B, {q.obs_dim}), got {X.shape}"
        )
    return kernels.q_forward(q.layout, q.params, X)


def select_action(q: QFunction, obs: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> int:
    """ε-greedy action; greedy ties break toward the lowest index."""
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(q.action_count))
    return int(np.argmax(q_values(q, obs)))


def greedy_actions(q: QFunction, X: np.ndarray) -> np.ndarray:
    return np.argmax(q_values_batch(q, X), axis=1)


def sync_target(q: QFunction) -> QFunction:
    """Frozen value-identical copy; later updates to q leave it untouched."""
    params = q.params.copy()
    params.flags.writeable = False
    return QFunction(q.layout, params)


def config_hash(payload) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def save_checkpoint(q: QFunction, path: str, meta: dict | None = None) -> None:
    """Three binary network blobs in one file plus a JSON sidecar."""
    trunk, value, advantage = q.components()
    with open(path, "wb") as f:
        nn.save_mlp(f, trunk)
        nn.save_mlp(f, value)
        nn.save_mlp(f, advantage)
    sidecar = {
        "action_count": q.action_count,
        "obs_dim": q.obs_dim,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config_hash": config_hash(
            {"obs_dim": q.obs_dim, "action_count": q.action_count,
             "hidden": q.layout.hidden}
        ),
    }
    if meta:
        sidecar.update(meta)
    with open(path + ".json", "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(path: str):
    """Returns (QFunction, sidecar dict). Shapes are cross-checked."""
    with open(path, "rb") as f:
        trunk = nn.load_mlp(f, activations=["relu", "relu"])
        value = nn.load_mlp(f)
        advantage = nn.load_mlp(f)
    with open(path + ".json") as f:
        meta = json.load(f)
    q = from_components(trunk, value, advantage)
    if q.obs_dim != meta["obs_dim"] or q.action_count != meta["action_count"]:
        raise ConfigurationError(
            f"checkpoint sidecar dims {meta['obs_dim']}/{meta['action_count']} "
            f"do not match blobs {q.obs_dim}/{q.action_count}"
        )
    return q, meta
