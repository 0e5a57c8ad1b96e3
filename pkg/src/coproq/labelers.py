"""Labelers: sources of corrective actions for query segments.

A labeler sees a segment of (state, executed action) pairs and returns at
most n_cf (timestep index, corrective action) entries, or nothing when every
executed action already looks good. The simulated labeler scores steps by
Q-diff = Q^L(s, a^L) - Q^L(s, a) under its own Q-function; wrappers corrupt
its output, and the human bridge forwards segments to the labeling service.
"""

from __future__ import annotations

import logging

import numpy as np

from . import qnet
from .buffers import Segment
from .envs.gridworld import GridworldConfig, bfs_distances, GridAction, MOVES
from .exceptions import ConfigurationError

log = logging.getLogger(__name__)


class SimulatedLabeler:
    """Scores each segment step by the gain of its own suggestion over the
    executed action, labels the top n_cf steps that clear pass_threshold.

    q_fn maps a batch of observations to Q rows; any callable works, so the
    same selection logic serves trained checkpoints, weaker checkpoints,
    and scripted tabular oracles.
    """

    source = "simulated"
    needs_frames = False

    def __init__(self, q_fn, n_actions: int, rng: np.random.Generator,
                 epsilon: float = 0.01, n_cf: int = 1,
                 pass_threshold: float = 0.0):
        if n_cf < 1:
            raise ConfigurationError("n_cf must be >= 1")
        if not 0.0 <= epsilon <= 1.0:
            raise ConfigurationError("epsilon must be in [0, 1]")
        self.q_fn = q_fn
        self.n_actions = n_actions
        self.rng = rng
        self.epsilon = epsilon
        self.n_cf = n_cf
        self.pass_threshold = pass_threshold

    @classmethod
    def from_qfunction(cls, q: qnet.QFunction, rng, **kw):
        return cls(lambda X: qnet.q_values_batch(q, X), q.action_count,
                   rng, **kw)

    def label(self, segment: Segment) -> list[tuple[int, int]]:
        Q = np.asarray(self.q_fn(segment.obs), dtype=np.float64)
        T = len(segment)
        rows = np.arange(T)
        suggest = np.argmax(Q, axis=1)
        explore = self.rng.random(T) < self.epsilon
        if explore.any():
            suggest = np.where(
                explore, self.rng.integers(self.n_actions, size=T), suggest)
        qdiff = Q[rows, suggest] - Q[rows, segment.actions]
        # descending, ties to the lowest index
        order = np.argsort(-qdiff, kind="stable")[:self.n_cf]
        return [(int(i), int(suggest[i])) for i in order
                if qdiff[i] > self.pass_threshold]


class DiffRandLabeler:
    """Replaces each emitted corrective action, independently with
    probability p, by a uniform random action; indices stay put."""

    source = "random-corrupted"
    needs_frames = False

    def __init__(self, inner, p: float, n_actions: int,
                 rng: np.random.Generator):
        if not 0.0 <= p <= 1.0:
            raise ConfigurationError("corruption probability must be in "
                                     "[0, 1]")
        self.inner = inner
        self.p = p
        self.n_actions = n_actions
        self.rng = rng

    def label(self, segment: Segment) -> list[tuple[int, int]]:
        out = self.inner.label(segment)
        return [(i, int(self.rng.integers(self.n_actions))
                 if self.rng.random() < self.p else a)
                for i, a in out]


class HumanBridgeLabeler:
    """Forwards segments to the labeling service and blocks for the answer.

    The bridge owns the handoff and timeout; an expired query comes back as
    a pass (empty list) with a warning.
    """

    source = "human"
    needs_frames = True

    def __init__(self, bridge):
        self.bridge = bridge

    def label(self, segment: Segment) -> list[tuple[int, int]]:
        return self.bridge.ask(segment)


def gridworld_oracle_qfn(config: GridworldConfig | None = None,
                         gamma: float = 0.99):
    """Tabular optimal Q for the gridworld, exposed as a batch q_fn.

    Q(s, a) = gamma^(moves-to-goal after a), -1 for stepping off the cliff;
    greedy on it follows a shortest path, so a labeler built on it is the
    known-optimal teacher for end-to-end checks.
    """
    cfg = config or GridworldConfig()
    dist = bfs_distances(cfg)
    n = cfg.size
    table = np.zeros((n * n, len(GridAction)))
    for r in range(n):
        for c in range(n):
            for a in GridAction:
                dr, dc = MOVES[a]
                nr, nc = r + dr, c + dc
                if not (0 <= nr < n and 0 <= nc < n):
                    nr, nc = r, c
                if cfg.is_cliff(nr, nc):
                    q = -1.0
                elif np.isinf(dist[nr, nc]):
                    q = -1.0
                else:
                    q = gamma ** dist[nr, nc]
                table[r * n + c, a] = q

    def q_fn(X):
        cells = np.argmax(np.asarray(X), axis=1)
        return table[cells]

    return q_fn


def build_labeler(spec: dict, n_actions: int, rng: np.random.Generator,
                  bridge=None, env_config=None):
    """Labeler from a run-config object: {type, checkpoint, n_cf, p,
    pass_threshold, epsilon}."""
    kind = spec.get("type", "simulated")
    n_cf = int(spec.get("n_cf", 1))
    epsilon = float(spec.get("epsilon", 0.01))
    pass_threshold = float(spec.get("pass_threshold", 0.0))
    if kind == "human":
        if bridge is None:
            raise ConfigurationError("human labeler needs a running "
                                     "labeling service")
        return HumanBridgeLabeler(bridge)
    if kind == "oracle":
        if not isinstance(env_config, GridworldConfig):
            raise ConfigurationError(
                "the oracle labeler only exists for the gridworld env")
        return SimulatedLabeler(gridworld_oracle_qfn(env_config),
                                n_actions, rng, epsilon=epsilon,
                                n_cf=n_cf, pass_threshold=pass_threshold)
    if kind not in ("simulated", "diffrand"):
        raise ConfigurationError(f"unknown labeler type {kind!r}")
    if "checkpoint" not in spec:
        raise ConfigurationError(f"labeler type {kind!r} needs a checkpoint")
    q, _ = qnet.load_checkpoint(spec["checkpoint"])
    if q.action_count != n_actions:
        raise ConfigurationError(
            f"labeler checkpoint has {q.action_count} actions, env has "
            f"{n_actions}")
    base = SimulatedLabeler.from_qfunction(
        q, rng, epsilon=epsilon, n_cf=n_cf,
        pass_threshold=pass_threshold)
    if kind == "diffrand":
        return DiffRandLabeler(base, float(spec.get("p", 0.0)), n_actions,
                               rng)
    return base
