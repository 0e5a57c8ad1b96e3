"""Replay storage and sampling: the transition buffer D with iteration tags,
the corrective-feedback buffer D^L, non-overlapping query-segment sampling,
the recent-K training window with precomputed n-step returns, and minibatch
iteration.

Transitions are stored as struct-of-arrays so windows and minibatches are
views/gathers, never Python object lists.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, UsageError

log = logging.getLogger(__name__)

# (episode, timestep) packed into one int64 key; timesteps stay tiny
_SLOT_BASE = np.int64(1) << 32


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool
    episode_id: int = 0
    t: int = 0
    iteration: int = 0
    global_step: int = 0


@dataclass
class CorrectiveLabel:
    state: np.ndarray
    executed_action: int
    label_action: int
    source: str
    global_step: int
    episode_id: int = 0
    t: int = 0


@dataclass
class Segment:
    """T consecutive (state, executed action) pairs from one episode."""

    episode_id: int
    ts: np.ndarray
    obs: np.ndarray
    actions: np.ndarray
    global_steps: np.ndarray
    frames: list | None = None

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class EnvMinibatch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    next_obs: np.ndarray
    nstep_return: np.ndarray
    nstep_gamma: np.ndarray
    nstep_boot_obs: np.ndarray
    labeled: np.ndarray
    episode_ids: np.ndarray
    ts: np.ndarray
    indices: np.ndarray  # window-relative rows, for cached target columns


@dataclass
class LabelMinibatch:
    obs: np.ndarray
    executed: np.ndarray
    labels: np.ndarray


class TransitionBuffer:
    """Append-only within a run, with explicit retention by iteration tag.

    Rows stay in insertion order (episodes contiguous, iteration tags
    monotone), so windows are plain slices.
    """

    def __init__(self, obs_dim: int, capacity: int):
        if capacity < 1:
            raise ConfigurationError("capacity must be positive")
        self.obs_dim = obs_dim
        self.capacity = capacity
        self.size = 0
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self.episode_ids = np.zeros(capacity, dtype=np.int64)
        self.ts = np.zeros(capacity, dtype=np.int64)
        self.iterations = np.zeros(capacity, dtype=np.int64)
        self.global_steps = np.zeros(capacity, dtype=np.int64)

    def append(self, state, action, reward, next_state, done, episode_id, t,
               iteration, global_step) -> None:
        if self.size == self.capacity:
            raise UsageError("transition buffer full; call drop_before first")
        if self.size and iteration < self.iterations[self.size - 1]:
            raise UsageError("iteration tags must be monotone")
        i = self.size
        self.obs[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_state
        self.dones[i] = done
        self.episode_ids[i] = episode_id
        self.ts[i] = t
        self.iterations[i] = iteration
        self.global_steps[i] = global_step
        self.size = i + 1

    def drop_before(self, min_iteration: int) -> int:
        """Evict rows tagged below min_iteration; returns rows dropped."""
        k = int(np.searchsorted(self.iterations[:self.size], min_iteration,
                                side="left"))
        if k:
            n = self.size - k
            for arr in (self.obs, self.actions, self.rewards, self.next_obs,
                        self.dones, self.episode_ids, self.ts,
                        self.iterations, self.global_steps):
                arr[:n] = arr[k:self.size]
            self.size = n
        return k

    def slice_by_iteration(self, lo: int, hi: int):
        """Row range [a, b) holding iteration tags in [lo, hi]."""
        tags = self.iterations[:self.size]
        a = int(np.searchsorted(tags, lo, side="left"))
        b = int(np.searchsorted(tags, hi, side="right"))
        return a, b


class FeedbackBuffer:
    """Append-only corrective labels, at most one per (episode, timestep)."""

    def __init__(self, obs_dim: int):
        self.obs_dim = obs_dim
        self.size = 0
        cap = 64
        self.obs = np.zeros((cap, obs_dim))
        self.executed = np.zeros(cap, dtype=np.int64)
        self.labels = np.zeros(cap, dtype=np.int64)
        self.global_steps = np.zeros(cap, dtype=np.int64)
        self.episode_ids = np.zeros(cap, dtype=np.int64)
        self.ts = np.zeros(cap, dtype=np.int64)
        self.sources: list[str] = []
        self._slots: set[int] = set()

    def _grow(self) -> None:
        cap = len(self.executed) * 2
        self.obs = np.vstack([self.obs, np.zeros_like(self.obs)])
        for name in ("executed", "labels", "global_steps", "episode_ids",
                     "ts"):
            arr = getattr(self, name)
            setattr(self, name, np.concatenate([arr, np.zeros_like(arr)]))
        assert len(self.executed) == cap

    def add(self, label: CorrectiveLabel) -> bool:
        """False (and no change) if the slot already holds a label."""
        key = int(label.episode_id) * int(_SLOT_BASE) + int(label.t)
        if key in self._slots:
            return False
        if self.size == len(self.executed):
            self._grow()
        i = self.size
        self.obs[i] = label.state
        self.executed[i] = label.executed_action
        self.labels[i] = label.label_action
        self.global_steps[i] = label.global_step
        self.episode_ids[i] = label.episode_id
        self.ts[i] = label.t
        self.sources.append(label.source)
        self._slots.add(key)
        self.size = i + 1
        return True

    def slot_keys(self) -> np.ndarray:
        """Sorted packed (episode, t) keys, for vectorized membership."""
        keys = (self.episode_ids[:self.size] * _SLOT_BASE
                + self.ts[:self.size])
        return np.sort(keys)

    def record(self, i: int) -> dict:
        return {
            "state": self.obs[i].tolist(),
            "executed_action": int(self.executed[i]),
            "label_action": int(self.labels[i]),
            "source": self.sources[i],
            "step": int(self.global_steps[i]),
            "episode": int(self.episode_ids[i]),
            "t": int(self.ts[i]),
        }

    def append_jsonl(self, path: str, start: int = 0) -> int:
        """Append records [start, size) to a JSON-lines file."""
        with open(path, "a") as f:
            for i in range(start, self.size):
                f.write(json.dumps(self.record(i)) + "\n")
        return self.size

    @classmethod
    def load_jsonl(cls, path: str) -> "FeedbackBuffer":
        buf = None
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                state = np.asarray(rec["state"], dtype=np.float64)
                if buf is None:
                    buf = cls(obs_dim=state.shape[0])
                buf.add(CorrectiveLabel(
                    state=state,
                    executed_action=rec["executed_action"],
                    label_action=rec["label_action"],
                    source=rec["source"],
                    global_step=rec["step"],
                    episode_id=rec["episode"],
                    t=rec["t"],
                ))
        if buf is None:
            raise ConfigurationError(f"no labels in {path}")
        return buf


def sample_query_segments(buffer: TransitionBuffer, iteration: int, M: int,
                          T: int, rng: np.random.Generator) -> list[Segment]:
    """Up to M non-overlapping T-step segments from iteration's rollout,
    none spanning an episode boundary, uniform via shuffled greedy placement.
    """
    a, b = buffer.slice_by_iteration(iteration, iteration)
    n = b - a
    if n == 0:
        raise UsageError(f"no transitions tagged iteration {iteration}")
    if M * T > n:
        log.warning("query budget M*T=%d exceeds rollout length %d", M * T, n)
    eps = buffer.episode_ids[a:b]
    starts = np.flatnonzero(eps[:n - T + 1] == eps[T - 1:]) if n >= T else \
        np.empty(0, dtype=np.int64)
    taken = np.zeros(n, dtype=bool)
    chosen = []
    for s in rng.permutation(starts):
        if not taken[s:s + T].any():
            taken[s:s + T] = True
            chosen.append(int(s))
            if len(chosen) == M:
                break
    if len(chosen) < M:
        log.warning("only %d of %d query segments placeable", len(chosen), M)
    segments = []
    for s in sorted(chosen):
        i, j = a + s, a + s + T
        segments.append(Segment(
            episode_id=int(eps[s]),
            ts=buffer.ts[i:j].copy(),
            obs=buffer.obs[i:j].copy(),
            actions=buffer.actions[i:j].copy(),
            global_steps=buffer.global_steps[i:j].copy(),
        ))
    return segments


@dataclass
class Window:
    """Recent-iteration slice of the buffer plus n-step precomputation."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    next_obs: np.ndarray
    episode_ids: np.ndarray
    ts: np.ndarray
    nstep_return: np.ndarray
    nstep_gamma: np.ndarray
    nstep_boot_idx: np.ndarray
    nstep_boot_is_next: np.ndarray
    labeled: np.ndarray
    nstep_boot_obs: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return len(self.actions)


def recent_window(buffer: TransitionBuffer, current_iter: int, K: int = 100,
                  gamma: float = 0.99, n_step: int = 20,
                  feedback: FeedbackBuffer | None = None,
                  zero_rewards: bool = False) -> Window:
    """Transitions of the most recent K rollouts (iteration tags in
    (current_iter - K, current_iter]) with n-step returns precomputed.

    n-step returns truncate at episode ends (bootstrap weight 0 past a
    terminal); a window that stops mid-episode bootstraps from the last
    stored next state with gamma^(steps available).
    """
    if K < 1:
        raise ConfigurationError("K must be >= 1")
    a, b = buffer.slice_by_iteration(current_iter - K + 1, current_iter)
    n = b - a
    if n == 0:
        raise UsageError("empty training window")

    rewards = buffer.rewards[a:b]
    if zero_rewards:
        rewards = np.zeros(n)
    dones = buffer.dones[a:b]
    eps = buffer.episode_ids[a:b]

    nret = np.zeros(n)
    ngam = np.zeros(n)
    bidx = np.zeros(n, dtype=np.int64)
    bnext = np.zeros(n, dtype=bool)

    # per-episode-group reverse discounted suffix sums
    cuts = np.flatnonzero(eps[1:] != eps[:-1]) + 1
    bounds = np.concatenate([[0], cuts, [n]])
    for g0, g1 in zip(bounds[:-1], bounds[1:]):
        m = g1 - g0
        r = rewards[g0:g1]
        w = gamma ** np.arange(m)
        suffix = np.concatenate([np.cumsum((r * w)[::-1])[::-1] / w, [0.0]])
        k = np.arange(m)
        avail = np.minimum(n_step, m - k)
        nret[g0:g1] = suffix[:m] - (gamma ** avail) * suffix[k + avail]
        terminal = bool(dones[g1 - 1])
        interior = k + n_step < m
        # full n-step windows bootstrap from the state n steps ahead
        bidx[g0:g1][interior] = g0 + k[interior] + n_step
        ngam[g0:g1][interior] = gamma ** n_step
        tail = ~interior
        if terminal:
            ngam[g0:g1][tail] = 0.0
        else:
            # cut mid-episode: bootstrap from the last stored next state
            bidx[g0:g1][tail] = g1 - 1
            bnext[g0:g1][tail] = True
            ngam[g0:g1][tail] = gamma ** avail[tail]

    labeled = np.zeros(n, dtype=bool)
    if feedback is not None and feedback.size:
        keys = eps * _SLOT_BASE + buffer.ts[a:b]
        known = feedback.slot_keys()
        pos = np.searchsorted(known, keys)
        pos = np.minimum(pos, len(known) - 1)
        labeled = known[pos] == keys

    obs = buffer.obs[a:b]
    next_obs = buffer.next_obs[a:b]
    boot_obs = np.where(bnext[:, None], next_obs[bidx], obs[bidx])
    return Window(
        obs=obs, actions=buffer.actions[a:b], rewards=rewards, dones=dones,
        next_obs=next_obs, episode_ids=eps, ts=buffer.ts[a:b],
        nstep_return=nret, nstep_gamma=ngam, nstep_boot_idx=bidx,
        nstep_boot_is_next=bnext, labeled=labeled, nstep_boot_obs=boot_obs,
    )


def gather_env_minibatch(window: Window, idx: np.ndarray) -> EnvMinibatch:
    return EnvMinibatch(
        obs=window.obs[idx], actions=window.actions[idx],
        rewards=window.rewards[idx], dones=window.dones[idx],
        next_obs=window.next_obs[idx],
        nstep_return=window.nstep_return[idx],
        nstep_gamma=window.nstep_gamma[idx],
        nstep_boot_obs=window.nstep_boot_obs[idx],
        labeled=window.labeled[idx],
        episode_ids=window.episode_ids[idx], ts=window.ts[idx],
        indices=idx,
    )


def gather_label_minibatch(feedback: FeedbackBuffer,
                           idx: np.ndarray) -> LabelMinibatch:
    return LabelMinibatch(obs=feedback.obs[idx],
                          executed=feedback.executed[idx],
                          labels=feedback.labels[idx])


def sample_minibatches(window: Window, feedback: FeedbackBuffer | None,
                       batch_size: int, rng: np.random.Generator):
    """One epoch: shuffled sweep of the window without replacement, dropping
    the last partial batch; each env minibatch pairs with an equal-size
    label minibatch drawn with replacement from D^L (None if D^L is empty).
    """
    n = len(window)
    if n == 0:
        raise UsageError("cannot sample from an empty window")
    perm = rng.permutation(n)
    n_batches = n // batch_size
    for k in range(n_batches):
        idx = perm[k * batch_size:(k + 1) * batch_size]
        env_mb = gather_env_minibatch(window, idx)
        label_mb = None
        if feedback is not None and feedback.size:
            lidx = rng.integers(0, feedback.size, size=batch_size)
            label_mb = gather_label_minibatch(feedback, lidx)
        yield env_mb, label_mb


def unlabeled_mask(env_mb: EnvMinibatch,
                   feedback: FeedbackBuffer) -> np.ndarray:
    """True exactly where the transition's (episode, t) has no label."""
    if feedback.size == 0:
        return np.ones(len(env_mb.actions), dtype=bool)
    keys = env_mb.episode_ids * _SLOT_BASE + env_mb.ts
    known = feedback.slot_keys()
    pos = np.minimum(np.searchsorted(known, keys), len(known) - 1)
    return known[pos] != keys


class NStepAssembler:
    """Streaming n-step aggregation for the flat replay trainer: transitions
    mature once n future steps (or the episode end) are known.
    """

    def __init__(self, gamma: float, n_step: int):
        self.gamma = gamma
        self.n_step = n_step
        self.pending: list[Transition] = []

    def push(self, tr: Transition) -> list[tuple]:
        """Returns matured (transition, nstep_return, nstep_gamma, boot_obs)
        tuples, oldest first."""
        self.pending.append(tr)
        out = []
        if tr.done:
            while self.pending:
                out.append(self._emit())
            return out
        if len(self.pending) == self.n_step:
            out.append(self._emit())
        return out

    def flush(self) -> list[tuple]:
        """Mature everything pending (rollout ends mid-episode)."""
        out = []
        while self.pending:
            out.append(self._emit())
        return out

    def _emit(self):
        first = self.pending[0]
        ret = 0.0
        for k, tr in enumerate(self.pending):
            ret += (self.gamma ** k) * tr.reward
        last = self.pending[-1]
        gam = 0.0 if last.done else self.gamma ** len(self.pending)
        self.pending.pop(0)
        return first, ret, gam, last.next_state
