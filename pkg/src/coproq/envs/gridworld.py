"""Small cliff-walk gridworld for fast end-to-end checks.

8x8 grid, start at the bottom-left corner, goal at the bottom-right,
a cliff along the bottom row between them. Sparse reward: +1 at the
goal, -1 for stepping off the cliff, 0 otherwise. One-hot observations.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ..exceptions import ConfigurationError, UsageError
from .highway import EpisodeMetrics


class GridAction(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


GRID_ACTION_NAMES = [a.name for a in GridAction]

MOVES = {
    GridAction.UP: (-1, 0),
    GridAction.DOWN: (1, 0),
    GridAction.LEFT: (0, -1),
    GridAction.RIGHT: (0, 1),
}


@dataclass(frozen=True)
class GridworldConfig:
    size: int = 8
    time_limit: int = 64

    def __post_init__(self):
        if self.size < 3:
            raise ConfigurationError("grid too small for a cliff row")
        if self.time_limit < 1:
            raise ConfigurationError("time_limit must be >= 1")

    @property
    def start(self) -> tuple[int, int]:
        return (self.size - 1, 0)

    @property
    def goal(self) -> tuple[int, int]:
        return (self.size - 1, self.size - 1)

    def is_cliff(self, row: int, col: int) -> bool:
        return row == self.size - 1 and 0 < col < self.size - 1


def shortest_path_steps(config: GridworldConfig) -> int:
    """BFS distance from start to goal, stepping around the cliff."""
    dist = bfs_distances(config)
    d = dist[config.start]
    if not np.isfinite(d):
        raise ConfigurationError("goal unreachable")
    return int(d)


def bfs_distances(config: GridworldConfig) -> np.ndarray:
    """Moves-to-goal for every safe cell; inf where the goal is unreachable.

    Cliff cells get distance inf so greedy descent never routes through
    them. Used as a ground-truth oracle by tests and scripted labelers.
    """
    n = config.size
    dist = np.full((n, n), np.inf)
    gr, gc = config.goal
    dist[gr, gc] = 0.0
    queue = deque([(gr, gc)])
    while queue:
        r, c = queue.popleft()
        for dr, dc in MOVES.values():
            nr, nc = r + dr, c + dc
            if not (0 <= nr < n and 0 <= nc < n):
                continue
            if config.is_cliff(nr, nc):
                continue
            if np.isinf(dist[nr, nc]):
                dist[nr, nc] = dist[r, c] + 1.0
                queue.append((nr, nc))
    return dist


class GridworldEnv:
    def __init__(self, config: GridworldConfig | None = None):
        self.config = config or GridworldConfig()
        self._started = False
        self.done = False

    @property
    def action_count(self) -> int:
        return len(GridAction)

    @property
    def action_names(self) -> list[str]:
        return list(GRID_ACTION_NAMES)

    @property
    def obs_dim(self) -> int:
        return self.config.size * self.config.size

    def reset(self, seed: int = 0) -> np.ndarray:
        # layout is fixed; seed kept for interface parity
        self.pos = self.config.start
        self.t = 0
        self.done = False
        self._started = True
        self._fell = False
        self._reached_goal = False
        return self._observe()

    def step(self, action: int):
        if not self._started:
            raise UsageError("step before reset")
        if self.done:
            raise UsageError("step after episode end")
        cfg = self.config
        dr, dc = MOVES[GridAction(action)]
        r, c = self.pos
        nr, nc = r + dr, c + dc
        if 0 <= nr < cfg.size and 0 <= nc < cfg.size:
            self.pos = (nr, nc)
        self.t += 1

        reward = 0.0
        if cfg.is_cliff(*self.pos):
            reward = -1.0
            self._fell = True
            self.done = True
        elif self.pos == cfg.goal:
            reward = 1.0
            self._reached_goal = True
            self.done = True
        elif self.t >= cfg.time_limit:
            self.done = True
        return self._observe(), reward, self.done, None

    def _observe(self) -> np.ndarray:
        obs = np.zeros(self.config.size * self.config.size)
        obs[self.pos[0] * self.config.size + self.pos[1]] = 1.0
        return obs

    def render_frame(self) -> dict:
        return {
            "grid": self.config.size,
            "pos": [int(self.pos[0]), int(self.pos[1])],
            "goal": [int(self.config.goal[0]), int(self.config.goal[1])],
            "cliff": [[self.config.size - 1, c]
                      for c in range(1, self.config.size - 1)],
        }

    def metrics(self) -> EpisodeMetrics:
        if self.t == 0:
            raise UsageError("no steps taken yet")
        return EpisodeMetrics(
            crashed=self._fell,
            steps=self.t,
            distance=float(self.t),
            mean_speed=1.0,
            lane_change_ratio=0.0,
            mean_lane_position=1.0 if self._reached_goal else 0.0,
        )
