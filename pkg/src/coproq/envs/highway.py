"""Highway-lite: a deterministic-given-seed lane-driving environment.

Five lanes, forty constant-speed lane-keeping traffic vehicles placed ahead
of the ego at reset, 1 Hz decisions, 50-step episodes. The ego picks from
five meta-actions; a crash is proximity in the same lane. Observations are
five feature rows (ego + 4 nearest neighbors), 35 floats in [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ..exceptions import ConfigurationError, UsageError
from .proxy import PRESETS, Events, ProxyRewardConfig, proxy_reward


class Action(IntEnum):
    LANE_LEFT = 0
    LANE_RIGHT = 1
    FASTER = 2
    SLOWER = 3
    IDLE = 4


ACTION_NAMES = [a.name for a in Action]

FEATURES_PER_ROW = 7  # presence, x, y, vx, vy, cos_h, sin_h


@dataclass(frozen=True)
class HighwayConfig:
    lanes: int = 5
    vehicles: int = 40
    time_limit: int = 50
    policy_frequency: float = 1.0
    speed_min: float = 19.0
    speed_max: float = 30.0
    high_speed_threshold: float = 21.0
    traffic_speed_min: float = 19.0
    traffic_speed_max: float = 27.0
    crash_gap: float = 10.0
    speed_step: float = 2.0
    perception: float = 100.0
    observed_rows: int = 5
    spawn_gap_min: float = 15.0
    spawn_gap_max: float = 45.0

    def __post_init__(self):
        if self.lanes < 2:
            raise ConfigurationError("need at least 2 lanes")
        if self.time_limit < 1:
            raise ConfigurationError("time_limit must be >= 1")
        if self.speed_min >= self.speed_max:
            raise ConfigurationError("speed range is empty")
        if self.observed_rows < 1:
            raise ConfigurationError("need at least the ego row")


@dataclass
class EpisodeMetrics:
    crashed: bool
    steps: int
    distance: float
    mean_speed: float
    lane_change_ratio: float
    mean_lane_position: float


class HighwayEnv:
    def __init__(self, config: HighwayConfig | None = None,
                 proxy: ProxyRewardConfig | None = None):
        self.config = config or HighwayConfig()
        self.proxy = proxy or PRESETS["PRExp"]
        self._started = False
        self.done = False

    @property
    def action_count(self) -> int:
        return len(Action)

    @property
    def action_names(self) -> list[str]:
        return list(ACTION_NAMES)

    @property
    def obs_dim(self) -> int:
        return self.config.observed_rows * FEATURES_PER_ROW

    def reset(self, seed: int) -> np.ndarray:
        cfg = self.config
        rng = np.random.default_rng(seed)
        self.ego_lane = int(rng.integers(cfg.lanes))
        self.ego_speed = cfg.speed_min + 2.0
        self.ego_x = 0.0
        gaps = rng.uniform(cfg.spawn_gap_min, cfg.spawn_gap_max,
                           size=cfg.vehicles)
        self.veh_x = self.ego_x + np.cumsum(gaps)
        self.veh_lane = rng.integers(0, cfg.lanes, size=cfg.vehicles)
        self.veh_speed = rng.uniform(cfg.traffic_speed_min,
                                     cfg.traffic_speed_max,
                                     size=cfg.vehicles)
        self.t = 0
        self.done = False
        self._started = True
        self._crashed = False
        self._distance = 0.0
        self._speed_sum = 0.0
        self._lane_pos_sum = 0.0
        self._lane_change_actions = 0
        return self._observe()

    def step(self, action: int):
        if not self._started:
            raise UsageError("step before reset")
        if self.done:
            raise UsageError("step after episode end")
        cfg = self.config
        action = Action(action)
        lane_before = self.ego_lane
        if action == Action.LANE_LEFT:
            self.ego_lane = max(0, self.ego_lane - 1)
        elif action == Action.LANE_RIGHT:
            self.ego_lane = min(cfg.lanes - 1, self.ego_lane + 1)
        elif action == Action.FASTER:
            self.ego_speed = min(cfg.speed_max,
                                 self.ego_speed + cfg.speed_step)
        elif action == Action.SLOWER:
            self.ego_speed = max(cfg.speed_min,
                                 self.ego_speed - cfg.speed_step)
        changed_lane = self.ego_lane != lane_before

        dt = 1.0 / cfg.policy_frequency
        self.ego_x += self.ego_speed * dt
        self.veh_x += self.veh_speed * dt

        same_lane = self.veh_lane == self.ego_lane
        crashed = bool(np.any(
            same_lane & (np.abs(self.veh_x - self.ego_x) < cfg.crash_gap)))

        self.t += 1
        self.done = crashed or self.t >= cfg.time_limit
        lane_position = self.ego_lane / (cfg.lanes - 1)
        events = Events(
            changed_lane=changed_lane,
            high_speed=self.ego_speed >= cfg.high_speed_threshold,
            low_speed=self.ego_speed < cfg.high_speed_threshold,
            crashed=crashed,
            lane_position=lane_position,
        )
        reward = proxy_reward(events, self.proxy)

        self._crashed = crashed
        self._distance += self.ego_speed * dt
        self._speed_sum += self.ego_speed
        self._lane_pos_sum += lane_position
        if action in (Action.LANE_LEFT, Action.LANE_RIGHT):
            self._lane_change_actions += 1
        return self._observe(), reward, self.done, events

    def _observe(self) -> np.ndarray:
        cfg = self.config
        obs = np.zeros((cfg.observed_rows, FEATURES_PER_ROW))
        lane_span = cfg.lanes - 1
        speed_span = cfg.speed_max - cfg.speed_min
        obs[0] = [1.0, 0.0,
                  2.0 * self.ego_lane / lane_span - 1.0,
                  2.0 * (self.ego_speed - cfg.speed_min) / speed_span - 1.0,
                  0.0, 1.0, 0.0]
        dx = self.veh_x - self.ego_x
        in_range = np.flatnonzero(np.abs(dx) <= cfg.perception)
        # nearest first; stable sort keeps vehicle order deterministic on ties
        order = in_range[np.argsort(np.abs(dx[in_range]), kind="stable")]
        for row, i in enumerate(order[:cfg.observed_rows - 1], start=1):
            rel_speed = (self.veh_speed[i] - self.ego_speed) / speed_span
            obs[row] = [1.0,
                        dx[i] / cfg.perception,
                        (self.veh_lane[i] - self.ego_lane) / lane_span,
                        np.clip(rel_speed, -1.0, 1.0),
                        0.0, 1.0, 0.0]
        return obs.ravel()

    def render_frame(self) -> dict:
        """Structured world state for the labeling console."""
        return {
            "ego": {"lane": int(self.ego_lane),
                    "x": round(float(self.ego_x), 2),
                    "speed": round(float(self.ego_speed), 2)},
            "vehicles": [
                {"lane": int(self.veh_lane[i]),
                 "x": round(float(self.veh_x[i]), 2),
                 "speed": round(float(self.veh_speed[i]), 2)}
                for i in range(self.config.vehicles)
            ],
        }

    def metrics(self) -> EpisodeMetrics:
        if self.t == 0:
            raise UsageError("no steps taken yet")
        return EpisodeMetrics(
            crashed=self._crashed,
            steps=self.t,
            distance=self._distance,
            mean_speed=self._speed_sum / self.t,
            lane_change_ratio=self._lane_change_actions / self.t,
            mean_lane_position=self._lane_pos_sum / self.t,
        )
