"""Environments, proxy rewards, and per-episode behavioral metrics."""

from .gridworld import (
    GRID_ACTION_NAMES,
    GridAction,
    GridworldConfig,
    GridworldEnv,
    bfs_distances,
    shortest_path_steps,
)
from .highway import (
    ACTION_NAMES,
    Action,
    EpisodeMetrics,
    HighwayConfig,
    HighwayEnv,
)
from .proxy import (
    PRESETS,
    Events,
    ProxyRewardConfig,
    proxy_from_json,
    proxy_reward,
    resolve_proxy,
)

__all__ = [
    "ACTION_NAMES",
    "Action",
    "EpisodeMetrics",
    "Events",
    "GRID_ACTION_NAMES",
    "GridAction",
    "GridworldConfig",
    "GridworldEnv",
    "HighwayConfig",
    "HighwayEnv",
    "PRESETS",
    "ProxyRewardConfig",
    "bfs_distances",
    "proxy_from_json",
    "proxy_reward",
    "resolve_proxy",
    "shortest_path_steps",
]
