"""Configurable proxy rewards over per-step driving events.

A proxy config is a set of event weights plus an optional min-max
normalization into [-1, 1], where the min (max) raw value is the sum of the
negative (positive) weights. Presets cover the named reward sets for both
labeler styles; custom configs load from JSON with unknown keys rejected.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..exceptions import ConfigurationError


@dataclass(frozen=True)
class Events:
    """What happened in one env step, as far as rewards are concerned."""

    changed_lane: bool
    high_speed: bool
    low_speed: bool
    crashed: bool
    lane_position: float = 0.0  # normalized lane index in [0, 1]


@dataclass(frozen=True)
class ProxyRewardConfig:
    name: str
    change_lane: float = 0.0
    high_speed: float = 0.0
    low_speed: float = 0.0
    crash: float = 0.0
    normalized_lane_index: float = 0.0
    normalize: bool = True

    def bounds(self) -> tuple[float, float]:
        weights = (self.change_lane, self.high_speed, self.low_speed,
                   self.crash, self.normalized_lane_index)
        lo = sum(w for w in weights if w < 0)
        hi = sum(w for w in weights if w > 0)
        return lo, hi


def proxy_reward(events: Events, config: ProxyRewardConfig) -> float:
    raw = (config.change_lane * events.changed_lane
           + config.high_speed * events.high_speed
           + config.low_speed * events.low_speed
           + config.crash * events.crashed
           + config.normalized_lane_index * events.lane_position)
    if not config.normalize:
        return raw
    lo, hi = config.bounds()
    if hi == lo:
        raise ConfigurationError(
            f"proxy {config.name!r}: min-max range is empty (all weights 0?)"
        )
    return 2.0 * (raw - lo) / (hi - lo) - 1.0


# the five named reward sets for the lane-change-style labeler, plus the
# lane-index variants used by the right-lane-style labeler
PRESETS = {
    "PRExp": ProxyRewardConfig("PRExp", change_lane=0.2, high_speed=1.5,
                               low_speed=-0.5, crash=-1.7),
    "PR1": ProxyRewardConfig("PR1", high_speed=2.0, low_speed=-1.0,
                             crash=-1.0),
    "PR2": ProxyRewardConfig("PR2", change_lane=0.2, high_speed=0.8,
                             crash=-1.0),
    "PR3": ProxyRewardConfig("PR3", crash=-1.0),
    "PR4": ProxyRewardConfig("PR4", crash=-1.0, normalize=False),
    "PRExp-lane": ProxyRewardConfig("PRExp-lane", change_lane=0.2,
                                    normalized_lane_index=0.5,
                                    high_speed=1.7, low_speed=-0.5,
                                    crash=-1.9),
    "PR1-lane": ProxyRewardConfig("PR1-lane", normalized_lane_index=0.5,
                                  high_speed=1.5, low_speed=-0.5,
                                  crash=-1.5),
    "PR2-lane": ProxyRewardConfig("PR2-lane", normalized_lane_index=0.2,
                                  high_speed=0.8, crash=-1.0),
}

_JSON_KEYS = {"change_lane", "high_speed", "low_speed", "crash",
              "normalized_lane_index", "normalization"}


def proxy_from_json(name: str, doc: dict) -> ProxyRewardConfig:
    """Build a config from a JSON object; unknown keys are rejected."""
    unknown = set(doc) - _JSON_KEYS
    if unknown:
        raise ConfigurationError(
            f"proxy {name!r}: unknown keys {sorted(unknown)}"
        )
    norm = doc.get("normalization", "minmax")
    if norm in ("minmax", "[-1,1]"):
        normalize = True
    elif norm is None or norm == "none":
        normalize = False
    else:
        raise ConfigurationError(
            f"proxy {name!r}: normalization must be 'minmax' or null, "
            f"got {norm!r}"
        )
    return ProxyRewardConfig(
        name=name,
        change_lane=float(doc.get("change_lane", 0.0)),
        high_speed=float(doc.get("high_speed", 0.0)),
        low_speed=float(doc.get("low_speed", 0.0)),
        crash=float(doc.get("crash", 0.0)),
        normalized_lane_index=float(doc.get("normalized_lane_index", 0.0)),
        normalize=normalize,
    )


def resolve_proxy(spec) -> ProxyRewardConfig:
    """Accepts a preset name or a {name: weights-object} JSON document."""
    if isinstance(spec, str):
        if spec not in PRESETS:
            raise ConfigurationError(
                f"unknown proxy preset {spec!r}; "
                f"known: {sorted(PRESETS)} or a custom JSON object"
            )
        return PRESETS[spec]
    if isinstance(spec, dict):
        if len(spec) != 1:
            raise ConfigurationError(
                "custom proxy must be a single {name: weights} object"
            )
        name, doc = next(iter(spec.items()))
        return proxy_from_json(name, doc)
    raise ConfigurationError(f"bad proxy spec {spec!r}")
