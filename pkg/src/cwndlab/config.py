"""Plain-text key=value experiment configuration.

One key per line, `#` starts a comment, units are part of the key name
(`_bps`, `_us`, `_ms`, `_s`). Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .rlenv import RewardParams
from .simnet import US_PER_SECOND, DumbbellConfig, InvalidConfig
from .dqn import TrainConfig


class ConfigError(Exception):
    pass


def _parse_int(raw: str) -> int:
    return int(raw, 0)


def _parse_float(raw: str) -> float:
    return float(raw)


def _parse_str(raw: str) -> str:
    return raw


def _parse_int_list(raw: str) -> tuple[int, ...]:
    items = [p.strip() for p in raw.split(",") if p.strip()]
    if not items:
        raise ValueError("empty list")
    return tuple(int(p) for p in items)


# key -> (parser, unit/help)
KEY_SPECS = {
    "access_bandwidth_bps": (_parse_int, "access link rate, bits/s"),
    "bottleneck_bandwidth_bps": (_parse_int, "bottleneck link rate, bits/s"),
    "access_prop_delay_us": (_parse_int, "per access link propagation delay, microseconds"),
    "bottleneck_prop_delay_us": (_parse_int, "bottleneck propagation delay, microseconds"),
    "queue_capacity_pkts": (_parse_int, "drop-tail queue depth, packets"),
    "duration_s": (_parse_float, "episode length, seconds"),
    "alpha": (_parse_float, "reward weight on throughput (Mbps)"),
    "beta": (_parse_float, "reward weight on latency (ms)"),
    "decision_interval_ms": (_parse_float, "agent decision cadence, milliseconds"),
    "gamma": (_parse_float, "discount factor"),
    "learning_rate": (_parse_float, "gradient descent step size"),
    "batch_size": (_parse_int, "replay minibatch size"),
    "target_sync_interval": (_parse_int, "steps between target network syncs"),
    "warmup": (_parse_int, "buffer size required before training starts"),
    "buffer_capacity": (_parse_int, "replay buffer capacity"),
    "episodes": (_parse_int, "training episode count"),
    "master_seed": (_parse_int, "seed for all training randomness"),
    "eps_start": (_parse_float, "initial exploration rate"),
    "eps_min": (_parse_float, "exploration rate floor"),
    "eps_decay": (_parse_float, "multiplicative exploration decay per step"),
    "hidden_sizes": (_parse_int_list, "hidden layer widths, comma separated"),
    "momentum": (_parse_float, "SGD momentum (0 disables)"),
    "huber_delta": (_parse_float, "robust loss threshold (0 = squared loss)"),
    "seeds": (_parse_int_list, "evaluation seeds, comma separated"),
    "controller": (_parse_str, "newreno or rl"),
    "policy_path": (_parse_str, "path to a saved policy file"),
    "output_dir": (_parse_str, "directory for run artifacts"),
}

OUTPUT_DIR_ENV = "CWNDLAB_OUT"


@dataclass
class ExperimentConfig:
    """Union of topology, reward, and training settings plus run plumbing."""

    access_bandwidth_bps: int = 10_000_000
    bottleneck_bandwidth_bps: int = 2_000_000
    access_prop_delay_us: int = 2_000
    bottleneck_prop_delay_us: int = 10_000
    queue_capacity_pkts: int = 100
    duration_s: float = 10.0
    alpha: float = 1.0
    beta: float = 0.02
    decision_interval_ms: float = 10.0
    gamma: float = 0.95
    learning_rate: float = 1e-3
    batch_size: int = 32
    target_sync_interval: int = 500
    warmup: int = 1000
    buffer_capacity: int = 50_000
    episodes: int = 150
    master_seed: int = 1
    eps_start: float = 1.0
    eps_min: float = 0.05
    eps_decay: float = 0.999
    hidden_sizes: tuple[int, ...] = (64, 64)
    momentum: float = 0.0
    huber_delta: float = 0.0
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    controller: str = "rl"
    policy_path: str = ""
    output_dir: str = ""

    @property
    def duration_us(self) -> int:
        return round(self.duration_s * US_PER_SECOND)

    @property
    def interval_us(self) -> int:
        return round(self.decision_interval_ms * 1000)

    def dumbbell_config(self, seed: int | None = None) -> DumbbellConfig:
        return DumbbellConfig(
            access_bandwidth_bps=self.access_bandwidth_bps,
            bottleneck_bandwidth_bps=self.bottleneck_bandwidth_bps,
            access_prop_delay_us=self.access_prop_delay_us,
            bottleneck_prop_delay_us=self.bottleneck_prop_delay_us,
            queue_capacity=self.queue_capacity_pkts,
            duration_us=self.duration_us,
            seed=self.master_seed if seed is None else seed,
        )

    def reward_params(self) -> RewardParams:
        return RewardParams(alpha=self.alpha, beta=self.beta)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            gamma=self.gamma,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            target_sync_interval=self.target_sync_interval,
            warmup=self.warmup,
            buffer_capacity=self.buffer_capacity,
            episodes=self.episodes,
            master_seed=self.master_seed,
            eps_start=self.eps_start,
            eps_min=self.eps_min,
            eps_decay=self.eps_decay,
            hidden_sizes=tuple(self.hidden_sizes),
            momentum=self.momentum,
            huber_delta=self.huber_delta if self.huber_delta > 0 else None,
        )

    def validate(self) -> None:
        try:
            self.dumbbell_config().validate()
            self.reward_params()
            self.train_config().validate()
        except (ValueError, InvalidConfig) as exc:
            raise ConfigError(str(exc)) from exc
        if self.interval_us <= 0:
            raise ConfigError("decision_interval_ms must be > 0")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.controller not in ("newreno", "rl"):
            raise ConfigError(f"unknown controller {self.controller!r}")

    def resolved_output_dir(self) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        env = os.environ.get(OUTPUT_DIR_ENV)
        return Path(env) if env else Path("runs")


def parse_config_file(path) -> dict:
    """Read key=value lines into typed values; unknown keys are errors."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, _, rhs = line.partition("=")
        key, rhs = key.strip(), rhs.strip()
        if key not in KEY_SPECS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        parser, _ = KEY_SPECS[key]
        try:
            values[key] = parser(rhs)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def resolve(file_values: dict, overrides: dict) -> ExperimentConfig:
    """Defaults < config file < command-line flags."""
    cfg = ExperimentConfig()
    for source in (file_values, overrides):
        for key, value in source.items():
            if value is None:
                continue
            if key not in KEY_SPECS:
                raise ConfigError(f"unknown key {key!r}")
            setattr(cfg, key, value)
    cfg.validate()
    return cfg


def manifest_text(cfg: ExperimentConfig) -> str:
    """The fully resolved configuration in config-file form (re-runnable)."""
    lines = ["# resolved run configuration"]
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
