"""Gym-style bridge between the simulator and the window-control agent.

Observation extraction (bytes in flight, cwnd, smoothed RTT, segments acked),
the three-action window adjustment, the linear throughput/latency reward, and
episode stepping on a fixed decision cadence. Also hosts the episode runners
used for evaluation of both controllers.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Callable, Optional

import numpy as np

from . import metrics
from .session import TcpSession
from .simnet import US_PER_SECOND, DumbbellConfig, Event, EventKind
from .tcp import ExternalWindowControl, NewReno

DEFAULT_INTERVAL_US = 10_000
RTT_REF_US = 100_000
SEGMENTS_ACKED_REF = 10.0
NORM_CLAMP = 10.0
THROUGHPUT_WINDOW_US = 100_000


class EpisodeFinished(Exception):
    """step() was called after the episode ended."""


class Action(IntEnum):
    # Order is fixed; it indexes the Q-network output.
    INCREASE_WINDOW = 0
    DECREASE_WINDOW = 1
    HOLD_WINDOW = 2


@dataclass(frozen=True)
class Observation:
    bytes_in_flight: int
    cwnd: int
    rtt_us: int  # most recent smoothed sample, 0 before the first measurement
    segments_acked: int


@dataclass(frozen=True)
class RewardParams:
    alpha: float = 1.0  # weight on throughput (Mbps)
    beta: float = 0.02  # weight on latency (ms)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    info: dict


def compute_reward(throughput_mbps, latency_ms, params: RewardParams):
    """Linear tradeoff: alpha * throughput - beta * latency."""
    return params.alpha * throughput_mbps - params.beta * latency_ms


def episode_seed(master_seed: int, episode_index: int) -> int:
    """Deterministic per-episode seed derived from the master seed."""
    ss = np.random.SeedSequence((master_seed, episode_index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class EpisodeRecord:
    """Traces and counters of one finished episode, ready for export."""

    controller: str
    seed: int
    config: DumbbellConfig
    interval_us: int
    cwnd_series: metrics.TraceSeries
    rtt_ms_series: metrics.TraceSeries
    delivered_series: metrics.TraceSeries
    delivered_bytes: int
    drops: int
    rewards: list[float]
    step_infos: list[dict]
    event_log_lines: Optional[list[str]] = None

    @property
    def duration_us(self) -> int:
        return self.config.duration_us

    def throughput_series(self) -> metrics.TraceSeries:
        out = metrics.throughput_over(
            self.delivered_series, THROUGHPUT_WINDOW_US, self.duration_us
        )
        out.name = "throughput_mbps"
        return out

    def run_result(self) -> metrics.RunResult:
        return metrics.run_result(
            controller=self.controller,
            seed=self.seed,
            config_fingerprint=self.config.fingerprint(),
            duration_us=self.duration_us,
            delivered_bytes=self.delivered_bytes,
            drops=self.drops,
            rtt_ms_series=self.rtt_ms_series,
        )


class CwndAgentEnv:
    """Episodic environment whose action is the cwnd adjustment.

    Each reset builds a fresh simulator and connection; the flow starts
    transmitting at time 0 during the first step, after the first action has
    been applied to the initial window.
    """

    state_dim = 4

    def __init__(
        self,
        cfg: DumbbellConfig,
        reward_params: RewardParams = RewardParams(),
        interval_us: int = DEFAULT_INTERVAL_US,
        master_seed: int = 0,
        max_app_bytes: Optional[int] = None,
        record_events: bool = False,
    ):
        cfg.validate()
        if interval_us <= 0:
            raise ValueError("decision interval must be > 0")
        self.cfg_template = cfg
        self.reward_params = reward_params
        self.interval_us = interval_us
        self.master_seed = master_seed
        self.max_app_bytes = max_app_bytes
        self.record_events = record_events
        # Reference in-flight volume: bottleneck bandwidth times 100 ms, in bytes.
        self._bdp_ref_bytes = cfg.bottleneck_bandwidth_bps * RTT_REF_US // (8 * US_PER_SECOND)
        self._episode_index = -1
        self._session: Optional[TcpSession] = None
        self._done = True

    @property
    def steps_per_episode(self) -> int:
        return -(-self.cfg_template.duration_us // self.interval_us)

    @property
    def episode_config(self) -> DumbbellConfig:
        return self._cfg

    def reset(self) -> Observation:
        self._episode_index += 1
        self._cfg = replace(
            self.cfg_template, seed=episode_seed(self.master_seed, self._episode_index)
        )
        self.delivered_series = metrics.TraceSeries("delivered_bytes")
        self._session = TcpSession(
            self._cfg,
            ExternalWindowControl(),
            record_events=self.record_events,
            on_delivery=lambda now, cum: self.delivered_series.record(now, float(cum)),
            max_app_bytes=self.max_app_bytes,
        )
        self.cwnd_series = metrics.TraceSeries("cwnd_bytes")
        self.rtt_ms_series = metrics.TraceSeries("srtt_ms")
        self._rewards: list[float] = []
        self._infos: list[dict] = []
        self._t = 0
        self._acked_mark = 0
        self._delivered_mark = 0
        self._drops_mark = 0
        self._done = False
        self.cwnd_series.record(0, float(self._session.sender.state.cwnd))
        self.rtt_ms_series.record(0, 0.0)
        return self.observe()

    def observe(self) -> Observation:
        """Snapshot of the four state fields; the acked counter resets on read."""
        sender = self._session.sender
        acked = sender.segments_acked_total - self._acked_mark
        self._acked_mark = sender.segments_acked_total
        return Observation(
            bytes_in_flight=sender.state.bytes_in_flight,
            cwnd=sender.state.cwnd,
            rtt_us=self._session.srtt_us,
            segments_acked=acked,
        )

    def apply_action(self, action: Action) -> None:
        state = self._session.sender.state
        if action == Action.INCREASE_WINDOW:
            state.cwnd += state.mss
        elif action == Action.DECREASE_WINDOW:
            state.cwnd = max(state.cwnd // 2, state.mss)
        # HOLD_WINDOW leaves cwnd unchanged.

    def step(self, action: Action) -> StepResult:
        if self._done:
            raise EpisodeFinished("episode is over; call reset()")
        sim = self._session.sim
        self.apply_action(action)
        if not self._session._started:
            self._session.start()
        else:
            # A grown window may allow sends right away.
            self._session.sender.try_send(sim.now)
        target = min(self._t + self.interval_us, self._cfg.duration_us)
        sim.schedule(
            Event(at=target, kind=EventKind.AGENT_STEP, node="source",
                  label=f"step={len(self._rewards)}")
        )
        sim.run_until(target)
        window_us = target - self._t
        delivered = self._session.delivered_bytes
        step_bytes = delivered - self._delivered_mark
        self._delivered_mark = delivered
        drops = self._session.drops - self._drops_mark
        self._drops_mark = self._session.drops
        throughput_mbps = step_bytes * 8 / window_us
        latency_ms = self._session.srtt_us / 1000.0
        reward = compute_reward(throughput_mbps, latency_ms, self.reward_params)
        self._t = target
        self._done = target >= self._cfg.duration_us
        self.cwnd_series.record(target, float(self._session.sender.state.cwnd))
        self.rtt_ms_series.record(target, latency_ms)
        info = {
            "throughput_mbps": throughput_mbps,
            "latency_ms": latency_ms,
            "drops_this_step": drops,
        }
        self._rewards.append(reward)
        self._infos.append(info)
        return StepResult(self.observe(), reward, self._done, info)

    def normalize(self, obs: Observation) -> np.ndarray:
        """Scale the observation into roughly unit range, clamped to [0, 10]."""
        raw = np.array(
            [
                obs.bytes_in_flight / self._bdp_ref_bytes,
                obs.cwnd / self._bdp_ref_bytes,
                obs.rtt_us / RTT_REF_US,
                obs.segments_acked / SEGMENTS_ACKED_REF,
            ],
            dtype=np.float64,
        )
        return np.clip(raw, 0.0, NORM_CLAMP)

    def episode_record(self, controller: str = "rl") -> EpisodeRecord:
        log = (
            self._session.sim.event_log_lines() if self.record_events else None
        )
        return EpisodeRecord(
            controller=controller,
            seed=self.master_seed,
            config=self._cfg,
            interval_us=self.interval_us,
            cwnd_series=self.cwnd_series,
            rtt_ms_series=self.rtt_ms_series,
            delivered_series=self.delivered_series,
            delivered_bytes=self._session.delivered_bytes,
            drops=self._session.drops,
            rewards=list(self._rewards),
            step_infos=list(self._infos),
            event_log_lines=log,
        )


def run_baseline_episode(
    cfg: DumbbellConfig,
    interval_us: int = DEFAULT_INTERVAL_US,
    record_events: bool = False,
) -> EpisodeRecord:
    """One New Reno episode sampled on the same cadence as agent runs."""
    cfg.validate()
    delivered = metrics.TraceSeries("delivered_bytes")
    session = TcpSession(
        cfg,
        NewReno(),
        record_events=record_events,
        on_delivery=lambda now, cum: delivered.record(now, float(cum)),
    )
    cwnd_series = metrics.TraceSeries("cwnd_bytes")
    rtt_series = metrics.TraceSeries("srtt_ms")
    cwnd_series.record(0, float(session.sender.state.cwnd))
    rtt_series.record(0, 0.0)
    session.start()
    t = 0
    while t < cfg.duration_us:
        t = min(t + interval_us, cfg.duration_us)
        session.run_until(t)
        cwnd_series.record(t, float(session.sender.state.cwnd))
        rtt_series.record(t, session.srtt_us / 1000.0)
    return EpisodeRecord(
        controller="newreno",
        seed=cfg.seed,
        config=cfg,
        interval_us=interval_us,
        cwnd_series=cwnd_series,
        rtt_ms_series=rtt_series,
        delivered_series=delivered,
        delivered_bytes=session.delivered_bytes,
        drops=session.drops,
        rewards=[],
        step_infos=[],
        event_log_lines=session.sim.event_log_lines() if record_events else None,
    )


def run_policy_episode(
    cfg: DumbbellConfig,
    reward_params: RewardParams,
    policy: Callable[[np.ndarray], int],
    interval_us: int = DEFAULT_INTERVAL_US,
    record_events: bool = False,
) -> EpisodeRecord:
    """One greedy episode driven by `policy` (normalized state -> action index)."""
    env = CwndAgentEnv(
        cfg,
        reward_params,
        interval_us,
        master_seed=cfg.seed,
        record_events=record_events,
    )
    obs = env.reset()
    while True:
        action = Action(policy(env.normalize(obs)))
        result = env.step(action)
        obs = result.observation
        if result.done:
            break
    return env.episode_record()
