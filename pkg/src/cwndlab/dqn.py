"""Deep Q-Network agent built from scratch on numpy.

Multilayer Q-network with rectifier hiddens and analytic backpropagation,
uniform experience replay, epsilon-greedy exploration with multiplicative
decay, a periodically synchronized target network, and the TD training step.
Gradients flow only through the Q-value of the taken action.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

N_ACTIONS = 3
STATE_DIM = 4

POLICY_MAGIC = b"CWNDDQN1"
POLICY_VERSION = 1
_MAX_LAYER_DIM = 1_000_000


class DqnError(Exception):
    pass


class BufferTooSmall(DqnError):
    """Training requested before the replay buffer reached the warmup size."""


class MalformedPolicyFile(DqnError):
    pass


class Transition(NamedTuple):
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


class QNetwork:
    """Fully connected net: weights[i] has shape (fan_in, fan_out)."""

    def __init__(self, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.weights = weights
        self.biases = biases

    @classmethod
    def initialized(cls, layer_sizes: list[int], rng: np.random.Generator) -> "QNetwork":
        """Uniform init in +-sqrt(6/(fan_in+fan_out)); biases start at zero."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "QNetwork":
        return QNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        return h @ self.weights[-1] + self.biases[-1]

    def forward_batch(self, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Batch forward keeping the post-activation of every layer for backprop."""
        activations = [np.asarray(X, dtype=np.float64)]
        h = activations[0]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            activations.append(h)
        q = h @ self.weights[-1] + self.biases[-1]
        return q, activations

    def assert_finite(self) -> None:
        for arr in self.weights + self.biases:
            if not np.all(np.isfinite(arr)):
                raise FloatingPointError("network parameters diverged (NaN/Inf)")


def forward(net: QNetwork, state: np.ndarray) -> np.ndarray:
    return net.forward(state)


def select_action(net: QNetwork, state: np.ndarray, eps: float,
                  rng: Optional[np.random.Generator] = None) -> int:
    """Epsilon-greedy draw; argmax ties resolve to the lowest action index."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must be in [0, 1]")
    if eps > 0.0:
        if rng is None:
            raise ValueError("rng required when eps > 0")
        if rng.random() < eps:
            return int(rng.integers(0, N_ACTIONS))
    return int(np.argmax(net.forward(state)))


def greedy_policy(net: QNetwork) -> Callable[[np.ndarray], int]:
    return lambda state: int(np.argmax(net.forward(state)))


class ReplayBuffer:
    """Ring buffer; once full, new entries overwrite the oldest."""

    def __init__(self, capacity: int = 50_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._data: list[Transition] = []
        self._next = 0

    def push(self, transition: Transition) -> None:
        if len(self._data) < self.capacity:
            self._data.append(transition)
        else:
            self._data[self._next] = transition
        self._next = (self._next + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._data)

    def contents(self) -> list[Transition]:
        return list(self._data)

    def sample(self, rng: np.random.Generator, k: int) -> list[Transition]:
        """Uniform over stored entries (with replacement)."""
        if not self._data:
            raise BufferTooSmall("replay buffer is empty")
        idx = rng.integers(0, len(self._data), size=k)
        return [self._data[i] for i in idx]


@dataclass(frozen=True)
class EpsilonSchedule:
    eps_start: float = 1.0
    eps_min: float = 0.05
    decay: float = 0.999  # multiplicative, per environment step

    def value(self, step: int) -> float:
        return max(self.eps_min, self.eps_start * self.decay**step)


@dataclass
class TrainConfig:
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
    huber_delta: Optional[float] = None  # None = plain squared TD error

    def validate(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if not self.batch_size <= self.warmup <= self.buffer_capacity:
            raise ValueError("need batch_size <= warmup <= buffer_capacity")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")

    def schedule(self) -> EpsilonSchedule:
        return EpsilonSchedule(self.eps_start, self.eps_min, self.eps_decay)


def td_targets(target_net: QNetwork, batch: list[Transition], gamma: float) -> np.ndarray:
    """Bellman targets: r for terminal transitions, else r + gamma * max Q(s')."""
    if not batch:
        raise ValueError("batch must be non-empty")
    rewards = np.array([t.reward for t in batch])
    done = np.array([t.done for t in batch])
    next_states = np.stack([t.next_state for t in batch])
    q_next, _ = target_net.forward_batch(next_states)
    return rewards + gamma * q_next.max(axis=1) * (~done)


def loss_and_gradients(
    net: QNetwork,
    states: np.ndarray,
    actions: np.ndarray,
    targets: np.ndarray,
    huber_delta: Optional[float] = None,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean TD loss over the batch plus analytic parameter gradients.

    Only the output of the taken action receives error signal; other
    action heads get exactly zero gradient.
    """
    q, activations = net.forward_batch(states)
    n = len(targets)
    rows = np.arange(n)
    err = q[rows, actions] - targets
    if huber_delta is None:
        loss = float(np.mean(err**2))
        dper = 2.0 * err / n
    else:
        small = np.abs(err) <= huber_delta
        loss = float(
            np.mean(np.where(small, err**2, huber_delta * (2 * np.abs(err) - huber_delta)))
        )
        dper = np.where(small, 2.0 * err, 2.0 * huber_delta * np.sign(err)) / n
    dq = np.zeros_like(q)
    dq[rows, actions] = dper
    grad_w: list[np.ndarray] = [np.empty(0)] * len(net.weights)
    grad_b: list[np.ndarray] = [np.empty(0)] * len(net.biases)
    delta = dq
    for layer in range(len(net.weights) - 1, -1, -1):
        grad_w[layer] = activations[layer].T @ delta
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            # Rectifier gate: the stored activation is zero exactly where
            # the pre-activation was clipped.
            delta = (delta @ net.weights[layer].T) * (activations[layer] > 0)
    return loss, grad_w, grad_b


def train_step(
    net: QNetwork,
    target_net: QNetwork,
    buf: ReplayBuffer,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> float:
    """Sample a minibatch, descend the TD loss, return the pre-update loss."""
    if len(buf) < cfg.warmup:
        raise BufferTooSmall(f"buffer has {len(buf)} < warmup {cfg.warmup}")
    batch = buf.sample(rng, cfg.batch_size)
    states = np.stack([t.state for t in batch])
    actions = np.array([t.action for t in batch])
    targets = td_targets(target_net, batch, cfg.gamma)
    loss, grad_w, grad_b = loss_and_gradients(
        net, states, actions, targets, cfg.huber_delta
    )
    if cfg.momentum > 0.0:
        vel = getattr(net, "_velocity", None)
        if vel is None:
            vel = (
                [np.zeros_like(w) for w in net.weights],
                [np.zeros_like(b) for b in net.biases],
            )
            net._velocity = vel
        for w, v, g in zip(net.weights, vel[0], grad_w):
            v *= cfg.momentum
            v += g
            w -= cfg.learning_rate * v
        for b, v, g in zip(net.biases, vel[1], grad_b):
            v *= cfg.momentum
            v += g
            b -= cfg.learning_rate * v
    else:
        for w, g in zip(net.weights, grad_w):
            w -= cfg.learning_rate * g
        for b, g in zip(net.biases, grad_b):
            b -= cfg.learning_rate * g
    net.assert_finite()
    return loss


def sync_target(net: QNetwork, target_net: QNetwork) -> None:
    """Target parameters become an exact copy of the online parameters."""
    target_net.weights = [w.copy() for w in net.weights]
    target_net.biases = [b.copy() for b in net.biases]


@dataclass
class TrainResult:
    network: QNetwork
    episode_rewards: list[float] = field(default_factory=list)
    episode_epsilons: list[float] = field(default_factory=list)
    episode_losses: list[float] = field(default_factory=list)


def train(env, cfg: TrainConfig) -> TrainResult:
    """Run the full training loop against a reset/step/normalize environment.

    Deterministic: all randomness flows from named substreams of the master
    seed (network init, exploration draws, replay sampling); the environment
    seeds itself from its own master seed.
    """
    cfg.validate()
    init_ss, explore_ss, replay_ss = np.random.SeedSequence(cfg.master_seed).spawn(3)
    rng_explore = np.random.default_rng(explore_ss)
    rng_replay = np.random.default_rng(replay_ss)
    state_dim = getattr(env, "state_dim", STATE_DIM)
    layer_sizes = [state_dim, *cfg.hidden_sizes, N_ACTIONS]
    net = QNetwork.initialized(layer_sizes, np.random.default_rng(init_ss))
    target_net = net.copy()
    buf = ReplayBuffer(cfg.buffer_capacity)
    schedule = cfg.schedule()
    result = TrainResult(network=net)
    global_step = 0
    for _ in range(cfg.episodes):
        obs = env.reset()
        state = env.normalize(obs)
        result.episode_epsilons.append(schedule.value(global_step))
        total_reward = 0.0
        losses: list[float] = []
        done = False
        while not done:
            eps = schedule.value(global_step)
            action = select_action(net, state, eps, rng_explore)
            res = env.step(action)
            next_state = env.normalize(res.observation)
            buf.push(Transition(state, action, float(res.reward), next_state, res.done))
            global_step += 1
            if len(buf) >= cfg.warmup:
                losses.append(train_step(net, target_net, buf, cfg, rng_replay))
            if global_step % cfg.target_sync_interval == 0:
                sync_target(net, target_net)
            total_reward += res.reward
            state = next_state
            done = res.done
        result.episode_rewards.append(total_reward)
        result.episode_losses.append(sum(losses) / len(losses) if losses else 0.0)
    return result


# -- policy file I/O ---------------------------------------------------------
# Layout (little-endian): magic "CWNDDQN1", version u32, layer count u32,
# then per layer: rows u32, cols u32, rows*cols f64 weights (row-major),
# cols f64 biases.


def save_policy(net: QNetwork, path) -> None:
    blob = bytearray()
    blob += POLICY_MAGIC
    blob += struct.pack("<II", POLICY_VERSION, len(net.weights))
    for w, b in zip(net.weights, net.biases):
        rows, cols = w.shape
        blob += struct.pack("<II", rows, cols)
        blob += np.ascontiguousarray(w, dtype="<f8").tobytes()
        blob += np.ascontiguousarray(b, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def load_policy(path) -> QNetwork:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(POLICY_MAGIC) + 8 or blob[: len(POLICY_MAGIC)] != POLICY_MAGIC:
        raise MalformedPolicyFile("bad magic")
    off = len(POLICY_MAGIC)
    version, n_layers = struct.unpack_from("<II", blob, off)
    off += 8
    if version != POLICY_VERSION:
        raise MalformedPolicyFile(f"unsupported version {version}")
    if not 1 <= n_layers <= 64:
        raise MalformedPolicyFile(f"implausible layer count {n_layers}")
    weights, biases = [], []
    for _ in range(n_layers):
        if off + 8 > len(blob):
            raise MalformedPolicyFile("truncated layer header")
        rows, cols = struct.unpack_from("<II", blob, off)
        off += 8
        if not (1 <= rows <= _MAX_LAYER_DIM and 1 <= cols <= _MAX_LAYER_DIM):
            raise MalformedPolicyFile(f"implausible layer shape {rows}x{cols}")
        need = (rows * cols + cols) * 8
        if off + need > len(blob):
            raise MalformedPolicyFile("payload shorter than declared shapes")
        w = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=off)
        off += rows * cols * 8
        b = np.frombuffer(blob, dtype="<f8", count=cols, offset=off)
        off += cols * 8
        weights.append(w.reshape(rows, cols).copy())
        biases.append(b.copy())
    if off != len(blob):
        raise MalformedPolicyFile("trailing bytes after last layer")
    for prev, nxt in zip(weights[:-1], weights[1:]):
        if prev.shape[1] != nxt.shape[0]:
            raise MalformedPolicyFile("layer shapes do not chain")
    return QNetwork(weights, biases)
