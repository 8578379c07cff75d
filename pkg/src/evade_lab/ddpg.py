"""Deep deterministic policy gradient over conflict episodes."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import nn
from .env import (ACTION_BOUND, DT, REWARD_CLIP, Episode, RewardKind, Transition,
                  transition_at)

log = logging.getLogger(__name__)

STATE_DIM = 6
ACTION_DIM = 2


@dataclass
class DdpgConfig:
    actor_lr: float = 5e-4
    critic_lr: float = 1e-3
    gamma: float = 0.9
    tau: float = 0.01
    buffer_size: int = 10_000
    batch_size: int = 256
    hidden: tuple = (256, 256)
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    reward_clip: Optional[float] = REWARD_CLIP
    dt: float = DT


class OuNoise:
    """Ornstein-Uhlenbeck process with a unit time step."""

    def __init__(self, size: int = ACTION_DIM, theta: float = 0.15, sigma: float = 0.2,
                 mu: float = 0.0):
        self.size = size
        self.theta = theta
        self.sigma = sigma
        self.mu = mu
        self.reset()

    def reset(self) -> None:
        self.state = np.full(self.size, self.mu, dtype=float)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        x = self.state
        self.state = x + self.theta * (self.mu - x) + self.sigma * rng.standard_normal(self.size)
        return self.state.copy()


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions with FIFO eviction."""

    def __init__(self, capacity: int = 10_000, state_dim: int = STATE_DIM,
                 action_dim: int = ACTION_DIM):
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, state_dim))
        self.terminal = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._next = 0

    def __len__(self):
        return self.size

    def push(self, tr: Transition) -> None:
        i = self._next
        self.s[i] = tr.s
        self.a[i] = tr.a
        self.r[i] = tr.r
        self.s_next[i] = tr.s_next
        self.terminal[i] = tr.terminal
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def oldest_first(self) -> np.ndarray:
        """Slot indices in insertion order (oldest first)."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self._next) % self.capacity

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> Optional[np.ndarray]:
        if self.size < batch_size:
            return None
        return rng.choice(self.size, size=batch_size, replace=False)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Optional["Batch"]:
        """Uniform minibatch without replacement, or ``None`` while under-filled."""
        idx = self.sample_indices(batch_size, rng)
        if idx is None:
            return None
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.terminal[idx])


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    terminal: np.ndarray

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition]) -> "Batch":
        return cls(np.array([t.s for t in transitions]), np.array([t.a for t in transitions]),
                   np.array([t.r for t in transitions], dtype=float),
                   np.array([t.s_next for t in transitions]),
                   np.array([t.terminal for t in transitions], dtype=bool))


@dataclass
class AgentBundle:
    actor: nn.Mlp
    target_actor: nn.Mlp
    critic: nn.Mlp
    target_critic: nn.Mlp
    actor_opt: nn.Adam
    critic_opt: nn.Adam
    config: DdpgConfig
    noise: OuNoise
    buffer: ReplayBuffer
    rng: np.random.Generator

    @classmethod
    def create(cls, seed: int = 0, config: Optional[DdpgConfig] = None) -> "AgentBundle":
        config = config or DdpgConfig()
        init_rng, run_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
        actor = nn.Mlp([STATE_DIM, *config.hidden, ACTION_DIM], output="tanh",
                       bound=ACTION_BOUND, rng=init_rng)
        critic = nn.Mlp([STATE_DIM + ACTION_DIM, *config.hidden, 1], output="identity",
                        rng=init_rng)
        return cls(actor=actor, target_actor=actor.copy(), critic=critic,
                   target_critic=critic.copy(),
                   actor_opt=nn.Adam(actor.n_params, lr=config.actor_lr),
                   critic_opt=nn.Adam(critic.n_params, lr=config.critic_lr),
                   config=config,
                   noise=OuNoise(ACTION_DIM, config.ou_theta, config.ou_sigma),
                   buffer=ReplayBuffer(config.buffer_size), rng=run_rng)

    def act(self, state, noise: bool = False) -> np.ndarray:
        a = self.actor.forward(np.asarray(state, dtype=float))
        if noise:
            a = a + self.noise.sample(self.rng)
        return np.clip(a, -ACTION_BOUND, ACTION_BOUND)

    def policy(self) -> Callable[[np.ndarray], np.ndarray]:
        """Noise-free policy for evaluation and rollouts."""
        return lambda s: self.act(s, noise=False)

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in ("actor", "target_actor", "critic", "target_critic"):
            nn.save_mlp(getattr(self, name), directory / f"{name}.npz")


def critic_update(bundle: AgentBundle, batch: Batch) -> float:
    """One Adam step on the critic's mean-squared TD error; returns the loss."""
    cfg = bundle.config
    a_next = bundle.target_actor.forward(batch.s_next)
    q_next = bundle.target_critic.forward(np.hstack([batch.s_next, a_next]))[:, 0]
    y = batch.r + cfg.gamma * np.where(batch.terminal, 0.0, q_next)

    cache = bundle.critic.forward_cached(np.hstack([batch.s, batch.a]))
    err = y - cache.output[:, 0]
    loss = float(np.mean(err * err))
    dq = (-2.0 / len(err)) * err
    grads, _ = bundle.critic.backward(cache, dq[:, None])
    bundle.critic_opt.step(bundle.critic.flat, grads)
    return loss


def policy_gradient(bundle: AgentBundle, batch: Batch):
    """Flat gradient of ``-mean Q(s, mu(s))`` w.r.t. the actor; also returns mean Q."""
    n = len(batch.s)
    actor_cache = bundle.actor.forward_cached(batch.s)
    critic_cache = bundle.critic.forward_cached(np.hstack([batch.s, actor_cache.output]))
    mean_q = float(np.mean(critic_cache.output))
    # chain rule through the critic's action inputs
    _, d_in = bundle.critic.backward(critic_cache, np.full((n, 1), -1.0 / n), need_params=False)
    grads, _ = bundle.actor.backward(actor_cache, d_in[:, STATE_DIM:])
    return grads, mean_q


def actor_update(bundle: AgentBundle, batch: Batch) -> float:
    """One Adam step ascending mean Q(s, mu(s)); returns the pre-update mean Q."""
    grads, mean_q = policy_gradient(bundle, batch)
    bundle.actor_opt.step(bundle.actor.flat, grads)
    return mean_q


def update_targets(bundle: AgentBundle) -> None:
    nn.soft_update(bundle.target_critic, bundle.critic, bundle.config.tau)
    nn.soft_update(bundle.target_actor, bundle.actor, bundle.config.tau)


@dataclass
class EpisodeLog:
    episode: int
    event_id: str
    reward: float
    critic_loss: float
    wall_time: float


@dataclass
class TrainingLog:
    rows: List[EpisodeLog] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([r.reward for r in self.rows])

    def rolling_reward(self, window: int = 50) -> np.ndarray:
        return rolling_mean(self.rewards, window)

    def write_csv(self, path, timing_path=None) -> None:
        """Write the deterministic columns to ``path``; wall times go to ``timing_path``."""
        with open(path, "w", newline="") as fh:
            fh.write("episode,event_id,reward,critic_loss\n")
            for r in self.rows:
                fh.write(f"{r.episode},{r.event_id},{r.reward!r},{r.critic_loss!r}\n")
        if timing_path is not None:
            with open(timing_path, "w", newline="") as fh:
                fh.write("episode,wall_time\n")
                for r in self.rows:
                    fh.write(f"{r.episode},{r.wall_time:.6f}\n")


def rolling_mean(values, window: int) -> np.ndarray:
    """Trailing mean; the first ``window - 1`` entries average what exists so far."""
    v = np.asarray(values, dtype=float)
    if len(v) == 0:
        return v
    c = np.cumsum(np.insert(v, 0, 0.0))
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def train(episodes_data: Sequence[Episode], reward_kind: RewardKind, episodes: int = 3000,
          seed: int = 0, config: Optional[DdpgConfig] = None,
          bundle: Optional[AgentBundle] = None,
          on_episode: Optional[Callable[[EpisodeLog], None]] = None):
    """Run the DDPG loop; returns ``(bundle, TrainingLog)``.

    Events are drawn without replacement and reshuffled once all have been
    used.  After warm-up (one batch in the buffer) every environment step does
    one critic update, one actor update and a soft target update.
    """
    usable = [e for e in episodes_data if len(e) >= 2]
    if not usable:
        raise ValueError("training set is empty")
    reward_kind = RewardKind(reward_kind)
    bundle = bundle or AgentBundle.create(seed, config)
    cfg = bundle.config
    order_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[2])
    tlog = TrainingLog()
    queue: List[int] = []

    for ep in range(episodes):
        if not queue:
            queue = list(order_rng.permutation(len(usable)))
        event = usable[queue.pop(0)]
        t0 = time.perf_counter()
        bundle.noise.reset()
        total, losses = 0.0, []
        for t in range(len(event) - 1):
            action = bundle.act(event.states[t], noise=True)
            tr = transition_at(event, t, action, reward_kind, cfg.dt, cfg.reward_clip)
            bundle.buffer.push(tr)
            total += tr.r
            batch = bundle.buffer.sample(cfg.batch_size, bundle.rng)
            if batch is None:
                continue
            losses.append(critic_update(bundle, batch))
            actor_update(bundle, batch)
            update_targets(bundle)
        row = EpisodeLog(ep, event.conflict_id, total,
                         float(np.mean(losses)) if losses else float("nan"),
                         time.perf_counter() - t0)
        tlog.rows.append(row)
        if on_episode is not None:
            on_episode(row)
        if ep % 100 == 0:
            log.debug("episode %d event %s reward %.4f", ep, event.conflict_id, total)
    return bundle, tlog


def load_actor(directory) -> nn.Mlp:
    return nn.load_mlp(Path(directory) / "actor.npz")
