"""Data-driven kinematic environment for evasive-behavior learning.

A state is a length-6 float vector (see :data:`STATE_FIELDS`); arrays of
states have shape ``(..., 6)`` and actions ``(..., 2)``.  The leader is held
at constant speed inside one step, so relative speed changes only through
the ego's own acceleration.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional

import numpy as np

from .ssm import VehicleDims, ttc_2d_arrays

DT = 0.1
ACTION_BOUND = 7.0
REWARD_EPS = 1e-7
REWARD_CLIP = -100.0

STATE_FIELDS = ("d_lon", "v_lon", "dv_lon", "d_lat", "v_lat", "dv_lat")
D_LON, V_LON, DV_LON, D_LAT, V_LAT, DV_LAT = range(6)


class EnvState(NamedTuple):
    d_lon: float
    v_lon: float
    dv_lon: float
    d_lat: float
    v_lat: float
    dv_lat: float


class Action(NamedTuple):
    a_lon: float
    a_lat: float


class RewardKind(str, enum.Enum):
    DISTANCE = "d"
    SPEED = "v"
    SPEED_DIFF = "dv"


def clamp_action(a, bound: float = ACTION_BOUND) -> np.ndarray:
    return np.clip(np.asarray(a, dtype=float), -bound, bound)


def step_kinematics(state, action, dt: float = DT) -> np.ndarray:
    """Advance the ego one step under ``action``; the leader keeps its speed."""
    s = np.asarray(state, dtype=float)
    a = np.asarray(action, dtype=float)
    out = np.empty(np.broadcast_shapes(s.shape, a.shape[:-1] + (6,)))
    for d, v, dv, acc in ((D_LON, V_LON, DV_LON, a[..., 0]), (D_LAT, V_LAT, DV_LAT, a[..., 1])):
        v_next = s[..., v] + acc * dt
        out[..., v] = v_next
        out[..., dv] = s[..., dv] - acc * dt
        # leader displacement minus trapezoidal ego displacement
        out[..., d] = s[..., d] + (s[..., v] + s[..., dv]) * dt - (s[..., v] + v_next) / 2 * dt
    return out


def _relative_error_reward(sim, obs, i_lon, i_lat, eps, clip):
    sim = np.asarray(sim, dtype=float)
    obs = np.asarray(obs, dtype=float)
    terms = []
    for i in (i_lon, i_lat):
        term = -np.abs(sim[..., i] - obs[..., i]) / (np.abs(obs[..., i]) + eps)
        if clip is not None:
            term = np.maximum(term, clip)
        terms.append(term)
    r = terms[0] + terms[1]
    return float(r) if np.ndim(r) == 0 else r


def reward_distance(sim, obs, eps: float = REWARD_EPS, clip: Optional[float] = None):
    return _relative_error_reward(sim, obs, D_LON, D_LAT, eps, clip)


def reward_speed(sim, obs, eps: float = REWARD_EPS, clip: Optional[float] = None):
    return _relative_error_reward(sim, obs, V_LON, V_LAT, eps, clip)


def reward_speed_diff(sim, obs, eps: float = REWARD_EPS, clip: Optional[float] = None):
    return _relative_error_reward(sim, obs, DV_LON, DV_LAT, eps, clip)


REWARDS = {
    RewardKind.DISTANCE: reward_distance,
    RewardKind.SPEED: reward_speed,
    RewardKind.SPEED_DIFF: reward_speed_diff,
}


@dataclass
class Episode:
    """One conflict as an observed state sequence.

    ``accel`` holds the human accelerations ``(a_lon, a_lat)`` at each record;
    the last row is unused by one-step evaluation.
    """

    conflict_id: str
    states: np.ndarray
    accel: np.ndarray
    time_cs: np.ndarray = field(default=None)
    kind: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.accel = np.asarray(self.accel, dtype=float)
        if self.time_cs is None:
            self.time_cs = np.arange(len(self.states)) * 10
        if self.states.ndim != 2 or self.states.shape[1] != 6:
            raise ValueError("episode states must have shape (n, 6)")
        if len(self.accel) != len(self.states):
            raise ValueError("accel and states must have equal length")

    def __len__(self):
        return len(self.states)

    def leader_profile(self) -> np.ndarray:
        """Recorded leader speeds ``(v0_lon, v0_lat)`` at each step."""
        s = self.states
        return np.stack([s[:, V_LON] + s[:, DV_LON], s[:, V_LAT] + s[:, DV_LAT]], axis=1)


class Transition(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    terminal: bool


def transition_at(episode: Episode, t: int, action, reward_kind: RewardKind,
                  dt: float = DT, clip: Optional[float] = REWARD_CLIP) -> Transition:
    """Teacher-forced experience for step ``t``: the stored next state is observed data."""
    s = episode.states[t]
    obs_next = episode.states[t + 1]
    a = clamp_action(action)
    sim = step_kinematics(s, a, dt)
    r = REWARDS[RewardKind(reward_kind)](sim, obs_next, clip=clip)
    return Transition(s.copy(), a, r, obs_next.copy(), t + 1 == len(episode) - 1)


def make_transitions(episode: Episode, policy: Callable[[np.ndarray], np.ndarray],
                     reward_kind: RewardKind, dt: float = DT,
                     clip: Optional[float] = REWARD_CLIP) -> List[Transition]:
    """Experience for every consecutive record pair of ``episode``.

    ``policy`` maps an observed state to an (already noisy) action; it is
    called once per step in order, so stateful noise processes work.
    """
    if len(episode) < 2:
        raise ValueError("an episode needs at least two records")
    return [transition_at(episode, t, policy(episode.states[t]), reward_kind, dt, clip)
            for t in range(len(episode) - 1)]


@dataclass
class RolloutResult:
    states: np.ndarray
    actions: np.ndarray


def rollout(initial, leader_profile, policy: Callable[[np.ndarray], np.ndarray],
            dt: float = DT) -> RolloutResult:
    """Closed-loop trajectory from one observed state.

    The policy sees only simulated states.  After each kinematic step the
    relative speeds are re-anchored to the recorded leader speeds.
    """
    profile = np.asarray(leader_profile, dtype=float).reshape(-1, 2)
    n = len(profile)
    states = np.zeros((n, 6))
    actions = np.zeros((n, 2))
    if n == 0:
        return RolloutResult(states, actions)
    states[0] = np.asarray(initial, dtype=float)
    for k in range(n):
        actions[k] = clamp_action(policy(states[k]))
        if k + 1 == n:
            break
        nxt = step_kinematics(states[k], actions[k], dt)
        nxt[DV_LON] = profile[k + 1, 0] - nxt[V_LON]
        nxt[DV_LAT] = profile[k + 1, 1] - nxt[V_LAT]
        states[k + 1] = nxt
    return RolloutResult(states, actions)


def state_ttc(states, dims: VehicleDims = VehicleDims()):
    """2D-TTC arrays for environment states (see :func:`ttc_2d_arrays`)."""
    s = np.atleast_2d(np.asarray(states, dtype=float))
    return ttc_2d_arrays(s[:, D_LON] + dims.length, s[:, D_LAT], s[:, V_LON], s[:, V_LAT],
                         s[:, V_LON] + s[:, DV_LON], s[:, V_LAT] + s[:, DV_LAT], dims)
