"""Two-step speaker/listener coordination episodes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .rng import Stream

if TYPE_CHECKING:
    from .agent import AgentState


@dataclass(frozen=True)
class GameConfig:
    n_actions: int = 4
    n_messages: int = 4
    coordination_reward: float = 1.0
    history_length: int = 100

    def __post_init__(self) -> None:
        if self.n_actions != 4 or self.n_messages != 4:
            raise ValueError("the coordination game uses exactly 4 actions and 4 messages")
        if not self.coordination_reward > 0:
            raise ValueError("coordination_reward must be positive")
        if self.history_length < 1:
            raise ValueError("history_length must be >= 1")


class ActionHistory:
    """Sliding window over an agent's most recent actions.

    Stored as a ring buffer plus running counts so the native kernel can take
    the same arrays over unchanged.
    """

    def __init__(self, length: int = 100, n_actions: int = 4) -> None:
        self.buf = np.zeros(length, dtype=np.int64)
        self.counts = np.zeros(n_actions, dtype=np.int64)
        self.pos = 0
        self.size = 0

    @property
    def capacity(self) -> int:
        return self.buf.shape[0]

    def proportions(self) -> np.ndarray:
        k = self.counts.shape[0]
        if self.size == 0:
            return np.full(k, 1.0 / k)
        return self.counts / self.size

    def push(self, action: int) -> None:
        if self.size == self.capacity:
            self.counts[self.buf[self.pos]] -= 1
        else:
            self.size += 1
        self.buf[self.pos] = action
        self.counts[action] += 1
        self.pos = (self.pos + 1) % self.capacity

    def window(self) -> list[int]:
        """Actions in the window, oldest first."""
        start = (self.pos - self.size) % self.capacity
        return [int(self.buf[(start + i) % self.capacity]) for i in range(self.size)]

    def __len__(self) -> int:
        return self.size


def diversity_penalty(p_hat_a: float) -> float:
    if not 0.0 <= p_hat_a <= 1.0:
        raise ValueError(f"proportion out of range: {p_hat_a}")
    return min(0.0, 0.25 - p_hat_a)


def episode_reward(coordinated: bool, p_hat_a: float, cfg: GameConfig) -> float:
    return (cfg.coordination_reward if coordinated else 0.0) + diversity_penalty(p_hat_a)


@dataclass
class EpisodeOutcome:
    speaker_id: int
    listener_id: int
    message: int
    received: int
    speaker_action: int
    listener_action: int
    coordinated: bool
    speaker_reward: float
    listener_reward: float
    round: int
    speaker_input: np.ndarray | None = None
    listener_input: np.ndarray | None = None


def play_round(
    speaker: "AgentState",
    listener: "AgentState",
    cfg: GameConfig,
    round: int,
    epsilon: float | None = None,
    channel: Stream | None = None,
) -> EpisodeOutcome:
    """Play one episode and update both action histories.

    Each agent draws its own noise and exploration from its policy stream.
    Passing ``channel`` ablates communication: the listener then receives a
    uniformly random message drawn from that stream instead of the sent one.
    """
    from .agent import LISTENER, SPEAKER, build_input, select_outputs

    if speaker.id == listener.id:
        raise ValueError("an agent cannot play with itself")
    eps_s = speaker.epsilon if epsilon is None else epsilon
    eps_l = listener.epsilon if epsilon is None else epsilon

    p_speaker = speaker.history.proportions()
    noise = np.array([speaker.policy_rng.uniform() for _ in range(cfg.n_messages)])
    x_s = build_input(SPEAKER, noise, p_speaker)
    a_s, message = select_outputs(speaker, x_s, SPEAKER, eps_s)

    received = message if channel is None else channel.randbelow(cfg.n_messages)
    p_listener = listener.history.proportions()
    onehot = np.zeros(cfg.n_messages)
    onehot[received] = 1.0
    x_l = build_input(LISTENER, onehot, p_listener)
    a_l, _ = select_outputs(listener, x_l, LISTENER, eps_l)

    coordinated = a_s == a_l
    r_s = episode_reward(coordinated, float(p_speaker[a_s]), cfg)
    r_l = episode_reward(coordinated, float(p_listener[a_l]), cfg)
    speaker.history.push(a_s)
    listener.history.push(a_l)
    return EpisodeOutcome(
        speaker.id, listener.id, message, received, a_s, a_l, coordinated, r_s, r_l, round, x_s, x_l
    )
