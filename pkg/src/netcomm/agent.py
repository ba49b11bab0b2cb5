"""Deep Q-learning agents with replay memory and peeked supervision."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import neuralnet as nn
from .game import ActionHistory, EpisodeOutcome, GameConfig
from .rng import Stream

SPEAKER = 1
LISTENER = 0
REINFORCEMENT = 0
SUPERVISING = 1
INPUT_DIM = 9


@dataclass
class Experience:
    input: np.ndarray
    role: int
    action_taken: int
    message: int
    reward: float
    kind: int = REINFORCEMENT
    supervised_target_action: int | None = None

    def __post_init__(self) -> None:
        if (self.kind == SUPERVISING) != (self.supervised_target_action is not None):
            raise ValueError("supervised_target_action must be set exactly for supervising experiences")


class ReplayBuffer:
    """Bounded FIFO memory stored column-wise in ring arrays.

    Logical index 0 is always the oldest entry. Experiences carry no next
    state: every episode is terminal after one step for each agent.
    """

    def __init__(self, capacity: int = 2000, input_dim: int = INPUT_DIM) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.inputs = np.zeros((capacity, input_dim))
        self.role = np.zeros(capacity, dtype=np.int64)
        self.action = np.zeros(capacity, dtype=np.int64)
        self.message = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity)
        self.kind = np.zeros(capacity, dtype=np.int64)
        self.target = np.full(capacity, -1, dtype=np.int64)
        self.start = 0
        self.size = 0

    @property
    def capacity(self) -> int:
        return self.reward.shape[0]

    def __len__(self) -> int:
        return self.size

    def _slot(self, k: int) -> int:
        return (self.start + k) % self.capacity

    def append(self, exp: Experience) -> None:
        if self.size < self.capacity:
            slot = self._slot(self.size)
            self.size += 1
        else:
            slot = self.start
            self.start = (self.start + 1) % self.capacity
        self.inputs[slot] = exp.input
        self.role[slot] = exp.role
        self.action[slot] = exp.action_taken
        self.message[slot] = exp.message
        self.reward[slot] = exp.reward
        self.kind[slot] = exp.kind
        self.target[slot] = -1 if exp.supervised_target_action is None else exp.supervised_target_action

    def get(self, k: int) -> Experience:
        if not 0 <= k < self.size:
            raise IndexError(k)
        s = self._slot(k)
        target = int(self.target[s])
        return Experience(
            self.inputs[s].copy(),
            int(self.role[s]),
            int(self.action[s]),
            int(self.message[s]),
            float(self.reward[s]),
            int(self.kind[s]),
            None if target < 0 else target,
        )

    def __iter__(self):
        return (self.get(k) for k in range(self.size))

    def sample(self, batch_size: int, rng: Stream) -> np.ndarray:
        """Physical slots of a uniform minibatch, without replacement."""
        logical = rng.sample_without_replacement(self.size, batch_size)
        return np.array([self._slot(k) for k in logical], dtype=np.int64)


@dataclass
class AgentConfig:
    replay_capacity: int = 2000
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.2


@dataclass
class AgentState:
    id: int
    net: nn.Mlp
    opt: nn.Optimizer
    replay: ReplayBuffer
    history: ActionHistory
    policy_rng: Stream
    memory_rng: Stream
    epsilon: float = 1.0
    coordination_reward: float = 1.0
    batch_size: int = 32
    last_loss: float = field(default=0.0, repr=False)

    @classmethod
    def create(
        cls,
        agent_id: int,
        init_rng: Stream,
        policy_rng: Stream,
        memory_rng: Stream,
        cfg: AgentConfig | None = None,
        game: GameConfig | None = None,
    ) -> "AgentState":
        cfg = cfg or AgentConfig()
        game = game or GameConfig()
        net = nn.init(INPUT_DIM, init_rng)
        opt = nn.Optimizer(cfg.optimizer, cfg.learning_rate).bind(net.flat.size)
        return cls(
            agent_id,
            net,
            opt,
            ReplayBuffer(cfg.replay_capacity),
            ActionHistory(game.history_length, game.n_actions),
            policy_rng,
            memory_rng,
            cfg.epsilon_start,
            game.coordination_reward,
            cfg.batch_size,
        )


def build_input(role: int, message_or_noise: np.ndarray, p_hat: np.ndarray) -> np.ndarray:
    x = np.empty(INPUT_DIM)
    x[0] = 1.0 if role == SPEAKER else 0.0
    x[1:5] = message_or_noise
    x[5:9] = p_hat
    return x


def _greedy(q: np.ndarray) -> int:
    # np.argmax returns the first maximum, i.e. lowest-index tie-break
    return int(np.argmax(q))


def select_outputs(agent: AgentState, x: np.ndarray, role: int, epsilon: float | None = None):
    """Epsilon-greedy action (and message, for speakers) from the two heads.

    Draw order on the agent's policy stream: action exploration coin, the
    random action if exploring, then the same pair for the message.
    """
    eps = agent.epsilon if epsilon is None else epsilon
    q_action, q_message = nn.forward(agent.net, x)
    rng = agent.policy_rng
    action = rng.randbelow(4) if rng.uniform() < eps else _greedy(q_action)
    if role != SPEAKER:
        return action, None
    message = rng.randbelow(4) if rng.uniform() < eps else _greedy(q_message)
    return action, message


def record_and_supervise(
    agent: AgentState, outcome: EpisodeOutcome, supervision_rate: float
) -> Experience:
    """Store this agent's side of an episode, possibly as a supervising entry."""
    if not 0.0 <= supervision_rate <= 1.0:
        raise ValueError("supervision rate must lie in [0, 1]")
    if agent.id == outcome.speaker_id:
        role, own, partner = SPEAKER, outcome.speaker_action, outcome.listener_action
        x, message, reward = outcome.speaker_input, outcome.message, outcome.speaker_reward
    elif agent.id == outcome.listener_id:
        role, own, partner = LISTENER, outcome.listener_action, outcome.speaker_action
        x, message, reward = outcome.listener_input, outcome.received, outcome.listener_reward
    else:
        raise ValueError(f"agent {agent.id} did not take part in this episode")
    exp = Experience(np.asarray(x, dtype=np.float64), role, own, message, reward)
    if not outcome.coordinated and agent.memory_rng.uniform() < supervision_rate:
        exp.kind = SUPERVISING
        exp.supervised_target_action = partner
    agent.replay.append(exp)
    return exp


def batch_targets(replay: ReplayBuffer, slots: np.ndarray, coordination_reward: float):
    """Units and regression targets for both heads of a minibatch."""
    supervised = replay.kind[slots] == SUPERVISING
    action_unit = np.where(supervised, replay.target[slots], replay.action[slots])
    target = np.where(supervised, coordination_reward, replay.reward[slots])
    speaker = replay.role[slots] == SPEAKER
    return action_unit, replay.message[slots], target, speaker


def train_step(agent: AgentState, batch_size: int | None = None) -> float:
    """One minibatch regression of the chosen Q-values onto their targets.

    The loss is the mean over all (sample, head) terms of the squared
    residual; speakers contribute a message-head term as well.
    """
    batch_size = agent.batch_size if batch_size is None else batch_size
    replay = agent.replay
    if len(replay) < batch_size:
        return 0.0
    slots = replay.sample(batch_size, agent.memory_rng)
    x = replay.inputs[slots]
    action_unit, message_unit, target, speaker = batch_targets(replay, slots, agent.coordination_reward)
    cache = nn.forward_cache(agent.net, x)
    q_action, q_message = cache[2], cache[3]
    rows = np.arange(batch_size)
    res_a = q_action[rows, action_unit] - target
    res_m = np.where(speaker, q_message[rows, message_unit] - target, 0.0)
    n_terms = batch_size + int(speaker.sum())
    loss = float((np.sum(res_a * res_a) + np.sum(res_m * res_m)) / n_terms)
    if not np.isfinite(loss):
        raise FloatingPointError(f"agent {agent.id}: non-finite training loss {loss}")
    d_action = np.zeros((batch_size, 4))
    d_message = np.zeros((batch_size, 4))
    d_action[rows, action_unit] = 2.0 * res_a / n_terms
    d_message[rows, message_unit] = 2.0 * res_m / n_terms
    grad = nn.backward_batch(agent.net, x, cache, d_action, d_message)
    nn.step(agent.net, agent.opt, grad)
    agent.last_loss = loss
    return loss


def epsilon_schedule(
    round: int,
    total_rounds: int,
    start: float = 1.0,
    end: float = 0.05,
    decay_fraction: float = 0.2,
) -> float:
    """Linear decay from ``start`` to ``end`` over the first part of a run."""
    if not 0 <= round <= total_rounds:
        raise ValueError(f"round {round} outside [0, {total_rounds}]")
    horizon = decay_fraction * total_rounds
    if round >= horizon:
        return end
    return start - (start - end) * (round / horizon)
