"""Round-loop engines.

``PythonEngine`` drives the agent and game modules object by object.
``NativeEngine`` packs the same population into stacked arrays and hands the
loop to the compiled ``_core`` kernel; it consumes the random streams in the
identical order, so both engines produce the same episodes as long as float
rounding in the matrix products does not flip an argmax.

The engine is picked at import: native when the extension is importable,
unless ``NETCOMM_ENGINE=python`` is set.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from . import rng as rngmod
from .agent import AgentConfig, AgentState, record_and_supervise, train_step, epsilon_schedule
from .game import GameConfig, play_round
from .topology import SocialNetwork, sample_pair

try:
    from . import _core
except ImportError:  # pragma: no cover - depends on the build
    _core = None

HAVE_NATIVE = _core is not None

LOG_FIELDS = [
    ("round", np.int64),
    ("speaker", np.int64),
    ("listener", np.int64),
    ("message", np.int64),
    ("received", np.int64),
    ("speaker_action", np.int64),
    ("listener_action", np.int64),
    ("speaker_reward", np.float64),
    ("listener_reward", np.float64),
    ("speaker_supervised", np.int64),
    ("listener_supervised", np.int64),
]
EPISODE_DTYPE = np.dtype(LOG_FIELDS)


def empty_log_columns(n_rounds: int) -> dict[str, np.ndarray]:
    return {name: np.zeros(n_rounds, dtype=dt) for name, dt in LOG_FIELDS}


def columns_to_records(cols: dict[str, np.ndarray]) -> np.ndarray:
    out = np.empty(len(cols["round"]), dtype=EPISODE_DTYPE)
    for name, _ in LOG_FIELDS:
        out[name] = cols[name]
    return out


@dataclass
class Population:
    network: SocialNetwork
    agents: list[AgentState]
    pairing: rngmod.Stream
    roles: rngmod.Stream
    channel: rngmod.Stream


def build_population(
    network: SocialNetwork, seed: int, agent_cfg: AgentConfig, game: GameConfig
) -> Population:
    agents = [
        AgentState.create(
            i,
            rngmod.derive_stream(seed, rngmod.AGENT_INIT, i),
            rngmod.derive_stream(seed, rngmod.AGENT_POLICY, i),
            rngmod.derive_stream(seed, rngmod.AGENT_MEMORY, i),
            agent_cfg,
            game,
        )
        for i in range(network.n)
    ]
    return Population(
        network,
        agents,
        rngmod.derive_stream(seed, rngmod.PAIRING),
        rngmod.derive_stream(seed, rngmod.ROLES),
        rngmod.derive_stream(seed, rngmod.CHANNEL),
    )


@dataclass
class LoopSettings:
    total_rounds: int
    supervision_rate: float
    game: GameConfig
    agent: AgentConfig
    ablate_channel: bool = False


class PythonEngine:
    name = "python"

    def run(self, pop: Population, settings: LoopSettings, start: int, stop: int, cols: dict) -> None:
        a_cfg = settings.agent
        agents = pop.agents
        for r in range(start, stop):
            a, b = sample_pair(pop.network, pop.pairing)
            spk, lis = (a, b) if pop.roles.randbelow(2) == 0 else (b, a)
            speaker, listener = agents[spk], agents[lis]
            eps = epsilon_schedule(
                r, settings.total_rounds, a_cfg.epsilon_start, a_cfg.epsilon_end, a_cfg.epsilon_decay_fraction
            )
            speaker.epsilon = listener.epsilon = eps
            out = play_round(
                speaker, listener, settings.game, r, channel=pop.channel if settings.ablate_channel else None
            )
            exp_s = record_and_supervise(speaker, out, settings.supervision_rate)
            exp_l = record_and_supervise(listener, out, settings.supervision_rate)
            train_step(speaker)
            train_step(listener)
            row = r - start
            cols["round"][row] = r
            cols["speaker"][row] = spk
            cols["listener"][row] = lis
            cols["message"][row] = out.message
            cols["received"][row] = out.received
            cols["speaker_action"][row] = out.speaker_action
            cols["listener_action"][row] = out.listener_action
            cols["speaker_reward"][row] = out.speaker_reward
            cols["listener_reward"][row] = out.listener_reward
            cols["speaker_supervised"][row] = exp_s.kind
            cols["listener_supervised"][row] = exp_l.kind


def pack(pop: Population) -> SimpleNamespace:
    """Stack every agent's mutable state into contiguous arrays."""
    agents = pop.agents
    offsets = np.zeros(pop.network.n + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(nb) for nb in pop.network.neighbors])
    if any(ag.opt.algorithm == "adam" and ag.opt.m is None for ag in agents):
        for ag in agents:
            ag.opt.bind(ag.net.flat.size)
    adam = agents[0].opt.algorithm == "adam"
    return SimpleNamespace(
        nbr_offsets=offsets,
        nbr_list=np.array([v for nb in pop.network.neighbors for v in nb], dtype=np.int64),
        shared_state=np.array([pop.pairing.state, pop.roles.state, pop.channel.state], dtype=np.uint64),
        policy_state=np.array([ag.policy_rng.state for ag in agents], dtype=np.uint64),
        memory_state=np.array([ag.memory_rng.state for ag in agents], dtype=np.uint64),
        params=np.stack([ag.net.flat for ag in agents]),
        adam_m=np.stack([ag.opt.m for ag in agents]) if adam else np.zeros((len(agents), agents[0].net.flat.size)),
        adam_v=np.stack([ag.opt.v for ag in agents]) if adam else np.zeros((len(agents), agents[0].net.flat.size)),
        adam_t=np.array([ag.opt.t for ag in agents], dtype=np.int64),
        rep_x=np.stack([ag.replay.inputs for ag in agents]),
        rep_role=np.stack([ag.replay.role for ag in agents]),
        rep_action=np.stack([ag.replay.action for ag in agents]),
        rep_message=np.stack([ag.replay.message for ag in agents]),
        rep_reward=np.stack([ag.replay.reward for ag in agents]),
        rep_kind=np.stack([ag.replay.kind for ag in agents]),
        rep_target=np.stack([ag.replay.target for ag in agents]),
        rep_start=np.array([ag.replay.start for ag in agents], dtype=np.int64),
        rep_size=np.array([ag.replay.size for ag in agents], dtype=np.int64),
        hist_buf=np.stack([ag.history.buf for ag in agents]),
        hist_counts=np.stack([ag.history.counts for ag in agents]),
        hist_pos=np.array([ag.history.pos for ag in agents], dtype=np.int64),
        hist_size=np.array([ag.history.size for ag in agents], dtype=np.int64),
        epsilon=np.array([ag.epsilon for ag in agents], dtype=np.float64),
        last_loss=np.array([ag.last_loss for ag in agents], dtype=np.float64),
    )


def unpack(packed: SimpleNamespace, pop: Population) -> None:
    """Copy packed state back into the agent objects."""
    pop.pairing.state, pop.roles.state, pop.channel.state = (int(v) for v in packed.shared_state)
    for i, ag in enumerate(pop.agents):
        ag.policy_rng.state = int(packed.policy_state[i])
        ag.memory_rng.state = int(packed.memory_state[i])
        ag.net.flat[...] = packed.params[i]
        if ag.opt.algorithm == "adam":
            ag.opt.m[...] = packed.adam_m[i]
            ag.opt.v[...] = packed.adam_v[i]
        ag.opt.t = int(packed.adam_t[i])
        rp = ag.replay
        rp.inputs[...] = packed.rep_x[i]
        rp.role[...] = packed.rep_role[i]
        rp.action[...] = packed.rep_action[i]
        rp.message[...] = packed.rep_message[i]
        rp.reward[...] = packed.rep_reward[i]
        rp.kind[...] = packed.rep_kind[i]
        rp.target[...] = packed.rep_target[i]
        rp.start = int(packed.rep_start[i])
        rp.size = int(packed.rep_size[i])
        h = ag.history
        h.buf[...] = packed.hist_buf[i]
        h.counts[...] = packed.hist_counts[i]
        h.pos = int(packed.hist_pos[i])
        h.size = int(packed.hist_size[i])
        ag.epsilon = float(packed.epsilon[i])
        ag.last_loss = float(packed.last_loss[i])


class NativeEngine:
    name = "native"

    def run(self, pop: Population, settings: LoopSettings, start: int, stop: int, cols: dict) -> None:
        if _core is None:
            raise RuntimeError("the native extension netcomm._core is not built")
        packed = pack(pop)
        a_cfg = settings.agent
        kernel = _core.Kernel(
            packed,
            settings.game.coordination_reward,
            settings.supervision_rate,
            a_cfg.batch_size,
            a_cfg.learning_rate,
            pop.agents[0].opt.algorithm == "adam",
            a_cfg.epsilon_start,
            a_cfg.epsilon_end,
            a_cfg.epsilon_decay_fraction,
            settings.ablate_channel,
        )
        try:
            kernel.run(start, stop, settings.total_rounds, cols)
        finally:
            unpack(packed, pop)


ENGINES = {"python": PythonEngine}
if HAVE_NATIVE:
    ENGINES["native"] = NativeEngine


def get_engine(name: str | None = None):
    """Engine by name; ``None`` means the environment/default choice."""
    name = name or os.environ.get("NETCOMM_ENGINE") or ("native" if HAVE_NATIVE else "python")
    try:
        return ENGINES[name]()
    except KeyError:
        raise ValueError(f"engine {name!r} unavailable; choose from {sorted(ENGINES)}") from None
