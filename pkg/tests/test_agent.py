import numpy as np
import pytest

from netcomm import neuralnet as nn
from netcomm.agent import (
    LISTENER,
    REINFORCEMENT,
    SPEAKER,
    SUPERVISING,
    AgentConfig,
    AgentState,
    Experience,
    ReplayBuffer,
    build_input,
    epsilon_schedule,
    record_and_supervise,
    select_outputs,
    train_step,
)
from netcomm.game import EpisodeOutcome
from netcomm.rng import Stream


def make_agent(agent_id=0, **cfg):
    return AgentState.create(agent_id, Stream(agent_id), Stream(50 + agent_id), Stream(90 + agent_id), AgentConfig(**cfg))


def test_build_input_listener():
    x = build_input(LISTENER, np.eye(4)[2], np.full(4, 0.25))
    assert x.tolist() == [0, 0, 0, 1, 0, 0.25, 0.25, 0.25, 0.25]


def test_build_input_speaker():
    rng = Stream(3)
    x = build_input(SPEAKER, np.array([rng.uniform() for _ in range(4)]), np.full(4, 0.25))
    assert x.shape == (9,) and x[0] == 1.0
    assert np.all((x[1:5] >= 0) & (x[1:5] < 1))


def test_greedy_tie_break_lowest_index():
    agent = make_agent()
    agent.net = nn.zeros(9)
    agent.net.ba[...] = [0.1, 0.9, 0.3, 0.9]
    agent.epsilon = 0.0
    assert select_outputs(agent, np.zeros(9), LISTENER) == (1, None)


def test_listener_never_returns_message():
    agent = make_agent()
    agent.epsilon = 0.5
    for _ in range(50):
        assert select_outputs(agent, np.zeros(9), LISTENER)[1] is None


def test_full_exploration_is_uniform():
    agent = make_agent()
    agent.epsilon = 1.0
    actions = np.array([select_outputs(agent, np.zeros(9), SPEAKER)[0] for _ in range(100_000)])
    freq = np.bincount(actions, minlength=4) / actions.size
    assert np.all(np.abs(freq - 0.25) < 0.01)


def test_greedy_selection_is_pure():
    agent = make_agent()
    agent.epsilon = 0.0
    x = np.linspace(0, 1, 9)
    picks = {select_outputs(agent, x, SPEAKER) for _ in range(20)}
    assert len(picks) == 1


def outcome(coordinated=False, speaker_id=0, listener_id=1):
    xs = np.r_[1.0, 0.1, 0.2, 0.3, 0.4, np.full(4, 0.25)]
    xl = np.r_[0.0, 0, 1, 0, 0, np.full(4, 0.25)]
    la = 2 if coordinated else 3
    return EpisodeOutcome(speaker_id, listener_id, 1, 1, 2, la, coordinated, float(coordinated), float(coordinated), 0, xs, xl)


def test_supervision_rate_zero_never_supervises():
    agent = make_agent()
    for _ in range(500):
        assert record_and_supervise(agent, outcome(), 0.0).kind == REINFORCEMENT


def test_supervision_rate_one_always_supervises_failures():
    agent = make_agent()
    for _ in range(200):
        exp = record_and_supervise(agent, outcome(), 1.0)
        assert exp.kind == SUPERVISING and exp.supervised_target_action == 3
    listener = make_agent(1)
    exp = record_and_supervise(listener, outcome(), 1.0)
    assert exp.role == LISTENER and exp.supervised_target_action == 2 and exp.message == 1


def test_coordinated_never_supervised():
    agent = make_agent()
    for _ in range(200):
        assert record_and_supervise(agent, outcome(True), 1.0).kind == REINFORCEMENT


@pytest.mark.parametrize("s", [0.1, 0.5, 0.9])
def test_supervision_fraction(s):
    agent = make_agent()
    kinds = [record_and_supervise(agent, outcome(), s).kind for _ in range(10_000)]
    assert abs(np.mean(kinds) - s) < 0.02


def test_experience_invariant():
    with pytest.raises(ValueError):
        Experience(np.zeros(9), SPEAKER, 0, 0, 0.0, SUPERVISING, None)
    with pytest.raises(ValueError):
        Experience(np.zeros(9), SPEAKER, 0, 0, 0.0, REINFORCEMENT, 2)


def test_replay_fifo_eviction():
    buf = ReplayBuffer(capacity=5)
    for i in range(12):
        buf.append(Experience(np.full(9, i), SPEAKER, i % 4, 0, float(i)))
        assert len(buf) == min(i + 1, 5)
    assert [e.reward for e in buf] == [7.0, 8.0, 9.0, 10.0, 11.0]
    assert not hasattr(buf, "next_inputs")


def test_replay_sample_without_replacement():
    buf = ReplayBuffer(capacity=50)
    for i in range(70):
        buf.append(Experience(np.zeros(9), SPEAKER, 0, 0, float(i)))
    slots = buf.sample(32, Stream(1))
    assert len(set(slots.tolist())) == 32
    assert set(buf.reward[slots]) <= set(range(20, 70))


def test_train_step_noop_below_batch():
    agent = make_agent()
    before = agent.net.flat.copy()
    for _ in range(31):
        record_and_supervise(agent, outcome(), 0.0)
    assert train_step(agent, 32) == 0.0
    assert np.array_equal(before, agent.net.flat)


def test_train_step_zero_residual():
    agent = make_agent()
    agent.net = nn.zeros(9)
    for _ in range(40):
        agent.replay.append(Experience(np.r_[0.0, 1, 0, 0, 0, np.full(4, 0.25)], LISTENER, 1, 0, 0.0))
    before = agent.net.flat.copy()
    assert train_step(agent, 32) == 0.0
    np.testing.assert_allclose(agent.net.flat, before, atol=1e-12)


def test_supervised_experience_converges_to_reward():
    agent = make_agent()
    x = np.r_[0.0, 0, 0, 1, 0, 0.1, 0.2, 0.3, 0.4]
    for _ in range(40):
        agent.replay.append(Experience(x, LISTENER, 0, 2, 0.0, SUPERVISING, 3))
    for _ in range(5000):
        train_step(agent, 32)
    q_action, _ = nn.forward(agent.net, x)
    assert abs(q_action[3] - agent.coordination_reward) < 1e-2


def test_speaker_message_head_trained_listener_not():
    agent = make_agent()
    xs = np.r_[1.0, 0.5, 0.5, 0.5, 0.5, np.full(4, 0.25)]
    for _ in range(40):
        agent.replay.append(Experience(xs, SPEAKER, 0, 2, 1.0))
    for _ in range(3000):
        train_step(agent)
    qa, qm = nn.forward(agent.net, xs)
    assert abs(qa[0] - 1.0) < 1e-2 and abs(qm[2] - 1.0) < 1e-2

    listener = make_agent(1)
    xl = np.r_[0.0, 0, 0, 1, 0, np.full(4, 0.25)]
    for _ in range(40):
        listener.replay.append(Experience(xl, LISTENER, 1, 2, 1.0))
    wm_before = listener.net.wm.copy()
    train_step(listener)
    assert np.array_equal(wm_before, listener.net.wm)


def test_epsilon_schedule():
    assert epsilon_schedule(0, 1000) == 1.0
    assert epsilon_schedule(200, 1000) == pytest.approx(0.05, abs=1e-12)
    assert epsilon_schedule(100, 1000) == pytest.approx(0.525, abs=1e-12)
    assert epsilon_schedule(999, 1000) == 0.05
    with pytest.raises(ValueError):
        epsilon_schedule(1001, 1000)
