"""Information-theoretic measures of the emergent communication system.

Every quantity is estimated from per-agent, per-role contingency tables of
(message, action) counts. Logs are base 2, so every divergence lies in [0, 1].
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass

import numpy as np

log = logging.getLogger(__name__)

SPEAKER_ROLE = 0
LISTENER_ROLE = 1
N_SYMBOLS = 4


class UndefinedMetricError(ValueError):
    pass


@dataclass
class RoleContingency:
    agent_id: int
    role: int
    counts: np.ndarray  # (message, action)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def action_marginal(self) -> np.ndarray:
        return self.counts.sum(axis=0) / self.total

    def message_marginal(self) -> np.ndarray:
        return self.counts.sum(axis=1) / self.total

    def conditionals(self) -> np.ndarray:
        """Rows p(action | message); unseen messages default to uniform."""
        rows = self.counts.sum(axis=1, keepdims=True).astype(np.float64)
        out = np.full(self.counts.shape, 1.0 / self.counts.shape[1])
        seen = rows[:, 0] > 0
        out[seen] = self.counts[seen] / rows[seen]
        return out


@dataclass
class ContingencyTables:
    """Counts for all agents, indexed ``[agent, role, message, action]``."""

    counts: np.ndarray
    avg_reward: float
    window: tuple[int, int]

    @property
    def n_agents(self) -> int:
        return self.counts.shape[0]

    def table(self, agent: int, role: int) -> RoleContingency:
        return RoleContingency(agent, role, self.counts[agent, role])

    def active(self, role: int | None = None) -> list[int]:
        """Agents with data in ``role`` (or in both roles when ``role`` is None)."""
        totals = self.counts.sum(axis=(2, 3))
        mask = totals.min(axis=1) > 0 if role is None else totals[:, role] > 0
        return [int(a) for a in np.flatnonzero(mask)]


@dataclass
class MetricsReport:
    speaking_consistency: float
    listening_consistency: float
    between_agent_divergence: float
    within_agent_divergence: float
    signaling_divergence: float
    action_predictability: float
    message_predictability: float
    avg_reward: float
    window: tuple[int, int]

    def as_dict(self) -> dict:
        return asdict(self)


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log2(nz)))


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    # q is a mixture containing p, so q == 0 only when p underflowed too
    mask = (p > 0) & (q > 0)
    return float(np.sum(p[mask] * np.log2(p[mask] / q[mask])))


def jsd(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions must share a support")
    m = 0.5 * (p + q)
    value = 0.5 * _kl(p, m) + 0.5 * _kl(q, m)
    return min(max(value, 0.0), 1.0)


def mutual_information(joint) -> float:
    joint = np.asarray(joint, dtype=np.float64)
    joint = joint / joint.sum()
    return entropy(joint.sum(axis=0)) + entropy(joint.sum(axis=1)) - entropy(joint.ravel())


def consistency(c: RoleContingency | np.ndarray) -> float:
    """Mutual information between messages and actions over their mean entropy."""
    counts = c.counts if isinstance(c, RoleContingency) else np.asarray(c)
    total = counts.sum()
    if total <= 0:
        raise UndefinedMetricError("consistency is undefined for an empty contingency table")
    joint = counts / total
    z = 0.5 * (entropy(joint.sum(axis=0)) + entropy(joint.sum(axis=1)))
    if z <= 0:
        return 0.0
    mi = max(mutual_information(joint), 0.0)
    return min(mi / z, 1.0)


def mapping_divergence(cond_a: np.ndarray, cond_b: np.ndarray) -> float:
    """Mean over messages of the JSD between two p(action | message) tables."""
    return float(np.mean([jsd(pa, pb) for pa, pb in zip(cond_a, cond_b)]))


def _pair_mean(values: list[float]) -> float:
    return float(np.mean(values)) if values else float("nan")


def between_agent_divergence(tables: ContingencyTables, pooled: bool = False) -> float:
    """Pairwise mapping divergence, computed per role and then averaged over roles.

    With ``pooled`` the two role tables of each agent are summed first.
    """
    if pooled:
        counts = tables.counts.sum(axis=1)
        agents = [a for a in range(tables.n_agents) if counts[a].sum() > 0]
        conds = {a: RoleContingency(a, -1, counts[a]).conditionals() for a in agents}
        return _pair_mean([mapping_divergence(conds[a], conds[b]) for a, b in itertools.combinations(agents, 2)])
    per_role = []
    for role in (SPEAKER_ROLE, LISTENER_ROLE):
        agents = tables.active(role)
        conds = {a: tables.table(a, role).conditionals() for a in agents}
        pairs = [mapping_divergence(conds[a], conds[b]) for a, b in itertools.combinations(agents, 2)]
        if pairs:
            per_role.append(np.mean(pairs))
    return _pair_mean(per_role)


def within_agent_divergence(tables: ContingencyTables) -> float:
    values = [
        mapping_divergence(
            tables.table(a, SPEAKER_ROLE).conditionals(), tables.table(a, LISTENER_ROLE).conditionals()
        )
        for a in tables.active()
    ]
    return _pair_mean(values)


def signaling_divergence(tables: ContingencyTables) -> float:
    agents = tables.active(SPEAKER_ROLE)
    marg = {a: tables.table(a, SPEAKER_ROLE).message_marginal() for a in agents}
    return _pair_mean([jsd(marg[a], marg[b]) for a, b in itertools.combinations(agents, 2)])


def behavioral_predictability(tables: ContingencyTables) -> tuple[float, float]:
    uniform = np.full(N_SYMBOLS, 1.0 / N_SYMBOLS)
    action_pred = []
    for a in range(tables.n_agents):
        pooled = tables.counts[a].sum(axis=(0, 1))
        if pooled.sum() > 0:
            action_pred.append(jsd(pooled / pooled.sum(), uniform))
    message_pred = [
        jsd(tables.table(a, SPEAKER_ROLE).message_marginal(), uniform) for a in tables.active(SPEAKER_ROLE)
    ]
    return _pair_mean(action_pred), _pair_mean(message_pred)


def accumulate(episodes: np.ndarray, n_agents: int, window: tuple[int, int] | None = None) -> ContingencyTables:
    """Fill contingency tables from an episode log over ``[first, last)`` rounds.

    ``episodes`` is a structured array with the fields of
    :data:`netcomm.engine.EPISODE_DTYPE`. Speaker tables are keyed by the
    message sent, listener tables by the message received.
    """
    if window is None:
        rounds = episodes["round"]
        window = (int(rounds.min()), int(rounds.max()) + 1) if len(rounds) else (0, 0)
    first, last = window
    if last <= first:
        raise ValueError(f"empty metric window {window}")
    sel = episodes[(episodes["round"] >= first) & (episodes["round"] < last)]
    if len(sel) == 0:
        raise ValueError(f"no episodes inside window {window}")
    counts = np.zeros((n_agents, 2, N_SYMBOLS, N_SYMBOLS), dtype=np.int64)
    np.add.at(counts, (sel["speaker"], SPEAKER_ROLE, sel["message"], sel["speaker_action"]), 1)
    np.add.at(counts, (sel["listener"], LISTENER_ROLE, sel["received"], sel["listener_action"]), 1)
    rewards = np.concatenate([sel["speaker_reward"], sel["listener_reward"]])
    tables = ContingencyTables(counts, float(rewards.mean()), (first, last))
    idle = [a for a in range(n_agents) if a not in tables.active()]
    if idle:
        log.warning("agents %s lack data in at least one role inside window %s; excluded where needed", idle, window)
    return tables


def report(tables: ContingencyTables, pooled_between: bool = False) -> MetricsReport:
    speaking = [consistency(tables.table(a, SPEAKER_ROLE)) for a in tables.active(SPEAKER_ROLE)]
    listening = [consistency(tables.table(a, LISTENER_ROLE)) for a in tables.active(LISTENER_ROLE)]
    action_pred, message_pred = behavioral_predictability(tables)
    return MetricsReport(
        speaking_consistency=_pair_mean(speaking),
        listening_consistency=_pair_mean(listening),
        between_agent_divergence=between_agent_divergence(tables, pooled=pooled_between),
        within_agent_divergence=within_agent_divergence(tables),
        signaling_divergence=signaling_divergence(tables),
        action_predictability=action_pred,
        message_predictability=message_pred,
        avg_reward=tables.avg_reward,
        window=tables.window,
    )
