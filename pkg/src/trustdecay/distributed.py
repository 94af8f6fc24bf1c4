"""Multi-agent gossip-averaged learning over mixing topologies.

Agents run the local multiplicative update on their own loss shard and then
replace their log-weights with the mixing-matrix average of their neighbours'
log-weights.  Log-space averaging is the geometric mean in probability space
and commutes with multiplicative updates; a doubly stochastic matrix keeps
the mean log-weight vector invariant, so consensus dynamics are governed by
the spectral gap.
"""
from __future__ import annotations

from dataclasses import dataclass

import networkx as nx
import numpy as np

from .geometry import CLIP_FLOOR, SimplexPoint, softmax
from .learners import LearnerConfig, LearnerState, init_state, tdmd_step
from .metrics import RunRecord


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Doubly stochastic gossip weights with their spectral gap."""

    weights: np.ndarray
    topology_name: str
    spectral_gap: float

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError("mixing matrix must be square")
        if np.any(W < -1e-12):
            raise ValueError("mixing weights must be nonnegative")
        if np.max(np.abs(W.sum(axis=0) - 1.0)) > 1e-10 or np.max(np.abs(W.sum(axis=1) - 1.0)) > 1e-10:
            raise ValueError("mixing matrix must be doubly stochastic")
        W = W.copy()
        W.flags.writeable = False
        object.__setattr__(self, "weights", W)

    @property
    def n_agents(self) -> int:
        return self.weights.shape[0]

    @property
    def second_eigenvalue(self) -> float:
        return 1.0 - self.spectral_gap


@dataclass(frozen=True, eq=False)
class AgentState:
    """Log-weights of one agent; softmax recovers its simplex point."""

    logits: np.ndarray

    def point(self) -> SimplexPoint:
        return SimplexPoint(softmax(self.logits))


def _metropolis(graph: nx.Graph, name: str) -> MixingMatrix:
    n = graph.number_of_nodes()
    W = np.zeros((n, n))
    degrees = dict(graph.degree())
    for i, j in graph.edges():
        w = 1.0 / (1.0 + max(degrees[i], degrees[j]))
        W[i, j] = w
        W[j, i] = w
    for i in range(n):
        W[i, i] = 1.0 - W[i].sum()
    eigs = np.sort(np.linalg.eigvalsh(W))[::-1]
    gap = float(1.0 - eigs[1]) if n > 1 else 1.0
    return MixingMatrix(W, name, gap)


def build_mixing_matrix(topology: str, n: int, degree: int | None = None, seed: int = 0) -> MixingMatrix:
    """Metropolis-weighted mixing matrix for a named topology.

    Supported: ``ring(n)``, ``complete(n)``, and ``random_regular(n, degree,
    seed)``.  Random draws are resampled up to 100 times until connected.
    """
    if n < 2:
        raise ValueError("need at least two agents")
    if topology == "ring":
        return _metropolis(nx.cycle_graph(n), f"ring({n})")
    if topology == "complete":
        return _metropolis(nx.complete_graph(n), f"complete({n})")
    if topology == "random_regular":
        if degree is None or degree >= n:
            raise ValueError("random_regular needs degree < n")
        for attempt in range(100):
            graph = nx.random_regular_graph(degree, n, seed=seed + attempt)
            if nx.is_connected(graph):
                return _metropolis(graph, f"random_regular({n},{degree})")
        raise RuntimeError("could not draw a connected regular graph in 100 attempts")
    raise ValueError(f"unknown topology {topology!r}")


def consensus_error(states) -> float:
    """Max pairwise L1 distance between the agents' simplex points."""
    if not states:
        raise ValueError("need at least one agent state")
    points = np.stack(
        [softmax(s.logits) if isinstance(s, AgentState) else softmax(np.asarray(s, float)) for s in states]
    )
    worst = 0.0
    for i in range(points.shape[0]):
        diffs = np.abs(points[i + 1 :] - points[i]).sum(axis=1)
        if diffs.size:
            worst = max(worst, float(diffs.max()))
    return worst


def consensus_contraction_trace(W: MixingMatrix, initial_logits, rounds: int) -> np.ndarray:
    """Consensus errors under pure mixing (no local updates).

    This is the eta -> 0 limit of the gossip run: log-weights evolve only by
    repeated multiplication with the mixing matrix.
    """
    logits = np.array(initial_logits, dtype=float)
    if logits.shape[0] != W.n_agents:
        raise ValueError("one logit row per agent required")
    errors = np.zeros(rounds)
    for r in range(rounds):
        logits = W.weights @ logits
        errors[r] = consensus_error(list(logits))
    return errors


@dataclass(frozen=True, eq=False)
class GossipResult:
    records: tuple[RunRecord, ...]
    consensus: np.ndarray
    mean_regret_per_round: np.ndarray

    @property
    def mean_cumulative_regret(self) -> float:
        return float(np.mean([r.cumulative_regret for r in self.records]))

    @property
    def total_cumulative_regret(self) -> float:
        return float(np.sum([r.cumulative_regret for r in self.records]))


def gossip_tdmd_run(shards, W: MixingMatrix, config: LearnerConfig) -> GossipResult:
    """Run gossip-averaged learners over per-agent trace shards.

    All shards must expose identical expected losses and comparators (shared
    objective, agent-local noise).  Each round every agent takes its local
    step on its own realized losses; with more than one agent the log-weights
    are then averaged through the mixing matrix.  The single-agent run skips
    the (identity) mixing step and is bit-identical to the plain learner.
    """
    shards = list(shards)
    n = len(shards)
    if W.n_agents != n:
        raise ValueError("mixing matrix size must match the number of agents")
    horizon = shards[0].horizon
    d = shards[0].dim
    for other in shards[1:]:
        if other.horizon != horizon or other.dim != d:
            raise ValueError("shards must share horizon and dimension")
        if not np.array_equal(other.expected_losses, shards[0].expected_losses) or not np.array_equal(
            other.comparators, shards[0].comparators
        ):
            raise ValueError("shards must share the comparator sequence")

    lam_by_mode = {
        "zero": 0.0,
        "constant": config.lam,
    }
    if config.tilt_mode not in lam_by_mode:
        raise ValueError("gossip runs support zero or constant tilt modes")
    lam = lam_by_mode[config.tilt_mode]

    states = [init_state(d) for _ in range(n)]
    decisions = np.zeros((n, horizon, d))
    instant = np.zeros((n, horizon))
    incurred = np.zeros((n, horizon))
    consensus = np.zeros(horizon)

    for t in range(horizon):
        comp_value = shards[0].comparator_value(t)
        for i, (trace, state) in enumerate(zip(shards, states)):
            x = state.point.weights
            decisions[i, t] = x
            instant[i, t] = shards[0].expected_value(t, x) - comp_value
            incurred[i, t] = float(x @ trace.losses[t])
            states[i] = tdmd_step(state, trace.gradient(t, x), trace.stresses[t], config.eta, lam)
        if n > 1:
            logits = np.log(
                np.maximum(np.stack([s.point.weights for s in states]), CLIP_FLOOR)
            )
            mixed = W.weights @ logits
            states = [
                LearnerState(SimplexPoint(softmax(row)), states[i].round, None, states[i].cumulative_loss)
                for i, row in enumerate(mixed)
            ]
        consensus[t] = consensus_error([np.log(np.maximum(s.point.weights, CLIP_FLOOR)) for s in states])

    records = tuple(
        RunRecord(
            label=f"agent_{i}",
            decisions=decisions[i],
            incurred_loss=incurred[i],
            instant_regret=instant[i],
            lambdas=np.full(horizon, lam),
            epsilon_hats=np.zeros(horizon),
        )
        for i in range(n)
    )
    return GossipResult(records, consensus, instant.mean(axis=0).cumsum())
