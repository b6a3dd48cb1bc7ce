"""Critic-parameter exchange over the platoon's communication graph."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import quantizer as qz
from .errors import DimensionMismatch, InvalidSize, InvalidSpec, ModeRequiresNeighbors

MODES = ("macacc", "mean", "none")
WIRE_MODES = ("dense", "sparse", "auto")
DEFAULT_EPSILON = {"catchup": 1.0e-3, "slowdown": 1.0e-4}


@dataclass(frozen=True)
class CommGraph:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise InvalidSize("weight matrix must be square")
        if not np.array_equal(w, w.T) or np.any(np.diag(w) != 0) or np.any(w < 0):
            raise InvalidSpec("weights must be symmetric, non-negative, with zero diagonal")
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def edges(self) -> set[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.weights))
        return set(zip(i.tolist(), j.tolist()))

    @property
    def degrees(self) -> np.ndarray:
        return (self.weights > 0).sum(axis=1)

    def neighbors(self, i: int) -> list[int]:
        return np.flatnonzero(self.weights[i]).tolist()


def chain_graph(size: int) -> CommGraph:
    """Path graph 0-1-...-(size-1) with unit weights (agents are zero-indexed)."""
    if size < 2:
        raise InvalidSize(f"a chain needs at least 2 agents, got {size}")
    w = np.zeros((size, size))
    k = np.arange(size - 1)
    w[k, k + 1] = w[k + 1, k] = 1.0
    return CommGraph(w)


@dataclass(frozen=True)
class ConsensusConfig:
    epsilon: float = 1.0e-3
    lam: float = 2.5e-4
    mode: str = "macacc"
    resolution: int = 0
    wire: str = "auto"

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidSpec(f"unknown consensus mode {self.mode!r}")
        if self.wire not in WIRE_MODES:
            raise InvalidSpec(f"unknown wire mode {self.wire!r}")
        if self.epsilon < 0 or not self.lam > 0:
            raise InvalidSpec("need epsilon >= 0 and lambda > 0")
        if self.resolution < 0:
            raise InvalidSpec("resolution must be >= 0")


def _values(m) -> np.ndarray:
    return qz.dequantize(m) if isinstance(m, qz.QuantizedMessage) else np.asarray(m, dtype=float)


def consensus_update(x_i, own_q, neighbor_qs: Sequence, g_i, cfg: ConsensusConfig,
                     neighbor_weights: Sequence[float] | None = None) -> np.ndarray:
    """One agent's parameter update from its own and its neighbours' messages.

    Messages may be ``QuantizedMessage`` objects or raw vectors (unquantized exchange).
    """
    x_i = np.asarray(x_i, dtype=float)
    g_i = np.asarray(g_i, dtype=float)
    if g_i.shape != x_i.shape:
        raise DimensionMismatch("gradient and parameters differ in shape")
    if cfg.mode == "none":
        return x_i - cfg.lam * g_i
    nbrs = [_values(m) for m in neighbor_qs]
    if any(v.shape != x_i.shape for v in nbrs):
        raise DimensionMismatch("neighbour message dimension differs from own parameters")
    if cfg.mode == "mean":
        if not nbrs:
            raise ModeRequiresNeighbors("mean mode needs at least one neighbour")
        return np.mean(nbrs, axis=0) - cfg.lam * g_i
    own = _values(own_q if own_q is not None else x_i)
    if own.shape != x_i.shape:
        raise DimensionMismatch("own message dimension differs from own parameters")
    ws = np.ones(len(nbrs)) if neighbor_weights is None else np.asarray(neighbor_weights, dtype=float)
    if len(ws) != len(nbrs):
        raise DimensionMismatch("one weight per neighbour message is required")
    pull = np.zeros_like(x_i)
    for w, v in zip(ws, nbrs):
        pull += w * (v - own)
    return x_i + cfg.epsilon * pull - cfg.lam * g_i


def disagreement(xs) -> float:
    """Largest Euclidean distance from any agent's vector to the across-agent mean."""
    arr = [np.atleast_1d(np.asarray(x, dtype=float)) for x in xs]
    if len({a.shape for a in arr}) > 1:
        raise DimensionMismatch("all vectors must share a dimension")
    x = np.stack(arr)
    return float(np.max(np.linalg.norm(x - x.mean(axis=0), axis=1)))


@dataclass(frozen=True)
class Envelope:
    sender: int
    receiver: int
    round: int
    bits: int
    payload: bytes


@dataclass
class LoopbackTransport:
    """In-process delivery of encoded messages with per-round bit counters."""

    inboxes: dict = field(default_factory=dict)
    bits_sent: int = 0
    bits_received: int = 0
    bytes_sent: int = 0
    messages: int = 0
    round_bits: list = field(default_factory=list)

    def send(self, env: Envelope):
        self.inboxes.setdefault(env.receiver, []).append(env)
        self.bits_sent += env.bits
        self.bytes_sent += len(env.payload)
        self.messages += 1

    def receive(self, receiver: int, round_index: int) -> list[Envelope]:
        got = self.inboxes.pop(receiver, [])
        stale = [e for e in got if e.round != round_index]
        if stale:
            raise RuntimeError(f"agent {receiver} got messages from round {stale[0].round} "
                               f"during round {round_index}")
        return got


def consensus_round(xs: Sequence[np.ndarray], gs: Sequence[np.ndarray], graph: CommGraph,
                    cfg: ConsensusConfig, rngs: Sequence[np.random.Generator],
                    transport: LoopbackTransport, round_index: int) -> list[np.ndarray]:
    """Synchronous exchange: all messages come from the pre-round vectors, then everyone updates.

    Each agent quantizes its own vector once and the same realisation goes to
    every neighbour and into its own difference term.
    """
    n_agents = len(xs)
    if graph.size != n_agents or len(gs) != n_agents:
        raise DimensionMismatch("graph, parameter and gradient counts disagree")
    if cfg.mode == "none":
        transport.round_bits.append(0)
        return [consensus_update(x, None, [], g, cfg) for x, g in zip(xs, gs)]
    own = [qz.quantize(x, cfg.resolution, rng) for x, rng in zip(xs, rngs)]
    before = transport.bits_sent
    for i, q in enumerate(own):
        mode = qz.best_mode(q) if cfg.wire == "auto" else cfg.wire
        payload = qz.encode(q, mode)
        bits = qz.message_bits(q, mode)
        for j in graph.neighbors(i):
            transport.send(Envelope(i, j, round_index, bits, payload))
    out = []
    for i in range(n_agents):
        inbox = transport.receive(i, round_index)
        msgs, ws = [], []
        for env in inbox:
            m = qz.decode(env.payload)
            transport.bits_received += qz.message_bits(m, qz.peek_mode(env.payload))
            msgs.append(m)
            ws.append(graph.weights[i, env.sender])
        out.append(consensus_update(xs[i], own[i], msgs, gs[i], cfg, ws))
    transport.round_bits.append(transport.bits_sent - before)
    return out
