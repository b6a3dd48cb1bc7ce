"""Per-agent advantage actor-critic with one-step advantages."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .errors import EmptyBatch, InvalidDistribution


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    terminal: bool = False


@dataclass
class Batch:
    """Column-stacked transitions of one agent."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    terminals: np.ndarray

    def __len__(self):
        return len(self.actions)

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition]) -> "Batch":
        if not transitions:
            raise EmptyBatch("batch has no transitions")
        arr = lambda o: o.as_array() if hasattr(o, "as_array") else np.asarray(o, dtype=float)
        return cls(np.stack([arr(t.obs) for t in transitions]),
                   np.array([int(t.action) for t in transitions]),
                   np.array([float(t.reward) for t in transitions]),
                   np.stack([arr(t.next_obs) for t in transitions]),
                   np.array([bool(t.terminal) for t in transitions]))

    def transitions(self) -> list[Transition]:
        return [Transition(o, int(a), float(r), n, bool(d))
                for o, a, r, n, d in zip(self.obs, self.actions, self.rewards, self.next_obs, self.terminals)]


def _batch(batch) -> Batch:
    b = batch if isinstance(batch, Batch) else Batch.from_transitions(list(batch))
    if len(b) == 0:
        raise EmptyBatch("batch has no transitions")
    return b


@dataclass
class AgentLearner:
    actor_params: np.ndarray
    critic_params: np.ndarray
    gamma: float = 0.99
    entropy_coef: float = 0.01
    actor_spec: nn.MlpSpec = field(default=nn.ACTOR)
    critic_spec: nn.MlpSpec = field(default=nn.CRITIC)

    @classmethod
    def fresh(cls, seed, gamma=0.99, entropy_coef=0.01, actor_spec=nn.ACTOR,
              critic_spec=nn.CRITIC) -> "AgentLearner":
        seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        actor_seed, critic_seed = seq.spawn(2)
        return cls(nn.init_orthogonal(actor_spec, 1.0, actor_seed),
                   nn.init_orthogonal(critic_spec, 1.0, critic_seed),
                   gamma, entropy_coef, actor_spec, critic_spec)


def sample_action(probs, rng: np.random.Generator) -> int:
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidDistribution(f"not a probability vector: {p}")
    cdf = np.cumsum(p)
    return int(min(np.searchsorted(cdf, rng.random(), side="right"), len(p) - 1))


def advantage(t: Transition, critic: np.ndarray, gamma: float, spec: nn.MlpSpec = nn.CRITIC) -> float:
    v = nn.value_forward(critic, t.obs, spec)
    v_next = 0.0 if t.terminal else nn.value_forward(critic, t.next_obs, spec)
    return float(t.reward + gamma * v_next - v)


def td_targets(batch: Batch, critic: np.ndarray, gamma: float, spec: nn.MlpSpec = nn.CRITIC) -> np.ndarray:
    v_next = nn.value_forward(critic, batch.next_obs, spec)
    return batch.rewards + gamma * v_next * (1.0 - batch.terminals)


def advantages(batch, critic: np.ndarray, gamma: float, spec: nn.MlpSpec = nn.CRITIC) -> np.ndarray:
    b = _batch(batch)
    return td_targets(b, critic, gamma, spec) - nn.value_forward(critic, b.obs, spec)


def actor_objective(actor: np.ndarray, batch, adv: np.ndarray, entropy_coef: float,
                    spec: nn.MlpSpec = nn.ACTOR) -> float:
    """Mean of ``log pi(a|s) * A + c * H(pi(.|s))`` with advantages held fixed."""
    b = _batch(batch)
    logits, _ = nn.forward(actor, spec, b.obs)
    logp = nn.log_softmax(logits)
    probs = np.exp(logp)
    chosen = logp[np.arange(len(b)), b.actions]
    entropy = -(probs * logp).sum(axis=1)
    return float(np.mean(chosen * adv + entropy_coef * entropy))


def actor_gradient(batch, learner: AgentLearner, adv: np.ndarray | None = None) -> np.ndarray:
    """Ascent direction of ``actor_objective``; the critic only supplies constants."""
    b = _batch(batch)
    if adv is None:
        adv = advantages(b, learner.critic_params, learner.gamma, learner.critic_spec)
    logits, _ = nn.forward(learner.actor_params, learner.actor_spec, b.obs)
    logp = nn.log_softmax(logits)
    probs = np.exp(logp)
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(b)), b.actions] = 1.0
    up = (onehot - probs) * np.asarray(adv)[:, None]
    if learner.entropy_coef:
        entropy = -(probs * logp).sum(axis=1, keepdims=True)
        up -= learner.entropy_coef * probs * (logp + entropy)
    return nn.backward(learner.actor_params, learner.actor_spec, b.obs, up / len(b))


def critic_loss(critic: np.ndarray, batch, targets: np.ndarray, spec: nn.MlpSpec = nn.CRITIC) -> float:
    b = _batch(batch)
    return float(np.mean((targets - nn.value_forward(critic, b.obs, spec)) ** 2))


def critic_gradient(batch, learner: AgentLearner, targets: np.ndarray | None = None) -> np.ndarray:
    """Descent gradient of the mean squared TD error with the bootstrap target frozen."""
    b = _batch(batch)
    if targets is None:
        targets = td_targets(b, learner.critic_params, learner.gamma, learner.critic_spec)
    v = nn.value_forward(learner.critic_params, b.obs, learner.critic_spec)
    return nn.backward(learner.critic_params, learner.critic_spec, b.obs, -2.0 * (targets - v) / len(b))
