"""Decentralized actor-critic training loop, evaluation and run artifacts."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import a2c, nn
from .config import TrainConfig
from .consensus import LoopbackTransport, chain_graph, consensus_round, disagreement
from .env import PlatoonEnv, ScenarioSpec
from .errors import Malformed, NonFinite

log = logging.getLogger(__name__)

EVAL_COLUMNS = ["step", "mean_episode_reward", "mean_episode_return", "avg_headway", "avg_velocity", "collision_count",
                "episodes", "bits_sent_total", "bits_per_param_per_round"]


@dataclass
class EvalMetrics:
    """Greedy-evaluation summary.

    ``mean_episode_reward`` is the per-step average of the global reward within
    an episode, averaged over episodes; ``mean_episode_return`` is the
    undiscounted sum instead.
    """

    mean_episode_reward: float
    mean_episode_return: float
    avg_headway: float
    avg_velocity: float
    collision_count: int
    episodes: int
    bits_sent_total: int = 0
    bits_per_param_per_round: float = 0.0
    episode_rewards: list = field(default_factory=list, repr=False)


@dataclass
class RolloutBatch:
    batches: list            # one a2c.Batch per agent, raw rewards
    global_rewards: np.ndarray
    rewards: np.ndarray      # (steps, V)
    episode_done: bool
    collided: bool


@dataclass
class TrainResult:
    learners: list
    records: list
    evals: list              # (step, EvalMetrics)
    global_rewards: np.ndarray
    transport: LoopbackTransport
    seed: int

    @property
    def initial_eval(self) -> EvalMetrics:
        return self.evals[0][1]

    @property
    def final_eval(self) -> EvalMetrics:
        return self.evals[-1][1]


def make_learners(cfg: TrainConfig, seed: int) -> list[a2c.AgentLearner]:
    seqs = np.random.SeedSequence([seed, 0]).spawn(cfg.scenario.platoon_size)
    actor = nn.actor_spec(cfg.hidden, cfg.activation)
    critic = nn.critic_spec(cfg.hidden, cfg.activation)
    return [a2c.AgentLearner.fresh(s, cfg.gamma, cfg.entropy_coef, actor, critic) for s in seqs]


def _actor_stack(learners) -> np.ndarray:
    return np.stack([lr.actor_params for lr in learners])


def rollout(env: PlatoonEnv, learners, batch_len: int, rngs, obs: np.ndarray) -> tuple[RolloutBatch, np.ndarray]:
    """Run up to ``batch_len`` synchronous steps, each agent sampling from its own actor.

    Stops early when the episode ends. Returns the batch and the last observations.
    """
    n = len(learners)
    stack = _actor_stack(learners)
    spec = learners[0].actor_spec
    obs_buf, next_buf, act_buf, rew_buf = [], [], [], []
    collided = False
    for _ in range(batch_len):
        probs = nn.batched_policy(stack, spec, obs)
        actions = np.array([a2c.sample_action(p, rng) for p, rng in zip(probs, rngs)])
        next_obs, rewards, done = env.step(actions)
        obs_buf.append(obs)
        act_buf.append(actions)
        rew_buf.append(rewards)
        next_buf.append(next_obs)
        obs = next_obs
        if done:
            collided = env.state.collided
            break
    steps = len(act_buf)
    o, nx = np.stack(obs_buf), np.stack(next_buf)
    acts, rews = np.stack(act_buf), np.stack(rew_buf)
    terminals = np.zeros(steps, dtype=bool)
    terminals[-1] = collided
    batches = [a2c.Batch(o[:, i], acts[:, i], rews[:, i], nx[:, i], terminals.copy()) for i in range(n)]
    return RolloutBatch(batches, rews.mean(axis=1), rews, env.done, collided), obs


def _clip(g: np.ndarray, max_norm: float) -> np.ndarray:
    if max_norm <= 0:
        return g
    norm = np.linalg.norm(g)
    return g * (max_norm / norm) if norm > max_norm else g


def evaluate(learners, scenario: ScenarioSpec, episodes: int, seed_base: int, weights=None) -> EvalMetrics:
    """Greedy evaluation; headway/speed averages come from collision-free episodes only."""
    env = PlatoonEnv(scenario) if weights is None else PlatoonEnv(scenario, weights)
    stack = _actor_stack(learners)
    spec = learners[0].actor_spec
    per_step, returns, headways, speeds, collisions = [], [], [], [], 0
    for e in range(episodes):
        obs = env.reset(seed_base + e)
        total, h_sum, v_sum, count = 0.0, 0.0, 0.0, 0
        done = False
        while not done:
            actions = np.argmax(nn.batched_policy(stack, spec, obs), axis=1)
            obs, rewards, done = env.step(actions)
            total += float(rewards.mean())
            h_sum += float(env.state.headways.sum())
            v_sum += float(env.state.velocities.sum())
            count += env.state.size
        returns.append(total)
        per_step.append(total / env.state.step_index)
        if env.state.collided:
            collisions += 1
        else:
            headways.append(h_sum / count)
            speeds.append(v_sum / count)
    return EvalMetrics(
        mean_episode_reward=float(np.mean(per_step)),
        mean_episode_return=float(np.mean(returns)),
        avg_headway=float(np.mean(headways)) if headways else float("nan"),
        avg_velocity=float(np.mean(speeds)) if speeds else float("nan"),
        collision_count=collisions,
        episodes=episodes,
        episode_rewards=per_step,
    )


def _check_finite(vec, what, seed, step, agent):
    if not np.all(np.isfinite(vec)):
        raise NonFinite(f"seed {seed}, step {step}, agent {agent}: {what} became non-finite "
                        f"(max |finite entry| = {np.nanmax(np.abs(np.where(np.isfinite(vec), vec, 0)))})")


def train(cfg: TrainConfig, seed: int, on_record=None) -> TrainResult:
    """Train one seed. ``on_record`` receives every log record as it is produced."""
    spec = cfg.scenario
    n_agents = spec.platoon_size
    learners = make_learners(cfg, seed)
    root = np.random.SeedSequence([seed, 1])
    env_seq, act_seq, quant_seq = root.spawn(3)
    act_rngs = [np.random.default_rng(s) for s in act_seq.spawn(n_agents)]
    quant_rngs = [np.random.default_rng(s) for s in quant_seq.spawn(n_agents)]
    episode_rng = np.random.default_rng(env_seq)
    graph = chain_graph(n_agents)
    transport = LoopbackTransport()
    records, evals, global_rewards = [], [], []
    emit = (lambda r: (records.append(r), on_record(r))) if on_record else records.append

    def run_eval(step):
        m = evaluate(learners, spec, cfg.eval_episodes, cfg.eval_seed_base, cfg.weights)
        m.bits_sent_total = transport.bits_sent
        rounds = len(transport.round_bits)
        sends = transport.messages
        d = learners[0].critic_spec.n_params
        m.bits_per_param_per_round = transport.bits_sent / (sends * d) if sends else 0.0
        evals.append((step, m))
        emit({"type": "eval", "step": step, "rounds": rounds,
              **{k: v for k, v in asdict(m).items() if k != "episode_rewards"}})

    run_eval(0)
    env = PlatoonEnv(spec, cfg.weights)
    step = 0
    round_index = 0
    episode_return, episode_len = 0.0, 0
    obs = None
    pending = []
    next_eval = cfg.eval_interval if cfg.eval_interval > 0 else None
    while step < cfg.total_steps:
        if env.done:
            obs = env.reset(int(episode_rng.integers(2**63 - 1)))
        batch_len = min(cfg.batch_len, cfg.total_steps - step)
        try:
            rb, obs = rollout(env, learners, batch_len, act_rngs, obs)
        except NonFinite as exc:
            raise NonFinite(f"seed {seed}, step {step}: {exc}") from exc
        steps = len(rb.global_rewards)
        global_rewards.extend(rb.global_rewards.tolist())
        episode_return += float(rb.global_rewards.sum())
        episode_len += steps
        step += steps

        critic_grads = []
        for i, (lr, b) in enumerate(zip(learners, rb.batches)):
            scaled = a2c.Batch(b.obs, b.actions, b.rewards / cfg.reward_scale, b.next_obs, b.terminals)
            targets = a2c.td_targets(scaled, lr.critic_params, lr.gamma, lr.critic_spec)
            adv = targets - nn.value_forward(lr.critic_params, scaled.obs, lr.critic_spec)
            g_actor = _clip(a2c.actor_gradient(scaled, lr, adv), cfg.max_grad_norm)
            critic_grads.append(_clip(a2c.critic_gradient(scaled, lr, targets), cfg.max_grad_norm))
            lr.actor_params = lr.actor_params + cfg.actor_lr * g_actor
            _check_finite(lr.actor_params, "actor parameters", seed, step, i)

        new_critics = consensus_round([lr.critic_params for lr in learners], critic_grads, graph,
                                      cfg.consensus, quant_rngs, transport, round_index)
        for i, (lr, x) in enumerate(zip(learners, new_critics)):
            _check_finite(x, "critic parameters", seed, step, i)
            lr.critic_params = x
        round_index += 1

        pending.append((step, rb))
        if len(pending) >= cfg.log_interval:
            emit({"type": "batch", "step": step, "round": round_index,
                  "r_g": [float(r) for _, p in pending for r in p.global_rewards],
                  "disagreement": disagreement([lr.critic_params for lr in learners]),
                  "bits_round": int(transport.round_bits[-1]),
                  "bits_total": int(transport.bits_sent)})
            pending = []
        if env.done:
            emit({"type": "episode", "step": step, "return": episode_return, "length": episode_len,
                  "collided": bool(rb.collided)})
            episode_return, episode_len = 0.0, 0
        if next_eval is not None and step >= next_eval and step < cfg.total_steps:
            run_eval(step)
            next_eval += cfg.eval_interval
    if pending:
        emit({"type": "batch", "step": step, "round": round_index,
              "r_g": [float(r) for _, p in pending for r in p.global_rewards],
              "disagreement": disagreement([lr.critic_params for lr in learners]),
              "bits_round": int(transport.round_bits[-1]), "bits_total": int(transport.bits_sent)})
    if cfg.total_steps > 0:
        run_eval(step)
    return TrainResult(learners, records, evals, np.asarray(global_rewards), transport, seed)


# --- artifacts -------------------------------------------------------------

def save_learners(directory, learners) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, lr in enumerate(learners):
        (d / f"agent{i}_actor.ckpt").write_bytes(nn.encode_params(lr.actor_params, lr.actor_spec))
        (d / f"agent{i}_critic.ckpt").write_bytes(nn.encode_params(lr.critic_params, lr.critic_spec))


def _read_checkpoint(path: Path):
    try:
        return nn.decode_params(path.read_bytes())
    except Malformed as exc:
        raise Malformed(f"{path}: {exc}") from exc


def load_learners(directory, gamma=0.99, entropy_coef=0.01) -> list[a2c.AgentLearner]:
    d = Path(directory)
    learners = []
    i = 0
    while (d / f"agent{i}_actor.ckpt").exists():
        actor, a_spec = _read_checkpoint(d / f"agent{i}_actor.ckpt")
        critic_path = d / f"agent{i}_critic.ckpt"
        if critic_path.exists():
            critic, c_spec = _read_checkpoint(critic_path)
        else:
            c_spec = nn.critic_spec(a_spec.layer_sizes[1:-1], a_spec.activation)
            critic = np.zeros(c_spec.n_params)
        learners.append(a2c.AgentLearner(actor, critic, gamma, entropy_coef, a_spec, c_spec))
        i += 1
    if not learners:
        raise Malformed(f"no agent checkpoints found in {d}")
    return learners


def write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def eval_csv(evals) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVAL_COLUMNS)
    for step, m in evals:
        w.writerow([step, repr(m.mean_episode_reward), repr(m.mean_episode_return), repr(m.avg_headway), repr(m.avg_velocity),
                    m.collision_count, m.episodes, m.bits_sent_total, repr(m.bits_per_param_per_round)])
    return buf.getvalue()
