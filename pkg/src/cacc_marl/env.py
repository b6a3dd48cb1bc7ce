"""Multi-agent CACC task: scenarios, observations, actions, rewards."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import DEFAULT_LIMITS, DynamicsLimits, PlatoonState, step_platoon
from .errors import DimensionMismatch, InvalidAction, InvalidSpec
from .ovm import OvmParams, gain_accel, optimal_velocity

# (alpha, beta) per action id
GAIN_TABLE = np.array([[0.0, 0.0], [0.5, 0.0], [0.0, 0.5], [0.5, 0.5]])
N_ACTIONS = len(GAIN_TABLE)
OBS_DIM = 5


class ScenarioKind(str, enum.Enum):
    CATCHUP = "catchup"
    SLOWDOWN = "slowdown"


@dataclass(frozen=True)
class ScenarioSpec:
    kind: ScenarioKind = ScenarioKind.CATCHUP
    platoon_size: int = 4
    h_star: float = 20.0
    v_star: float = 15.0
    episode_seconds: float = 60.0
    dt: float = 0.1
    catchup_gap_factor_range: tuple = (3.0, 4.0)
    slowdown_speed_factor_range: tuple = (1.5, 2.5)
    slowdown_ramp_seconds: float = 30.0
    limits: DynamicsLimits = DEFAULT_LIMITS
    ovm: OvmParams = field(default_factory=OvmParams)

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind(self.kind))
        object.__setattr__(self, "catchup_gap_factor_range", tuple(map(float, self.catchup_gap_factor_range)))
        object.__setattr__(self, "slowdown_speed_factor_range", tuple(map(float, self.slowdown_speed_factor_range)))
        if self.platoon_size < 2:
            raise InvalidSpec(f"platoon_size must be >= 2, got {self.platoon_size}")
        if not self.dt > 0 or not self.episode_seconds > 0:
            raise InvalidSpec("dt and episode_seconds must be positive")
        ratio = self.episode_seconds / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise InvalidSpec(f"episode_seconds / dt must be an integer, got {ratio}")
        if not (self.h_star > 0 and self.v_star > 0):
            raise InvalidSpec("h_star and v_star must be positive")
        for name in ("catchup_gap_factor_range", "slowdown_speed_factor_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise InvalidSpec(f"{name} must satisfy 0 < low <= high, got {(lo, hi)}")
        if not self.slowdown_ramp_seconds > 0:
            raise InvalidSpec("slowdown_ramp_seconds must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.episode_seconds / self.dt))


@dataclass(frozen=True)
class RewardWeights:
    w1: float = -1.0
    w2: float = -1.0
    w3: float = -0.1
    w4: float = -5.0
    collision_penalty: float = -1000.0


@dataclass(frozen=True)
class Observation:
    v_norm: float
    v_diff: float
    vh: float
    h_norm: float
    u_norm: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v_norm, self.v_diff, self.vh, self.h_norm, self.u_norm])

    @classmethod
    def from_array(cls, a) -> "Observation":
        return cls(*(float(x) for x in a))


def decode_action(a: int) -> tuple[float, float]:
    if isinstance(a, (bool, np.bool_)) or int(a) != a or not 0 <= a < N_ACTIONS:
        raise InvalidAction(f"action must be one of 0..{N_ACTIONS - 1}, got {a!r}")
    alpha, beta = GAIN_TABLE[int(a)]
    return float(alpha), float(beta)


def target_speed(spec: ScenarioSpec, t: float, v0: float | None = None) -> float:
    """Speed of the virtual leader at time ``t``.

    Slowdown ramps linearly from ``v0`` (the drawn initial speed) down to
    ``v_star`` over ``slowdown_ramp_seconds`` and holds it afterwards.
    """
    if spec.kind is ScenarioKind.CATCHUP or v0 is None:
        return spec.v_star
    frac = min(max(t / spec.slowdown_ramp_seconds, 0.0), 1.0)
    return v0 + (spec.v_star - v0) * frac


def reset(spec: ScenarioSpec, seed: int) -> tuple[PlatoonState, list[Observation]]:
    state = initial_state(spec, seed)
    obs = observe_all(state, spec, state.velocities)
    return state, [Observation.from_array(o) for o in obs]


def initial_state(spec: ScenarioSpec, seed: int) -> PlatoonState:
    rng = np.random.default_rng(seed)
    n = spec.platoon_size
    headways = np.full(n, spec.h_star)
    if spec.kind is ScenarioKind.CATCHUP:
        a = rng.uniform(*spec.catchup_gap_factor_range)
        headways[0] = a * spec.h_star
        v0 = spec.v_star
    else:
        b = rng.uniform(*spec.slowdown_speed_factor_range)
        v0 = min(b * spec.v_star, spec.limits.v_max)
    if not v0 > 0:
        raise InvalidSpec("initial speed must be positive")
    return PlatoonState.from_headways(headways, np.full(n, v0), v0, h_min=spec.limits.h_min)


def observe_all(state: PlatoonState, spec: ScenarioSpec, initial_speeds) -> np.ndarray:
    """Observations of every agent as a ``(V, 5)`` array."""
    v = state.velocities
    v_prev = state.predecessor_velocities
    h = state.headways
    v0 = np.asarray(initial_speeds, dtype=float)
    out = np.empty((state.size, OBS_DIM))
    out[:, 0] = (v - v0) / v0
    out[:, 1] = np.clip((v_prev - v) / 5.0, -2.0, 2.0)
    out[:, 2] = np.clip((optimal_velocity(h, spec.ovm) - v) / 5.0, -2.0, 2.0)
    out[:, 3] = (h + (v_prev - v) * spec.dt - spec.h_star) / spec.h_star
    out[:, 4] = state.accelerations / spec.limits.u_max
    return out


def observe(state: PlatoonState, i: int, spec: ScenarioSpec, initial_speeds) -> Observation:
    if not 0 <= i < state.size:
        raise IndexError(f"agent index {i} out of range for platoon of {state.size}")
    return Observation.from_array(observe_all(state, spec, initial_speeds)[i])


def reward_terms(h, v, u, v_target, spec: ScenarioSpec, weights: RewardWeights = RewardWeights()):
    """Shaped per-agent reward without the collision override (vectorised)."""
    h = np.asarray(h, dtype=float)
    hinge = np.maximum(2.0 * spec.ovm.h_stop - h, 0.0)
    return (weights.w1 * (h - spec.h_star) ** 2 + weights.w2 * (np.asarray(v) - v_target) ** 2
            + weights.w3 * np.asarray(u) ** 2 + weights.w4 * hinge ** 2)


def reward(state: PlatoonState, i: int, u: float, spec: ScenarioSpec,
           weights: RewardWeights = RewardWeights(), v_target: float | None = None) -> float:
    """Reward of agent ``i``; returns the collision penalty when its headway is <= h_min."""
    h = state.headways[i]
    if h <= spec.limits.h_min:
        return weights.collision_penalty
    vt = spec.v_star if v_target is None else v_target
    return float(reward_terms(h, state.velocities[i], u, vt, spec, weights))


def env_step(state: PlatoonState, actions: Sequence[int], spec: ScenarioSpec,
             weights: RewardWeights = RewardWeights(), v0: float | None = None,
             initial_speeds=None):
    """One MDP step for the whole platoon.

    Returns ``(state, observations (V, 5), rewards (V,), done)``. A collision
    anywhere hands every agent the collision penalty and ends the episode.
    """
    acts = np.asarray(actions)
    if acts.shape != (state.size,):
        raise DimensionMismatch(f"expected {state.size} actions, got shape {acts.shape}")
    if acts.dtype.kind not in "iu" or acts.min() < 0 or acts.max() >= N_ACTIONS:
        for a in acts:
            decode_action(a)
    gains = GAIN_TABLE[acts.astype(int)]
    u = gain_accel(state.headways, state.velocities, state.predecessor_velocities,
                   gains[:, 0], gains[:, 1], spec.ovm, spec.limits)
    if v0 is None:
        if spec.kind is ScenarioKind.CATCHUP:
            v0 = spec.v_star
        elif state.step_index == 0:
            v0 = state.leader_velocity
        else:
            raise ValueError("slowdown steps after the first need the episode's initial speed v0")
    k = state.step_index + 1
    v_lead = target_speed(spec, k * spec.dt, v0)
    nxt = step_platoon(state, u, v_lead, spec.dt, spec.limits)
    if initial_speeds is None:
        initial_speeds = np.full(state.size, v0)
    obs = observe_all(nxt, spec, initial_speeds)
    if nxt.collided:
        rewards = np.full(state.size, weights.collision_penalty)
    else:
        rewards = reward_terms(nxt.headways, nxt.velocities, nxt.accelerations, v_lead, spec, weights)
    done = nxt.collided or nxt.step_index >= spec.n_steps
    return nxt, obs, rewards, done


class PlatoonEnv:
    """Stateful wrapper that remembers the episode's initial speeds and ramp start."""

    def __init__(self, spec: ScenarioSpec, weights: RewardWeights = RewardWeights()):
        self.spec = spec
        self.weights = weights
        self.state: PlatoonState | None = None
        self.v0 = None
        self.initial_speeds = None
        self.done = True

    def reset(self, seed: int) -> np.ndarray:
        self.state = initial_state(self.spec, seed)
        self.v0 = float(self.state.leader_velocity)
        self.initial_speeds = self.state.velocities.copy()
        self.done = False
        return observe_all(self.state, self.spec, self.initial_speeds)

    def step(self, actions):
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset() first")
        self.state, obs, rewards, self.done = env_step(
            self.state, actions, self.spec, self.weights, self.v0, self.initial_speeds)
        return obs, rewards, self.done
