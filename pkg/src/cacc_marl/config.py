"""Training configuration and its line-oriented ``key = value`` file format.

Keys are dotted (``consensus.epsilon = 1e-3``); ``#`` starts a comment;
list values are comma separated. Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .consensus import DEFAULT_EPSILON, ConsensusConfig
from .dynamics import DynamicsLimits
from .env import RewardWeights, ScenarioKind, ScenarioSpec
from .errors import CaccError, ConfigError
from .ovm import OvmParams

# key -> (default, help). The type of the default drives parsing.
DEFAULTS: dict[str, tuple[object, str]] = {
    "scenario.kind": ("catchup", "catchup | slowdown"),
    "scenario.platoon_size": (4, "number of controlled vehicles V"),
    "scenario.h_star": (20.0, "target headway [m]"),
    "scenario.v_star": (15.0, "target speed [m/s]"),
    "scenario.episode_seconds": (60.0, "episode horizon T [s]"),
    "scenario.dt": (0.1, "control interval [s]"),
    "scenario.catchup_gap_factor_range": ([3.0, 4.0], "PL initial headway factor range (catchup)"),
    "scenario.slowdown_speed_factor_range": ([1.5, 2.5], "initial speed factor range (slowdown)"),
    "scenario.slowdown_ramp_seconds": (30.0, "duration of the leader's speed ramp [s]"),
    "limits.h_min": (1.0, "collision headway [m]"),
    "limits.v_max": (30.0, "speed cap [m/s]"),
    "limits.u_min": (-2.5, "deceleration limit [m/s^2]"),
    "limits.u_max": (2.5, "acceleration limit [m/s^2]"),
    "ovm.h_stop": (5.0, "OVM stop headway [m]"),
    "ovm.h_full": (35.0, "OVM full-speed headway [m]"),
    "reward.w1": (-1.0, "headway error weight"),
    "reward.w2": (-1.0, "speed error weight"),
    "reward.w3": (-0.1, "acceleration weight"),
    "reward.w4": (-5.0, "safety hinge weight"),
    "reward.collision_penalty": (-1000.0, "reward given to every agent on collision"),
    "network.hidden": ([64], "hidden layer widths"),
    "network.activation": ("tanh", "tanh | relu"),
    "train.total_steps": (100_000, "environment steps per seed"),
    "train.batch_len": (60, "steps per rollout batch (one consensus round each)"),
    "train.gamma": (0.99, "discount factor"),
    "train.actor_lr": (5.0e-4, "actor gradient-ascent step"),
    "train.entropy_coef": (0.01, "entropy bonus weight"),
    "train.reward_scale": (100.0, "training rewards are divided by this (logs stay raw)"),
    "train.max_grad_norm": (0.0, "per-network gradient norm clip; 0 disables"),
    "train.seeds": ([0, 1, 2], "training seeds"),
    "train.eval_episodes": (20, "greedy evaluation episodes"),
    "train.eval_interval": (0, "steps between evaluations; 0 = initial and final only"),
    "train.eval_seed_base": (10_000, "evaluation episode e uses seed eval_seed_base + e"),
    "train.log_interval": (1, "batches per JSON-lines record"),
    "consensus.mode": ("macacc", "macacc | mean | none"),
    "consensus.epsilon": ("auto", "neighbour pull; auto = 1e-3 catchup, 1e-4 slowdown"),
    "consensus.lambda": (2.5e-4, "critic gradient step"),
    "consensus.resolution": (0, "quantization resolution n; 0 = raw exchange"),
    "consensus.wire": ("auto", "dense | sparse | auto (smaller of the two)"),
    "output_dir": ("runs/default", "artifact directory"),
}


@dataclass(frozen=True)
class TrainConfig:
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    weights: RewardWeights = field(default_factory=RewardWeights)
    consensus: ConsensusConfig = field(default_factory=ConsensusConfig)
    hidden: tuple = (64,)
    activation: str = "tanh"
    total_steps: int = 100_000
    batch_len: int = 60
    gamma: float = 0.99
    actor_lr: float = 5.0e-4
    entropy_coef: float = 0.01
    reward_scale: float = 100.0
    max_grad_norm: float = 0.0
    seeds: tuple = (0, 1, 2)
    eval_episodes: int = 20
    eval_interval: int = 0
    eval_seed_base: int = 10_000
    log_interval: int = 1
    output_dir: str = "runs/default"

    def __post_init__(self):
        if self.total_steps < 0 or self.batch_len < 1 or self.eval_episodes < 1:
            raise ConfigError("total_steps >= 0, batch_len >= 1 and eval_episodes >= 1 required")
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if not self.reward_scale > 0 or self.max_grad_norm < 0 or self.log_interval < 1:
            raise ConfigError("reward_scale > 0, max_grad_norm >= 0, log_interval >= 1 required")


def _parse(raw: str, like, key: str):
    raw = raw.strip()
    try:
        if isinstance(like, list):
            item = like[0] if like else 0.0
            return [_parse(p, item, key) for p in raw.split(",") if p.strip()]
        if isinstance(like, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(like, int):
            return int(float(raw)) if float(raw).is_integer() else int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from exc
    return raw


def _format(value) -> str:
    if isinstance(value, (list, tuple)):
        return ", ".join(_format(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def defaults() -> dict:
    return {k: (list(v) if isinstance(v, list) else v) for k, (v, _) in DEFAULTS.items()}


def apply_overrides(flat: dict, pairs) -> dict:
    """Apply ``key=value`` strings (or ``(key, value)`` tuples) to a flat mapping."""
    out = dict(flat)
    for pair in pairs:
        if isinstance(pair, str):
            if "=" not in pair:
                raise ConfigError(f"override {pair!r} is not key=value")
            key, raw = pair.split("=", 1)
        else:
            key, raw = pair
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _parse(str(raw), DEFAULTS[key][0], key)
    return out


def parse_text(text: str, base: dict | None = None) -> dict:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        pairs.append((key, raw))
    return apply_overrides(defaults() if base is None else base, pairs)


def load_flat(path, overrides=()) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror or exc}") from exc
    return apply_overrides(parse_text(text), overrides)


def resolve(flat: dict) -> dict:
    """Fill scenario-keyed defaults so the mapping fully determines a run."""
    out = dict(flat)
    if out["consensus.epsilon"] in ("auto", None):
        out["consensus.epsilon"] = DEFAULT_EPSILON[str(out["scenario.kind"]).lower()]
    else:
        out["consensus.epsilon"] = float(out["consensus.epsilon"])
    return out


def to_text(flat: dict) -> str:
    lines = [f"{k} = {_format(flat[k])}" for k in DEFAULTS]
    return "\n".join(lines) + "\n"


def build(flat: dict) -> TrainConfig:
    kind = str(flat["scenario.kind"]).lower()
    if kind not in {k.value for k in ScenarioKind}:
        raise ConfigError(f"scenario.kind must be catchup or slowdown, got {kind!r}")
    for name in ("scenario.catchup_gap_factor_range", "scenario.slowdown_speed_factor_range"):
        if len(flat[name]) != 2:
            raise ConfigError(f"{name} needs exactly two values")
    f = resolve(flat)
    try:
        limits = DynamicsLimits(f["limits.h_min"], f["limits.v_max"], f["limits.u_min"], f["limits.u_max"])
        scenario = ScenarioSpec(
            kind=kind,
            platoon_size=f["scenario.platoon_size"],
            h_star=f["scenario.h_star"],
            v_star=f["scenario.v_star"],
            episode_seconds=f["scenario.episode_seconds"],
            dt=f["scenario.dt"],
            catchup_gap_factor_range=tuple(f["scenario.catchup_gap_factor_range"]),
            slowdown_speed_factor_range=tuple(f["scenario.slowdown_speed_factor_range"]),
            slowdown_ramp_seconds=f["scenario.slowdown_ramp_seconds"],
            limits=limits,
            ovm=OvmParams(h_stop=f["ovm.h_stop"], h_full=f["ovm.h_full"], v_max=limits.v_max),
        )
        weights = RewardWeights(f["reward.w1"], f["reward.w2"], f["reward.w3"], f["reward.w4"],
                                f["reward.collision_penalty"])
        consensus = ConsensusConfig(f["consensus.epsilon"], f["consensus.lambda"], f["consensus.mode"],
                                    f["consensus.resolution"], f["consensus.wire"])
        return TrainConfig(
            scenario=scenario, weights=weights, consensus=consensus,
            hidden=tuple(f["network.hidden"]), activation=f["network.activation"],
            total_steps=f["train.total_steps"], batch_len=f["train.batch_len"],
            gamma=f["train.gamma"], actor_lr=f["train.actor_lr"],
            entropy_coef=f["train.entropy_coef"], reward_scale=f["train.reward_scale"],
            max_grad_norm=f["train.max_grad_norm"], seeds=tuple(f["train.seeds"]),
            eval_episodes=f["train.eval_episodes"], eval_interval=f["train.eval_interval"],
            eval_seed_base=f["train.eval_seed_base"], log_interval=f["train.log_interval"],
            output_dir=str(f["output_dir"]),
        )
    except ConfigError:
        raise
    except CaccError as exc:
        raise ConfigError(str(exc)) from exc


def make_config(**overrides) -> TrainConfig:
    """Build a config from defaults plus keyword overrides using dotted keys with ``__``.

    ``make_config(consensus__mode="none", train__total_steps=0)``
    """
    pairs = [(k.replace("__", "."), _format(v)) for k, v in overrides.items()]
    return build(apply_overrides(defaults(), pairs))
