"""Small dense networks with hand-written reverse-mode gradients.

Parameters live in one flat float64 vector. Layout, layer by layer: the
weight matrix of shape ``(fan_in, fan_out)`` in row-major order, then the
bias of length ``fan_out``. ``unflatten`` returns views into that vector.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidSpec, Malformed, NonFinite

ACTIVATIONS = ("tanh", "relu")
HEADS = ("logits", "scalar")


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple = (5, 64, 4)
    activation: str = "tanh"
    head: str = "logits"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise InvalidSpec(f"bad layer sizes {self.layer_sizes}")
        if self.activation not in ACTIVATIONS:
            raise InvalidSpec(f"unknown activation {self.activation!r}")
        if self.head not in HEADS:
            raise InvalidSpec(f"unknown head {self.head!r}")
        if self.head == "scalar" and self.layer_sizes[-1] != 1:
            raise InvalidSpec("scalar head needs output size 1")

    @property
    def shapes(self):
        return list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.shapes)


def actor_spec(hidden=(64,), activation="tanh", n_obs=5, n_actions=4) -> MlpSpec:
    return MlpSpec((n_obs, *hidden, n_actions), activation, "logits")


def critic_spec(hidden=(64,), activation="tanh", n_obs=5) -> MlpSpec:
    return MlpSpec((n_obs, *hidden, 1), activation, "scalar")


ACTOR = actor_spec()
CRITIC = critic_spec()


def unflatten(p: np.ndarray, spec: MlpSpec):
    """Split a parameter vector (or a stack of them, shape ``(..., d)``) into (W, b) views."""
    p = np.asarray(p)
    if p.shape[-1] != spec.n_params:
        raise DimensionMismatch(f"expected {spec.n_params} parameters, got {p.shape[-1]}")
    lead = p.shape[:-1]
    layers, k = [], 0
    for fan_in, fan_out in spec.shapes:
        w = p[..., k:k + fan_in * fan_out].reshape(*lead, fan_in, fan_out)
        k += fan_in * fan_out
        b = p[..., k:k + fan_out]
        k += fan_out
        layers.append((w, b))
    return layers


def flatten(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b.ravel()]) for w, b in layers])


def _orthogonal(rng, fan_in, fan_out, gain):
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return gain * q


def init_orthogonal(spec: MlpSpec, gain: float = 1.0, seed=0, output_gain: float = 0.01) -> np.ndarray:
    """Orthogonal weights (``gain`` on hidden layers, ``output_gain`` on the last), zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    n = len(spec.shapes)
    for k, (fan_in, fan_out) in enumerate(spec.shapes):
        g = output_gain if k == n - 1 else gain
        layers.append((_orthogonal(rng, fan_in, fan_out, g), np.zeros(fan_out)))
    return flatten(layers)


def _as_batch(obs) -> np.ndarray:
    if hasattr(obs, "as_array"):
        obs = obs.as_array()
    x = np.asarray(obs, dtype=float)
    return x[None, :] if x.ndim == 1 else x


def _act(z, kind):
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def forward(p: np.ndarray, spec: MlpSpec, obs):
    """Raw network output for a batch, shape ``(N, out)``, plus the activations cache."""
    x = _as_batch(obs)
    if x.shape[-1] != spec.layer_sizes[0]:
        raise DimensionMismatch(f"expected inputs of size {spec.layer_sizes[0]}, got {x.shape[-1]}")
    layers = unflatten(p, spec)
    acts = [x]
    for k, (w, b) in enumerate(layers):
        z = x @ w + b
        x = z if k == len(layers) - 1 else _act(z, spec.activation)
        acts.append(x)
    if not np.all(np.isfinite(x)):
        raise NonFinite("network output is not finite; parameters are likely corrupt")
    return x, acts


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def policy_forward(p: np.ndarray, obs, spec: MlpSpec = ACTOR) -> np.ndarray:
    """Action probabilities; shape ``(4,)`` for one observation, ``(N, 4)`` for a batch."""
    out, _ = forward(p, spec, obs)
    probs = softmax(out)
    return probs[0] if np.ndim(_raw(obs)) == 1 else probs


def value_forward(p: np.ndarray, obs, spec: MlpSpec = CRITIC):
    out, _ = forward(p, spec, obs)
    v = out[:, 0]
    return float(v[0]) if np.ndim(_raw(obs)) == 1 else v


def _raw(obs):
    return obs.as_array() if hasattr(obs, "as_array") else obs


def backward(p: np.ndarray, spec: MlpSpec, obs, upstream) -> np.ndarray:
    """Gradient of ``sum(upstream * output)`` with respect to every parameter.

    ``upstream`` has the output's shape: ``(N, out)``, or ``(N,)`` for a scalar head.
    """
    out, acts = forward(p, spec, obs)
    g = np.asarray(upstream, dtype=float)
    if g.ndim == 0 and out.size == 1:
        g = g.reshape(out.shape)
    elif g.ndim == out.ndim - 1 and out.shape[-1] == 1:
        g = g[..., None]
    elif g.ndim == 1 and out.shape[0] == 1:
        g = g[None, :]
    if g.shape != out.shape:
        raise DimensionMismatch(f"upstream shape {g.shape} does not match output {out.shape}")
    return _backprop(unflatten(p, spec), acts, g, spec.activation)


def _backprop(layers, acts, g, activation) -> np.ndarray:
    grads = [None] * len(layers)
    for k in range(len(layers) - 1, -1, -1):
        w, _ = layers[k]
        grads[k] = (acts[k].T @ g, g.sum(axis=0))
        if k:
            g = g @ w.T
            a = acts[k]
            g = g * (1.0 - a * a) if activation == "tanh" else g * (a > 0)
    return flatten(grads)


def batched_policy(stack: np.ndarray, spec: MlpSpec, obs: np.ndarray) -> np.ndarray:
    """Probabilities for V agents at once: ``stack`` is ``(V, d)``, ``obs`` is ``(V, n_obs)``."""
    x = obs[:, None, :]
    layers = unflatten(stack, spec)
    for k, (w, b) in enumerate(layers):
        x = x @ w + b[:, None, :]
        if k < len(layers) - 1:
            x = _act(x, spec.activation)
    logits = x[:, 0, :]
    if not np.all(np.isfinite(logits)):
        raise NonFinite("policy logits are not finite")
    return softmax(logits)


# checkpoint format: magic, version, activation tag, head tag, n sizes, sizes,
# float64 params (all little-endian), crc32 of everything before it
_MAGIC = b"CMLP"
_VERSION = 1


def encode_params(p: np.ndarray, spec: MlpSpec) -> bytes:
    p = np.asarray(p, dtype="<f8")
    if p.shape != (spec.n_params,):
        raise DimensionMismatch(f"expected {spec.n_params} parameters, got {p.shape}")
    head = struct.pack("<4sBBBH", _MAGIC, _VERSION, ACTIVATIONS.index(spec.activation),
                       HEADS.index(spec.head), len(spec.layer_sizes))
    head += struct.pack(f"<{len(spec.layer_sizes)}I", *spec.layer_sizes)
    body = head + p.tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def decode_params(data: bytes) -> tuple[np.ndarray, MlpSpec]:
    fixed = struct.calcsize("<4sBBBH")
    if len(data) < fixed + 4:
        raise Malformed("checkpoint truncated")
    magic, version, act, head, n = struct.unpack_from("<4sBBBH", data)
    if magic != _MAGIC or version != _VERSION:
        raise Malformed("not a parameter checkpoint")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise Malformed("checkpoint checksum mismatch")
    if act >= len(ACTIVATIONS) or head >= len(HEADS):
        raise Malformed("unknown activation or head tag")
    try:
        sizes = struct.unpack_from(f"<{n}I", data, fixed)
        spec = MlpSpec(sizes, ACTIVATIONS[act], HEADS[head])
    except (struct.error, InvalidSpec) as exc:
        raise Malformed(f"bad checkpoint header: {exc}") from exc
    start = fixed + 4 * n
    if len(data) - 4 - start != 8 * spec.n_params:
        raise Malformed("checkpoint length does not match its header")
    p = np.frombuffer(data, dtype="<f8", count=spec.n_params, offset=start).astype(float)
    return p, spec
