"""Optimal Velocity Model car-following law."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import DEFAULT_LIMITS, DynamicsLimits
from .errors import InvalidSpec


@dataclass(frozen=True)
class OvmParams:
    alpha: float = 0.5
    beta: float = 0.5
    h_stop: float = 5.0
    h_full: float = 35.0
    v_max: float = 30.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise InvalidSpec("OVM gains must be non-negative")
        if not 0 < self.h_stop < self.h_full:
            raise InvalidSpec(f"need 0 < h_stop < h_full, got {self.h_stop}, {self.h_full}")


def optimal_velocity(h, p: OvmParams = OvmParams()):
    """Headway-to-speed policy: zero below ``h_stop``, cosine ramp, ``v_max`` above ``h_full``."""
    h = np.asarray(h, dtype=float)
    frac = np.clip((h - p.h_stop) / (p.h_full - p.h_stop), 0.0, 1.0)
    # cos(pi f) written as sin(pi (1/2 - f)) so the midpoint is exactly v_max / 2
    v = 0.5 * p.v_max * (1.0 - np.sin(np.pi * (0.5 - frac)))
    v = np.where(h < p.h_stop, 0.0, np.where(h > p.h_full, p.v_max, v))
    return float(v) if v.ndim == 0 else v


def ovm_accel(h, v, v_prev, p: OvmParams, limits: DynamicsLimits = DEFAULT_LIMITS):
    return gain_accel(h, v, v_prev, p.alpha, p.beta, p, limits)


def gain_accel(h, v, v_prev, alpha, beta, p: OvmParams = OvmParams(),
               limits: DynamicsLimits = DEFAULT_LIMITS):
    """OVM command with gains given separately, so whole platoons go in one call.

    Only the headway constants of ``p`` are used; ``alpha``/``beta`` may be arrays.
    """
    v = np.asarray(v, dtype=float)
    u = alpha * (optimal_velocity(h, p) - v) + beta * (np.asarray(v_prev, dtype=float) - v)
    u = np.minimum(np.maximum(u, limits.u_min), limits.u_max)
    return float(u) if np.ndim(u) == 0 else u
