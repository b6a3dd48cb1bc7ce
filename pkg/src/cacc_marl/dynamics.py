"""Longitudinal platoon physics.

Vehicles carry positions relative to a shared ``origin``; headways are always
derived from those offsets, so shifting the origin moves every vehicle without
touching a single headway bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidSpec


@dataclass(frozen=True)
class DynamicsLimits:
    h_min: float = 1.0
    v_max: float = 30.0
    u_min: float = -2.5
    u_max: float = 2.5

    def __post_init__(self):
        if not self.h_min > 0:
            raise InvalidSpec(f"h_min must be positive, got {self.h_min}")
        if not self.v_max > 0:
            raise InvalidSpec(f"v_max must be positive, got {self.v_max}")
        if not self.u_min < 0 < self.u_max:
            raise InvalidSpec(f"need u_min < 0 < u_max, got {self.u_min}, {self.u_max}")


DEFAULT_LIMITS = DynamicsLimits()


@dataclass(frozen=True)
class VehicleState:
    position: float
    velocity: float
    acceleration: float = 0.0


def clamp_accel(u, limits: DynamicsLimits = DEFAULT_LIMITS):
    """Clip an acceleration command (scalar or array) to the comfort limits."""
    out = np.minimum(np.maximum(u, limits.u_min), limits.u_max)
    return float(out) if np.ndim(out) == 0 else out


def _advance(v, u, dt, v_max):
    """Exact distance and end speed for constant ``u`` with speed clipped to [0, v_max].

    Works elementwise on arrays. The clip instant splits the step into a
    quadratic segment and a constant-speed segment.
    """
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    v_free = v + u * dt
    hits_top = (u > 0) & (v_free > v_max)
    hits_floor = (u < 0) & (v_free < 0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t_top = np.where(hits_top, (v_max - v) / np.where(u == 0, 1.0, u), dt)
        t_floor = np.where(hits_floor, -v / np.where(u == 0, 1.0, u), dt)
    t_hit = np.where(hits_top, t_top, np.where(hits_floor, t_floor, dt))
    v_sat = np.where(hits_top, v_max, 0.0)
    dist = v * t_hit + 0.5 * u * t_hit * t_hit + v_sat * (dt - t_hit)
    v_end = np.where(hits_top, v_max, np.where(hits_floor, 0.0, v_free))
    return dist, v_end


def step_vehicle(s: VehicleState, u: float, dt: float,
                 limits: DynamicsLimits = DEFAULT_LIMITS) -> VehicleState:
    if not dt > 0:
        raise InvalidSpec(f"dt must be positive, got {dt}")
    dist, v_end = _advance(s.velocity, u, dt, limits.v_max)
    return VehicleState(s.position + float(dist), float(v_end), float(u))


@dataclass(frozen=True)
class PlatoonState:
    """Platoon of V vehicles behind a virtual leader.

    ``offsets[0]`` is the platoon leader (PL), ``offsets[-1]`` the tail.
    Absolute position of vehicle i is ``origin + offsets[i]``.
    """

    offsets: np.ndarray
    velocities: np.ndarray
    accelerations: np.ndarray
    leader_offset: float
    leader_velocity: float
    origin: float = 0.0
    step_index: int = 0
    collided: bool = False
    h_min: float = field(default=DEFAULT_LIMITS.h_min, repr=False)

    @classmethod
    def from_headways(cls, headways, velocities, leader_velocity,
                      origin: float = 0.0, h_min: float = DEFAULT_LIMITS.h_min):
        """Build a state with the tail vehicle at ``origin`` and the given gaps.

        ``headways[0]`` is the gap between the virtual leader and the PL.
        """
        h = np.asarray(headways, dtype=float)
        vel = np.asarray(velocities, dtype=float)
        if h.shape != vel.shape or h.ndim != 1:
            raise DimensionMismatch("headways and velocities must be 1-D of equal length")
        # cumulative gaps measured from the tail forward
        ahead = np.cumsum(h[::-1])[::-1]
        offsets = np.empty_like(h)
        offsets[:-1] = ahead[1:]
        offsets[-1] = 0.0
        leader = float(ahead[0])
        state = cls(offsets, vel.copy(), np.zeros_like(vel), leader,
                    float(leader_velocity), float(origin), 0, False, h_min)
        return replace(state, collided=bool(np.any(state.headways <= h_min)))

    @property
    def size(self) -> int:
        return len(self.offsets)

    @property
    def positions(self) -> np.ndarray:
        return self.origin + self.offsets

    @property
    def leader_position(self) -> float:
        return self.origin + self.leader_offset

    @property
    def predecessor_velocities(self) -> np.ndarray:
        return np.concatenate(([self.leader_velocity], self.velocities[:-1]))

    @property
    def headways(self) -> np.ndarray:
        ahead = np.concatenate(([self.leader_offset], self.offsets[:-1]))
        return ahead - self.offsets

    @property
    def vehicles(self) -> list[VehicleState]:
        return [VehicleState(float(p), float(v), float(a))
                for p, v, a in zip(self.positions, self.velocities, self.accelerations)]

    def shifted(self, c: float) -> "PlatoonState":
        """Same platoon translated by ``c`` metres."""
        return replace(self, origin=self.origin + c)


def step_platoon(state: PlatoonState, controls: Sequence[float], leader_speed_next: float,
                 dt: float, limits: DynamicsLimits = DEFAULT_LIMITS) -> PlatoonState:
    """Advance every vehicle by one synchronous step.

    The virtual leader's speed is taken to vary linearly between its current
    value and ``leader_speed_next``, so the trapezoid rule integrates it exactly.
    """
    u = np.asarray(controls, dtype=float)
    if u.shape != (state.size,):
        raise DimensionMismatch(f"expected {state.size} controls, got shape {u.shape}")
    if not dt > 0:
        raise InvalidSpec(f"dt must be positive, got {dt}")
    u = np.minimum(np.maximum(u, limits.u_min), limits.u_max)
    dist, v_next = _advance(state.velocities, u, dt, limits.v_max)
    leader_offset = state.leader_offset + 0.5 * (state.leader_velocity + leader_speed_next) * dt
    nxt = PlatoonState(state.offsets + dist, v_next, u, leader_offset, float(leader_speed_next),
                       state.origin, state.step_index + 1, False, limits.h_min)
    return replace(nxt, collided=bool(np.any(nxt.headways <= limits.h_min)))
