"""Quasi-static power-split HEV model with a time-varying SOC corridor.

Sign convention: battery power > 0 discharges (SOC falls), < 0 charges.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from .drivecycle import DriveCycle

GRAVITY = 9.81


@dataclass(frozen=True)
class VehicleParams:
    """Prius-like defaults. Powers in W, fuel in g."""

    mass_kg: float = 1500.0
    drag_coeff: float = 0.26
    frontal_area_m2: float = 2.0
    rolling_resist: float = 0.01
    air_density_kgpm3: float = 1.2
    driveline_eff: float = 1.0
    battery_capacity_Ah: float = 6.5
    battery_voltage_V: float = 202.0
    engine_power_max_W: float = 56000.0
    engine_idle_fuel_gps: float = 0.15
    engine_eff: float = 0.36
    fuel_lhv_Jpg: float = 43000.0
    motor_power_max_W: float = 50000.0
    # normalized commands below this keep the engine off (0: only an exact 0 does)
    engine_on_threshold: float = 0.0
    # speed normalization for the observation
    v_max_mps: float = 34.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "engine_on_threshold":
                if not 0.0 <= value < 1.0:
                    raise ValueError("engine_on_threshold must lie in [0, 1)")
            elif not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{f.name} must be strictly positive, got {value}")
        for name in ("driveline_eff", "engine_eff"):
            if getattr(self, name) > 1.0:
                raise ValueError(f"{name} must lie in (0, 1]")

    @property
    def battery_energy_J(self) -> float:
        return self.battery_capacity_Ah * 3600.0 * self.battery_voltage_V

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SocEnvelope:
    """SOC corridor: ramps from ``B`` out to ``[L, H]`` over ``[0, bl]``,
    stays flat until ``br`` and closes back onto ``B`` at ``Ts``."""

    H: float
    L: float
    B: float
    bl: int
    br: int
    Ts: int

    def __post_init__(self):
        if not 0 < self.L < self.B < self.H < 1:
            raise ValueError(f"need 0 < L < B < H < 1, got L={self.L} B={self.B} H={self.H}")
        if not 0 < self.bl < self.br < self.Ts:
            raise ValueError(f"need 0 < bl < br < Ts, got {self.bl}, {self.br}, {self.Ts}")

    @classmethod
    def default(cls, Ts: int, H: float = 0.7, L: float = 0.5, B: float = 0.6) -> "SocEnvelope":
        return cls(H=H, L=L, B=B, bl=math.ceil(0.1 * Ts), br=math.floor(0.9 * Ts), Ts=Ts)

    def max_slope(self) -> float:
        """Largest per-step change of either limit."""
        return max(
            (self.H - self.B) / self.bl,
            (self.B - self.L) / self.bl,
            (self.H - self.B) / (self.Ts - self.br),
            (self.B - self.L) / (self.Ts - self.br),
        )


def _limit(env: SocEnvelope, t, extreme: float):
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t > env.Ts):
        raise ValueError(f"step index outside [0, {env.Ts}]")
    rise = (extreme - env.B) / env.bl * t + env.B
    fall = (extreme - env.B) / (env.br - env.Ts) * (t - env.Ts) + env.B
    out = np.where(t <= env.bl, rise, np.where(t > env.br, fall, extreme))
    return float(out) if out.ndim == 0 else out


def soc_upper_limit(env: SocEnvelope, t):
    return _limit(env, t, env.H)


def soc_lower_limit(env: SocEnvelope, t):
    return _limit(env, t, env.L)


def step_cost(soc, env: SocEnvelope, t):
    """Distance of ``soc`` outside the corridor at step ``t`` (zero inside)."""
    soc = np.asarray(soc, dtype=np.float64)
    cost = np.maximum(soc - soc_upper_limit(env, t), 0.0) + np.maximum(soc_lower_limit(env, t) - soc, 0.0)
    return float(cost) if cost.ndim == 0 else cost


def demand_power(params: VehicleParams, v, a):
    """Wheel power request for speed ``v`` (m/s) and acceleration ``a`` (m/s^2)."""
    v = np.asarray(v, dtype=np.float64)
    m = params.mass_kg
    p = (
        m * a * v
        + 0.5 * params.air_density_kgpm3 * params.drag_coeff * params.frontal_area_m2 * v**3
        + m * GRAVITY * params.rolling_resist * v
    ) / params.driveline_eff
    return float(p) if np.ndim(p) == 0 else p


def fuel_rate(params: VehicleParams, engine_power):
    """Willans line in g/s; zero with the engine off."""
    p = np.asarray(engine_power, dtype=np.float64)
    if np.any(p < 0) or np.any(p > params.engine_power_max_W * (1 + 1e-12)):
        raise ValueError(f"engine power outside [0, {params.engine_power_max_W}] W")
    rate = np.where(
        p > 0, params.engine_idle_fuel_gps + p / (params.engine_eff * params.fuel_lhv_Jpg), 0.0
    )
    return float(rate) if rate.ndim == 0 else rate


@dataclass(frozen=True)
class EnvState:
    t: int
    soc: float
    velocity_mps: float
    fuel_g_cum: float = 0.0


class TransitionTuple(NamedTuple):
    s: np.ndarray
    a: float
    s_next: np.ndarray
    r: float
    c: float
    done: bool


class StepDone(RuntimeError):
    """Stepping an environment whose episode has ended."""


def observe(soc, velocity_mps, params: VehicleParams) -> np.ndarray:
    """Normalized ``[soc, v / v_max]``; works elementwise on arrays."""
    return np.stack(
        [np.asarray(soc, dtype=np.float64), np.asarray(velocity_mps, dtype=np.float64) / params.v_max_mps],
        axis=-1,
    )


def engine_power(params: VehicleParams, action):
    action = np.asarray(action, dtype=np.float64)
    return np.where(action >= params.engine_on_threshold, action * params.engine_power_max_W, 0.0)


def transition(soc, t: int, action, cycle: DriveCycle, params: VehicleParams, env: SocEnvelope):
    """Vectorized core shared by :func:`env_step` and :class:`BatchEnv`.

    Returns ``(soc_next, fuel_g, cost)`` for the step ``t -> t + 1``.
    """
    dt = cycle.timestep_s
    v0, v1 = cycle.speeds[t], cycle.speeds[t + 1]
    p_demand = demand_power(params, 0.5 * (v0 + v1), (v1 - v0) / dt)
    p_engine = engine_power(params, action)
    p_batt = np.clip(p_demand - p_engine, -params.motor_power_max_W, params.motor_power_max_W)
    soc_next = np.clip(soc - p_batt * dt / params.battery_energy_J, 0.0, 1.0)
    fuel = fuel_rate(params, p_engine) * dt
    cost = step_cost(soc_next, env, t + 1)
    return soc_next, fuel, cost


def reset(cycle: DriveCycle, params: VehicleParams, env: SocEnvelope, initial_soc: float | None = None) -> EnvState:
    soc = env.B if initial_soc is None else float(initial_soc)
    if not 0.0 <= soc <= 1.0:
        raise ValueError(f"initial SOC {soc} outside [0, 1]")
    return EnvState(t=0, soc=soc, velocity_mps=float(cycle.speeds[0]), fuel_g_cum=0.0)


def env_step(state: EnvState, action: float, cycle: DriveCycle, params: VehicleParams, env: SocEnvelope):
    """Advance one step. Returns ``(next_state, TransitionTuple)``."""
    if state.t >= env.Ts or state.t >= cycle.n_steps:
        raise StepDone(f"episode finished at t={state.t}")
    if not 0.0 <= action <= 1.0:
        raise ValueError(f"action {action} outside [0, 1]")
    soc_next, fuel, cost = transition(state.soc, state.t, action, cycle, params, env)
    t1 = state.t + 1
    nxt = EnvState(t1, float(soc_next), float(cycle.speeds[t1]), state.fuel_g_cum + float(fuel))
    tr = TransitionTuple(
        s=observe(state.soc, state.velocity_mps, params),
        a=float(action),
        s_next=observe(nxt.soc, nxt.velocity_mps, params),
        r=-float(fuel),
        c=float(cost),
        done=t1 == env.Ts,
    )
    return nxt, tr


class BatchEnv:
    """``n`` synchronized copies of the environment (all share ``t``)."""

    def __init__(self, cycle: DriveCycle, params: VehicleParams, envelope: SocEnvelope, n: int):
        if envelope.Ts != cycle.n_steps:
            raise ValueError(f"envelope Ts={envelope.Ts} but cycle has {cycle.n_steps} steps")
        self.cycle, self.params, self.envelope, self.n = cycle, params, envelope, n
        self.t = 0
        self.soc = np.full(n, envelope.B)
        self.fuel_g_cum = np.zeros(n)

    def reset(self, initial_soc=None) -> np.ndarray:
        soc = np.full(self.n, self.envelope.B) if initial_soc is None else np.asarray(initial_soc, dtype=np.float64)
        if soc.shape != (self.n,) or np.any(soc < 0) or np.any(soc > 1):
            raise ValueError("initial SOC must be n values in [0, 1]")
        self.t = 0
        self.soc = soc.copy()
        self.fuel_g_cum = np.zeros(self.n)
        return self.obs()

    def obs(self) -> np.ndarray:
        return observe(self.soc, np.full(self.n, self.cycle.speeds[self.t]), self.params)

    def phase(self) -> np.ndarray:
        """Episode progress ``t / Ts`` per copy, shape ``(n, 1)``."""
        return np.full((self.n, 1), self.t / self.envelope.Ts)

    @property
    def done(self) -> bool:
        return self.t >= self.envelope.Ts

    def step(self, actions):
        """Returns ``(obs_next, reward, cost, done)``."""
        if self.done:
            raise StepDone(f"episode finished at t={self.t}")
        actions = np.asarray(actions, dtype=np.float64).reshape(self.n)
        soc, fuel, cost = transition(self.soc, self.t, actions, self.cycle, self.params, self.envelope)
        self.soc = soc
        self.fuel_g_cum = self.fuel_g_cum + fuel
        self.t += 1
        return self.obs(), -fuel, cost, self.done
