"""Reference speed traces the powertrain environment has to follow."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

KMH_TO_MPS = 1.0 / 3.6


class CycleError(ValueError):
    """Malformed or physically invalid drive cycle."""


class NegativeSpeed(CycleError):
    pass


@dataclass(frozen=True)
class DriveCycle:
    """Uniformly sampled speed trace.

    ``speeds`` holds ``Ts + 1`` samples in m/s, one per step boundary.
    """

    speeds: np.ndarray
    timestep_s: float = 1.0
    name: str = "cycle"

    def __post_init__(self):
        speeds = np.asarray(self.speeds, dtype=np.float64)
        if speeds.ndim != 1 or speeds.size < 2:
            raise CycleError("a cycle needs at least two speed samples")
        if not np.all(np.isfinite(speeds)):
            raise CycleError("speeds must be finite")
        if np.any(speeds < 0):
            raise NegativeSpeed(f"negative speed at index {int(np.argmax(speeds < 0))}")
        if not self.timestep_s > 0:
            raise CycleError("timestep_s must be positive")
        speeds.setflags(write=False)
        object.__setattr__(self, "speeds", speeds)

    @property
    def n_steps(self) -> int:
        """Episode length ``Ts``."""
        return self.speeds.size - 1

    @property
    def duration_s(self) -> float:
        return self.n_steps * self.timestep_s

    def window(self, start_s: float = 0.0, duration_s: float | None = None) -> "DriveCycle":
        """Sub-trace starting at ``start_s`` lasting ``duration_s`` seconds."""
        i0 = int(round(start_s / self.timestep_s))
        if duration_s is None:
            i1 = self.n_steps
        else:
            i1 = i0 + int(round(duration_s / self.timestep_s))
        if not 0 <= i0 < i1 <= self.n_steps:
            raise CycleError(f"window [{start_s}, +{duration_s}] outside the cycle")
        return DriveCycle(self.speeds[i0 : i1 + 1].copy(), self.timestep_s, f"{self.name}[{i0}:{i1}]")


def resample(time_s, speeds, timestep_s: float = 1.0) -> np.ndarray:
    """Linear interpolation of ``speeds`` onto a uniform grid starting at ``time_s[0]``."""
    time_s = np.asarray(time_s, dtype=np.float64)
    speeds = np.asarray(speeds, dtype=np.float64)
    if time_s.size == 0:
        raise CycleError("empty trace")
    if np.any(np.diff(time_s) <= 0):
        raise CycleError("time column must be strictly increasing")
    n = int(np.floor((time_s[-1] - time_s[0]) / timestep_s + 1e-9))
    grid = time_s[0] + timestep_s * np.arange(n + 1)
    return np.interp(grid, time_s, speeds)


def load_cycle(path, timestep_s: float = 1.0, name: str | None = None) -> DriveCycle:
    """Read a ``time_s,speed_mps`` or ``time_s,speed_kmh`` CSV and resample it.

    Lines starting with ``#`` are ignored.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"drive cycle not found: {path}")
    with path.open(encoding="utf-8") as fh:
        rows = [line for line in fh if line.strip() and not line.lstrip().startswith("#")]
    reader = csv.reader(rows)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise CycleError(f"{path}: empty trace") from None
    if len(header) != 2 or header[0] != "time_s" or header[1] not in ("speed_mps", "speed_kmh"):
        raise CycleError(f"{path}: expected header time_s,speed_mps or time_s,speed_kmh, got {header}")
    data = [(float(t), float(v)) for t, v in reader]
    if not data:
        raise CycleError(f"{path}: empty trace")
    t, v = np.array(data).T
    if np.any(v < 0):
        raise NegativeSpeed(f"{path}: negative speed at t={t[np.argmax(v < 0)]}")
    if header[1] == "speed_kmh":
        v = v * KMH_TO_MPS
    return DriveCycle(resample(t, v, timestep_s), timestep_s, name or path.stem)


def cycle_distance(cycle: DriveCycle) -> float:
    """Distance in metres, trapezoidal rule."""
    return float(np.trapezoid(cycle.speeds, dx=cycle.timestep_s))


def nedc(timestep_s: float = 1.0) -> DriveCycle:
    """The bundled 1180 s NEDC trace."""
    with resources.as_file(resources.files("robust_cofc") / "data" / "nedc.csv") as p:
        return load_cycle(p, timestep_s, name="NEDC")
