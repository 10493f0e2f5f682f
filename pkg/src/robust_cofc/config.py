"""Run configuration: one YAML document with a fixed set of sections.

Every section maps onto a dataclass; unknown keys anywhere are an error so a
typo never silently falls back to a default.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .attacks import AttackBudget, AttackConfig
from .crl.evaluate import CONDITIONS
from .crl.trainer import METHODS, Problem, TrainConfig
from .drivecycle import DriveCycle, load_cycle, nedc
from .powertrain import SocEnvelope, VehicleParams


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


@dataclass
class CycleSection:
    source: str = "nedc"  # "nedc" or a CSV path
    start_s: float = 0.0
    duration_s: float | None = None  # None: to the end of the trace
    timestep_s: float = 1.0


@dataclass
class EnvelopeSection:
    H: float = 0.7
    L: float = 0.5
    B: float = 0.6
    bl: int | None = None  # None: ceil(0.1 * Ts)
    br: int | None = None  # None: floor(0.9 * Ts)


@dataclass
class NetworkSection:
    hidden: list = field(default_factory=lambda: [256, 256])
    log_std_init: float = -0.5
    init_action: float = 0.5


@dataclass
class AttackSection:
    norm_order: str = "inf"  # "inf" or "2"
    steps: int = 10
    eta: float | None = None
    beta: float = 10.0
    eps_q: float = 1e-5
    eps_s: float = 1e-5
    xi: float = 0.1
    backtrack: int = 4
    optimizer: str = "adam"


@dataclass
class EvalSection:
    episodes: int = 50
    conditions: list = field(default_factory=lambda: list(CONDITIONS))
    epsilon: float | None = None  # None: train.epsilon
    seed_offset: int = 1000
    soc_spread: float = 0.02


@dataclass
class OutputSection:
    dir: str = "runs"
    figures: bool = True


_TRAIN_KEYS = [f.name for f in fields(TrainConfig) if f.name not in ("hidden", "log_std_init", "init_action")]


def _train_defaults() -> dict:
    d = asdict(TrainConfig())
    return {k: d[k] for k in _TRAIN_KEYS}


@dataclass
class RunConfig:
    method: str = "PPOL-vanilla"
    seeds: list = field(default_factory=lambda: [0])
    cycle: CycleSection = field(default_factory=CycleSection)
    vehicle: dict = field(default_factory=lambda: VehicleParams().to_dict())
    envelope: EnvelopeSection = field(default_factory=EnvelopeSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    train: dict = field(default_factory=_train_defaults)
    attack: AttackSection = field(default_factory=AttackSection)
    eval: EvalSection = field(default_factory=EvalSection)
    output: OutputSection = field(default_factory=OutputSection)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method {self.method!r} not in {sorted(METHODS)}")
        if not self.seeds or any(not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be a non-empty list of non-negative integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        bad = [c for c in self.eval.conditions if c not in CONDITIONS]
        if bad or not self.eval.conditions:
            raise ConfigError(f"eval.conditions must be a non-empty subset of {list(CONDITIONS)}")
        if self.eval.episodes < 1:
            raise ConfigError("eval.episodes must be >= 1")
        if self.attack.norm_order not in ("inf", "2"):
            raise ConfigError("attack.norm_order must be 'inf' or '2'")
        # build every derived object once so bad values surface here
        try:
            self.vehicle_params()
            self.train_config()
            self.attack_config()
            self.problem()
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    # -- derived objects -------------------------------------------------

    def vehicle_params(self) -> VehicleParams:
        return VehicleParams(**self.vehicle)

    def train_config(self) -> TrainConfig:
        n = self.network
        return TrainConfig(**self.train, hidden=tuple(n.hidden), log_std_init=n.log_std_init, init_action=n.init_action)

    def attack_config(self) -> AttackConfig:
        a = asdict(self.attack)
        a.pop("norm_order")
        return AttackConfig(**a)

    @property
    def norm_order(self) -> float:
        return math.inf if self.attack.norm_order == "inf" else 2.0

    def budget(self) -> AttackBudget:
        eps = self.eval.epsilon if self.eval.epsilon is not None else self.train["epsilon"]
        return AttackBudget(eps, self.norm_order)

    def drive_cycle(self) -> DriveCycle:
        c = self.cycle
        try:
            base = nedc() if c.source == "nedc" else load_cycle(c.source, c.timestep_s)
        except FileNotFoundError as exc:
            raise ConfigError(f"cycle file not found: {c.source}") from exc
        if c.start_s == 0 and c.duration_s is None:
            return base
        duration = c.duration_s if c.duration_s is not None else base.duration_s - c.start_s
        return base.window(c.start_s, duration)

    def problem(self) -> Problem:
        cycle = self.drive_cycle()
        e = self.envelope
        ts = cycle.n_steps
        env = SocEnvelope.default(ts, H=e.H, L=e.L, B=e.B)
        if e.bl is not None or e.br is not None:
            env = replace(env, bl=e.bl if e.bl is not None else env.bl, br=e.br if e.br is not None else env.br)
        return Problem(cycle, self.vehicle_params(), env)

    # -- (de)serialization -----------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    @classmethod
    def from_dict(cls, data: dict | None) -> "RunConfig":
        data = dict(data or {})
        defaults = {f.name: f.default_factory() if callable(f.default_factory) else f.default for f in fields(cls)}
        unknown = set(data) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        kwargs = {}
        for name, default in defaults.items():
            if name not in data:
                kwargs[name] = default
                continue
            value = data[name]
            if isinstance(default, dict):
                kwargs[name] = _merge_dict(name, default, value)
            elif hasattr(default, "__dataclass_fields__"):
                kwargs[name] = _merge_section(name, default, value)
            else:
                kwargs[name] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
        if data is not None and not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(data)


def _check_mapping(section: str, value):
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    return value


def _merge_dict(section: str, default: dict, value) -> dict:
    value = _check_mapping(section, value)
    unknown = set(value) - set(default)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    return {**default, **value}


def _merge_section(section: str, default, value):
    value = _check_mapping(section, value)
    names = {f.name for f in fields(default)}
    unknown = set(value) - names
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    return replace(default, **value)


def smoke_config(**overrides) -> RunConfig:
    """A small setup that trains in well under a minute per seed."""
    data = {
        "cycle": {"start_s": 900, "duration_s": 200},
        "network": {"hidden": [64, 64]},
        "train": {"epochs": 150, "kappa": 2.0},
        "eval": {"episodes": 20},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and key in data:
            data[key] = {**data[key], **value}
        else:
            data[key] = value
    return RunConfig.from_dict(data)
