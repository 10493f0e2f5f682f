"""Self-describing binary checkpoints for a training agent.

Layout::

    8 bytes   magic  b"RCOFCKPT"
    4 bytes   format version (little-endian uint32)
    8 bytes   header length n (little-endian uint64)
    n bytes   UTF-8 JSON header
    rest      float64 little-endian blob holding every array back to back

The header lists each array's name, shape and offset (in elements), plus the
scalar state: method, seed, epoch, Lagrange multiplier, optimizer step
counters, generator states, training config and the history so far.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .crl.ppol import LagrangianState
from .crl.trainer import Agent, EpochStats, TrainConfig, config_dict

MAGIC = b"RCOFCKPT"
FORMAT_VERSION = 1
_DTYPE = "<f8"


class CheckpointError(ValueError):
    """Unreadable, corrupt or mismatched checkpoint."""


@dataclass
class Checkpoint:
    method: str
    seed: int
    agent: Agent
    config: TrainConfig
    history: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def _collect_arrays(agent: Agent):
    arrays = {}
    for name, module in agent.modules().items():
        for i, a in enumerate(module.params):
            arrays[f"{name}/{i}"] = a
    scalars = {}
    for name, opt in agent.optimizers().items():
        s, arrs = opt.state()
        scalars[name] = s
        for key, a in arrs.items():
            arrays[f"opt/{name}/{key}"] = a
    return arrays, scalars


def save_checkpoint(path, method: str, seed: int, agent: Agent, cfg: TrainConfig, history=(), meta=None) -> Path:
    path = Path(path)
    arrays, opt_scalars = _collect_arrays(agent)
    entries, offset = [], 0
    for name, a in arrays.items():
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
    header = {
        "dtype": _DTYPE,
        "method": method,
        "seed": seed,
        "epoch": agent.epoch,
        "lagrangian": {
            "lam": agent.lag.lam, "lambda_lr": agent.lag.lambda_lr,
            "kappa": agent.lag.kappa, "lam_max": agent.lag.lam_max,
        },
        "optimizers": opt_scalars,
        "rng": {k: g.bit_generator.state for k, g in agent.rngs.items()},
        "config": config_dict(cfg),
        "history": [list(vars(h).values()) for h in history],
        "meta": meta or {},
        "arrays": entries,
    }
    blob = np.concatenate([np.ravel(a) for a in arrays.values()]).astype(_DTYPE) if arrays else np.zeros(0, _DTYPE)
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", FORMAT_VERSION, len(head)))
        f.write(head)
        f.write(blob.tobytes())
    return path


def read_header(path) -> tuple[dict, bytes]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(raw) < 20:
        raise CheckpointError(f"{path}: truncated header")
    version, n = struct.unpack("<IQ", raw[8:20])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    try:
        header = json.loads(raw[20 : 20 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    return header, raw[20 + n :]


def load_checkpoint(path, cfg: TrainConfig | None = None) -> Checkpoint:
    """Rebuild the agent stored at ``path``.

    ``cfg`` defaults to the stored training config; passing one whose network
    shape differs raises :class:`CheckpointError`.
    """
    header, payload = read_header(path)
    stored = TrainConfig(**{**header["config"], "hidden": tuple(header["config"]["hidden"])})
    cfg = cfg or stored
    blob = np.frombuffer(payload, dtype=header["dtype"])
    total = sum(int(np.prod(e["shape"])) for e in header["arrays"])
    if blob.size != total:
        raise CheckpointError(f"{path}: payload holds {blob.size} values, header expects {total}")
    arrays = {}
    for e in header["arrays"]:
        size = int(np.prod(e["shape"]))
        arrays[e["name"]] = blob[e["offset"] : e["offset"] + size].reshape(e["shape"]).astype(np.float64)

    agent = Agent(cfg, header["seed"])
    try:
        for name, module in agent.modules().items():
            n = len(module.params)
            module.set_params([arrays[f"{name}/{i}"] for i in range(n)])
        for name, opt in agent.optimizers().items():
            prefix = f"opt/{name}/"
            opt.load_state(header["optimizers"][name], {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: does not match the network shape {cfg.hidden}: {exc}") from exc
    lag = header["lagrangian"]
    agent.lag = LagrangianState(lag["lam"], lag["lambda_lr"], lag["kappa"], lag["lam_max"])
    agent.epoch = header["epoch"]
    for k, state in header["rng"].items():
        agent.rngs[k].bit_generator.state = state
    history = [EpochStats(*row) for row in header["history"]]
    return Checkpoint(header["method"], header["seed"], agent, cfg, history, header["meta"])
