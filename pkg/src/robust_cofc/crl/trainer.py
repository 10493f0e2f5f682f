"""Lagrangian PPO training loops: plain / randomized / adversarial and SA-regularized."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ..attacks import AttackBudget, AttackConfig, make_attacker
from ..drivecycle import DriveCycle
from ..nn import Adam, Critic, GaussianPolicy, NonFiniteError, clip_grad_norm
from ..powertrain import BatchEnv, SocEnvelope, VehicleParams
from ..seeding import stream
from .critics import CriticDivergence, fit_value, minibatches, train_q_critics
from .ppol import (
    LagrangianState,
    epsilon_schedule,
    kl_regularizer,
    lambda_update,
    ppo_lagrangian_loss,
    standardize,
)
from .rollout import collect_rollout

log = logging.getLogger(__name__)

# method -> (training loop, attacker used while training)
METHODS = {
    "PPOL-vanilla": ("adv", "none"),
    "PPOL-random": ("adv", "uniform"),
    "SA-PPOL": ("sa", "mad"),
    "SA-PPOL(MC)": ("sa", "mc"),
    "SA-PPOL(MR)": ("sa", "mr"),
    "ADV-PPOL(MC)": ("adv", "mc"),
    "ADV-PPOL(MR)": ("adv", "mr"),
}


@dataclass
class TrainConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    epochs: int = 150
    episodes_per_epoch: int = 8
    ppo_update_iters: int = 10  # passes over the batch
    value_iters: int = 5
    q_iters: int = 5
    minibatch_size: int | None = 256
    polyak_tau: float = 0.05
    target_kl: float | None = 0.02
    max_grad_norm: float | None = 0.5
    kl_weight_beta: float = 1.0
    epsilon: float = 0.015
    eps_ramp_fraction: float = 0.5
    kappa: float = 2.0
    lambda_init: float = 0.0
    lambda_lr: float = 0.05
    lambda_max: float | None = None
    scale_loss_by_lambda: bool = True
    hidden: tuple = (256, 256)
    log_std_init: float = -0.5
    init_action: float = 0.5
    initial_soc_spread: float = 0.02
    # Q critics also read the episode phase t / Ts (never attacked, see Agent)
    critic_phase_input: bool = True

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.clip_ratio > 0:
            raise ValueError("clip_ratio must be positive")
        if self.epochs < 1 or self.episodes_per_epoch < 1:
            raise ValueError("epochs and episodes_per_epoch must be >= 1")
        if self.lambda_init < 0:
            raise ValueError("lambda_init must be non-negative")


@dataclass(frozen=True)
class Problem:
    cycle: DriveCycle
    params: VehicleParams
    envelope: SocEnvelope

    def env(self, n: int) -> BatchEnv:
        return BatchEnv(self.cycle, self.params, self.envelope, n)

    def initial_soc(self, rng, n: int, spread: float):
        return self.envelope.B + rng.uniform(-spread, spread, n)


class Agent:
    """Policy, the four critics, Q targets, optimizers and the multiplier."""

    def __init__(self, cfg: TrainConfig, seed: int, obs_dim: int = 2):
        rng = stream(seed, "policy-init")
        h = cfg.hidden
        self.policy = GaussianPolicy(obs_dim, 1, h, rng, cfg.log_std_init, cfg.init_action)
        self.v_r = Critic("V_r", obs_dim, 1, h, rng)
        self.v_c = Critic("V_c", obs_dim, 1, h, rng)
        # the observation omits time while the SOC corridor depends on it; without
        # the phase the Q critics alias early and late states and their action
        # gradients, which the value attackers follow, come out with the wrong sign
        ctx = 1 if cfg.critic_phase_input else 0
        self.q_r = Critic("Q_r", obs_dim, 1, h, rng, context_dim=ctx)
        self.q_c = Critic("Q_c", obs_dim, 1, h, rng, context_dim=ctx)
        self.q_r_targ = self.q_r.copy()
        self.q_c_targ = self.q_c.copy()
        self.opt_pi = Adam(self.policy.params, cfg.actor_lr)
        self.opt_vr = Adam(self.v_r.params, cfg.critic_lr)
        self.opt_vc = Adam(self.v_c.params, cfg.critic_lr)
        self.opt_qr = Adam(self.q_r.params, cfg.critic_lr)
        self.opt_qc = Adam(self.q_c.params, cfg.critic_lr)
        self.lag = LagrangianState(cfg.lambda_init, cfg.lambda_lr, cfg.kappa, cfg.lambda_max)
        self.epoch = 0
        # training-time streams; kept here so a checkpoint can resume them exactly
        self.rngs = {name: stream(seed, name) for name in ("env", "action", "attack", "minibatch")}

    # name -> object with .params/.set_params, used by checkpoints
    def modules(self):
        return {
            "policy": self.policy, "v_r": self.v_r, "v_c": self.v_c, "q_r": self.q_r,
            "q_c": self.q_c, "q_r_targ": self.q_r_targ, "q_c_targ": self.q_c_targ,
        }

    def optimizers(self):
        return {"pi": self.opt_pi, "v_r": self.opt_vr, "v_c": self.opt_vc, "q_r": self.opt_qr, "q_c": self.opt_qc}


@dataclass
class EpochStats:
    epoch: int
    reward: float
    cost: float
    lam: float
    epsilon: float
    actor_loss: float
    critic_loss_r: float
    critic_loss_c: float


HISTORY_COLUMNS = ("epoch", "reward", "cost", "lambda", "epsilon", "actor_loss", "critic_loss_r", "critic_loss_c")


@dataclass
class TrainResult:
    method: str
    seed: int
    agent: Agent
    history: list = field(default_factory=list)


class TrainingDiverged(RuntimeError):
    def __init__(self, msg, result: TrainResult):
        super().__init__(msg)
        self.result = result


def _actor_updates(agent: Agent, cfg: TrainConfig, rng, obs_in, u, logp_old, adv_r, adv_c, kl_obs=None):
    """M passes of clipped-surrogate minibatch steps; ``kl_obs = (clean, perturbed)`` adds the SA term."""
    policy = agent.policy
    losses = []
    for _ in range(cfg.ppo_update_iters):
        for idx in minibatches(len(obs_in), cfg.minibatch_size, rng):
            loss, grads, ratio = ppo_lagrangian_loss(
                policy, obs_in[idx], u[idx], logp_old[idx], adv_r[idx], adv_c[idx],
                agent.lag.lam, cfg.clip_ratio, cfg.scale_loss_by_lambda,
            )
            if cfg.target_kl is not None and np.mean((ratio - 1.0) - np.log(ratio)) > 1.5 * cfg.target_kl:
                return float(np.mean(losses)) if losses else loss
            if kl_obs is not None and cfg.kl_weight_beta > 0:
                kl_val, kl_grads = kl_regularizer(policy, kl_obs[0][idx], kl_obs[1][idx], cfg.kl_weight_beta)
                loss += kl_val
                grads = [g + k for g, k in zip(grads, kl_grads)]
            grads, _ = clip_grad_norm(grads, cfg.max_grad_norm)
            agent.opt_pi.step(policy.params, grads)
            losses.append(loss)
    return float(np.mean(losses))


def train(
    method: str,
    cfg: TrainConfig,
    problem: Problem,
    seed: int,
    attack_cfg: AttackConfig | None = None,
    norm_order: float = np.inf,
    on_epoch: Callable[[EpochStats], None] | None = None,
    attacker_kind: str | None = None,
    agent: Agent | None = None,
    history: list | None = None,
    stop_after: int | None = None,
) -> TrainResult:
    """Train one method for one seed.

    ``attacker_kind`` overrides the method's default training attacker.
    Passing a restored ``agent`` (and its ``history``) continues after ``agent.epoch``.
    ``stop_after`` pauses at that epoch without changing the schedules, which
    are always laid out over ``cfg.epochs``.
    Numerical blow-ups raise :class:`TrainingDiverged` carrying the partial result.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {list(METHODS)}")
    loop, kind = METHODS[method]
    kind = attacker_kind or kind
    attack_cfg = attack_cfg or AttackConfig()
    agent = agent or Agent(cfg, seed)
    result = TrainResult(method, seed, agent, list(history or []))
    env = problem.env(cfg.episodes_per_epoch)
    rng_env, rng_act, rng_att, rng_mb = (agent.rngs[k] for k in ("env", "action", "attack", "minibatch"))
    attacker = make_attacker(
        kind, agent.policy, agent.q_r, agent.q_c, AttackBudget(0.0, norm_order), attack_cfg
    )
    identity = make_attacker("none")
    last = cfg.epochs if stop_after is None else min(stop_after, cfg.epochs)
    for n in range(agent.epoch + 1, last + 1):
        eps = 0.0 if kind == "none" else epsilon_schedule(n, cfg.epsilon, cfg.eps_ramp_fraction, cfg.epochs)
        attacker.set_epsilon(eps)
        try:
            stats = _epoch(agent, cfg, problem, env, attacker if loop == "adv" else identity,
                           attacker if loop == "sa" else None, rng_env, rng_act, rng_att, rng_mb, n, eps)
        except (NonFiniteError, CriticDivergence, FloatingPointError) as exc:
            raise TrainingDiverged(f"{method} seed {seed} diverged at epoch {n}: {exc}", result) from exc
        result.history.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
    return result


def _epoch(agent, cfg, problem, env, rollout_attacker, sa_attacker, rng_env, rng_act, rng_att, rng_mb, n, eps):
    init = problem.initial_soc(rng_env, env.n, cfg.initial_soc_spread)
    with np.errstate(over="raise", invalid="raise"):
        batch = collect_rollout(
            env, agent.policy, rollout_attacker, agent.v_r, agent.v_c, rng_act, rng_att, init,
            cfg.gamma, cfg.gae_lambda,
        )
    ep_reward = float(batch.episode_rewards.mean())
    ep_cost = float(batch.episode_costs.mean())
    agent.lag = lambda_update(agent.lag, ep_cost)

    obs = batch.flat("obs")
    u = batch.flat("u")
    logp = batch.flat("logp")
    adv_r = standardize(batch.flat("adv_r"))
    adv_c = batch.flat("adv_c")
    if sa_attacker is None:
        actor_loss = _actor_updates(agent, cfg, rng_mb, batch.flat("obs_pert"), u, logp, adv_r, adv_c)
    else:
        obs_pert = sa_attacker(obs, rng_att, batch.flat("phase"))
        actor_loss = _actor_updates(agent, cfg, rng_mb, obs, u, logp, adv_r, adv_c, kl_obs=(obs, obs_pert))

    mb = cfg.minibatch_size
    fit_value(agent.v_r, agent.opt_vr, obs, batch.flat("ret_r"), cfg.value_iters, rng_mb, mb, cfg.max_grad_norm)
    fit_value(agent.v_c, agent.opt_vc, obs, batch.flat("ret_c"), cfg.value_iters, rng_mb, mb, cfg.max_grad_norm)
    loss_r, loss_c = train_q_critics(
        obs, batch.flat("actions"), batch.flat("rewards"), batch.flat("costs"),
        batch.flat("next_obs"), batch.flat("dones"), agent.policy,
        agent.q_r, agent.q_c, agent.q_r_targ, agent.q_c_targ, agent.opt_qr, agent.opt_qc,
        cfg.gamma, cfg.q_iters, cfg.polyak_tau, rng_mb, mb, cfg.max_grad_norm,
        *_phase_pair(batch),
    )
    agent.epoch = n
    return EpochStats(n, ep_reward, ep_cost, agent.lag.lam, eps, actor_loss, loss_r, loss_c)


def _phase_pair(batch):
    phase = batch.flat("phase")
    return phase, phase + 1.0 / batch.rewards.shape[0]


def train_adv_ppol(cfg, problem, seed, attacker_kind="mc", **kw) -> TrainResult:
    if attacker_kind not in ("mc", "mr"):
        raise ValueError("ADV-PPOL trains against mc or mr")
    return train(f"ADV-PPOL({attacker_kind.upper()})", cfg, problem, seed, **kw)


def train_sa_ppol(cfg, problem, seed, attacker_kind="mad", **kw) -> TrainResult:
    name = {"mad": "SA-PPOL", "mc": "SA-PPOL(MC)", "mr": "SA-PPOL(MR)"}.get(attacker_kind)
    if name is None:
        raise ValueError("SA-PPOL trains against mad, mc or mr")
    return train(name, cfg, problem, seed, **kw)


def history_rows(history):
    return [
        (s.epoch, s.reward, s.cost, s.lam, s.epsilon, s.actor_loss, s.critic_loss_r, s.critic_loss_c)
        for s in history
    ]


def config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return d
