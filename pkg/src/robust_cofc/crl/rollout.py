"""Rollout collection and advantage estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..attacks import Attacker
from ..nn import Critic, GaussianPolicy, gaussian_log_prob
from ..powertrain import BatchEnv


def discounted_returns(x, gamma: float, bootstrap=0.0):
    """Reverse discounted cumulative sum along axis 0."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    running = np.broadcast_to(np.asarray(bootstrap, dtype=np.float64), x.shape[1:]).copy()
    for t in range(len(x) - 1, -1, -1):
        running = x[t] + gamma * running
        out[t] = running
    return out


def gae(rewards, values, gamma: float, lam: float, last_value=0.0):
    """Generalized advantage estimates along axis 0; the episode ends after the last row.

    ``lam = 1`` gives Monte-Carlo advantages, ``lam = 0`` one-step TD errors.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    next_values = np.concatenate([values[1:], np.broadcast_to(last_value, (1, *values.shape[1:]))])
    deltas = rewards + gamma * next_values - values
    return discounted_returns(deltas, gamma * lam)


@dataclass
class RolloutBatch:
    """Time-major arrays of shape ``(Ts, n_envs, ...)``."""

    obs: np.ndarray
    obs_pert: np.ndarray
    phase: np.ndarray  # t / Ts at each step, shape (Ts, n_envs, 1)
    u: np.ndarray  # pre-squash action sample
    actions: np.ndarray
    logp: np.ndarray  # Gaussian log-prob of u (squash term excluded, it cancels in ratios)
    rewards: np.ndarray
    costs: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    adv_r: np.ndarray
    adv_c: np.ndarray
    ret_r: np.ndarray
    ret_c: np.ndarray

    @property
    def episode_rewards(self) -> np.ndarray:
        return self.rewards.sum(axis=0)

    @property
    def episode_costs(self) -> np.ndarray:
        return self.costs.sum(axis=0)

    def flat(self, name):
        x = getattr(self, name)
        return x.reshape(-1, *x.shape[2:])

    def __len__(self):
        return self.rewards.size


def collect_rollout(
    env: BatchEnv,
    policy: GaussianPolicy,
    attacker: Attacker,
    v_r: Critic,
    v_c: Critic,
    rng_action,
    rng_attack,
    initial_soc=None,
    gamma: float = 0.99,
    lam: float = 0.95,
) -> RolloutBatch:
    """One synchronized episode per environment copy, acting on attacked observations."""
    obs = env.reset(initial_soc)
    names = ("obs", "obs_pert", "phase", "u", "actions", "logp", "rewards", "costs", "next_obs", "dones")
    cols = {k: [] for k in names}
    while not env.done:
        phase = env.phase()
        obs_pert = attacker(obs, rng_attack, phase)
        action, _, u = policy.sample(obs_pert, rng_action)
        logp = gaussian_log_prob(u, policy.mean(obs_pert), policy.clamped_log_std())
        next_obs, r, c, done = env.step(action[:, 0])
        for k, v in zip(cols, (obs, obs_pert, phase, u, action[:, 0], logp, r, c, next_obs, np.full(env.n, done))):
            cols[k].append(v)
        obs = next_obs
    arr = {k: np.asarray(v) for k, v in cols.items()}
    T, n = arr["rewards"].shape
    flat_obs = arr["obs"].reshape(T * n, -1)
    vals_r = v_r.value(flat_obs).reshape(T, n)
    vals_c = v_c.value(flat_obs).reshape(T, n)
    return RolloutBatch(
        **arr,
        adv_r=gae(arr["rewards"], vals_r, gamma, lam),
        adv_c=gae(arr["costs"], vals_c, gamma, lam),
        ret_r=discounted_returns(arr["rewards"], gamma),
        ret_c=discounted_returns(arr["costs"], gamma),
    )
