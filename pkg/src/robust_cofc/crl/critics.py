"""Critic regression: state values on returns, Q critics by TD(0) with Polyak targets."""

from __future__ import annotations

import numpy as np

from ..nn import Adam, Critic, GaussianPolicy, NonFiniteError, clip_grad_norm, polyak_update

DIVERGENCE_LOSS = 1e6


class CriticDivergence(FloatingPointError):
    pass


def _mse_step(critic: Critic, opt: Adam, x, y, max_grad_norm=None):
    pred, cache = critic.net.forward_cache(x)
    err = pred[:, 0] - y
    loss = float(np.mean(err**2))
    if not np.isfinite(loss):
        raise NonFiniteError(f"{critic.flavor} loss is {loss}")
    if loss > DIVERGENCE_LOSS:
        raise CriticDivergence(f"{critic.flavor} loss {loss:.3g} exceeds {DIVERGENCE_LOSS:g}")
    _, grads = critic.net.backward(cache, (2.0 / len(y)) * err[:, None])
    grads, _ = clip_grad_norm(grads, max_grad_norm)
    opt.step(critic.params, grads)
    return loss


def minibatches(n: int, size: int | None, rng):
    """Shuffled index blocks covering ``range(n)``; one full block when ``size`` is None."""
    if size is None or size >= n:
        yield np.arange(n)
        return
    perm = rng.permutation(n)
    for i in range(0, n, size):
        yield perm[i : i + size]


def fit_value(critic: Critic, opt: Adam, obs, returns, passes: int, rng=None, minibatch=None,
              max_grad_norm=None) -> float:
    """Regress a state-value critic on returns; returns the mean loss."""
    losses = []
    for _ in range(passes):
        for idx in minibatches(len(obs), minibatch, rng):
            losses.append(_mse_step(critic, opt, obs[idx], returns[idx], max_grad_norm))
    return float(np.mean(losses)) if losses else float("nan")


def td_targets(target: Critic, policy: GaussianPolicy, f, next_obs, dones, gamma, next_context=None):
    a_next = policy.mean_action(next_obs)
    return f + gamma * (1.0 - dones) * target.value(next_obs, a_next, next_context)


def train_q_critics(
    obs, actions, rewards, costs, next_obs, dones,
    policy: GaussianPolicy,
    q_r: Critic, q_c: Critic,
    q_r_targ: Critic, q_c_targ: Critic,
    opt_r: Adam, opt_c: Adam,
    gamma: float, passes: int, tau: float, rng=None, minibatch=None, max_grad_norm=None,
    context=None, next_context=None,
):
    """TD(0) regression of both Q critics on clean states.

    Targets are recomputed for every minibatch from the Polyak-averaged copies.
    ``context``/``next_context`` feed critics built with ``context_dim > 0``.
    Returns the mean losses ``(loss_r, loss_c)``.
    """
    if len(obs) == 0:
        raise ValueError("empty batch")
    x = q_r.inputs(obs, actions, context)
    dones = np.asarray(dones, dtype=np.float64)
    nctx = None if next_context is None else np.asarray(next_context, dtype=np.float64)
    losses_r, losses_c = [], []
    for _ in range(passes):
        for idx in minibatches(len(obs), minibatch, rng):
            nc = None if nctx is None else nctx[idx]
            y_r = td_targets(q_r_targ, policy, rewards[idx], next_obs[idx], dones[idx], gamma, nc)
            y_c = td_targets(q_c_targ, policy, costs[idx], next_obs[idx], dones[idx], gamma, nc)
            losses_r.append(_mse_step(q_r, opt_r, x[idx], y_r, max_grad_norm))
            losses_c.append(_mse_step(q_c, opt_c, x[idx], y_c, max_grad_norm))
            polyak_update(q_r_targ, q_r, tau)
            polyak_update(q_c_targ, q_c, tau)
    return float(np.mean(losses_r)), float(np.mean(losses_c))
