"""PPO-Lagrangian actor loss, dual update and perturbation schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import NonFiniteError, GaussianPolicy, LOG_STD_MAX, LOG_STD_MIN, gaussian_log_prob


@dataclass
class LagrangianState:
    lam: float = 0.0
    lambda_lr: float = 0.05
    kappa: float = 2.0
    lam_max: float | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.lam_max is not None and not self.lam_max > 0:
            raise ValueError("lam_max must be positive")


def lambda_update(lag: LagrangianState, episode_cost_mean: float) -> LagrangianState:
    """Projected dual ascent on the undiscounted episode cost.

    The multiplier is kept in ``[0, lam_max]`` (no upper bound when ``lam_max`` is None).
    """
    lam = max(0.0, lag.lam + lag.lambda_lr * (episode_cost_mean - lag.kappa))
    if lag.lam_max is not None:
        lam = min(lam, lag.lam_max)
    return LagrangianState(lam, lag.lambda_lr, lag.kappa, lag.lam_max)


def epsilon_schedule(epoch: int, eps_final: float, ramp_fraction: float, n_epochs: int) -> float:
    """Linear ramp from 0 to ``eps_final`` over the first ``ramp_fraction`` of training."""
    if epoch < 1:
        raise ValueError("epochs are counted from 1")
    ramp = ramp_fraction * n_epochs
    if ramp <= 0:
        return eps_final
    return eps_final * min(1.0, epoch / ramp)


def standardize(x):
    x = np.asarray(x, dtype=np.float64)
    return (x - x.mean()) / (x.std() + 1e-8)


def clipped_surrogate(ratio, adv, clip: float):
    """Returns ``(surrogate, d surrogate / d ratio)`` per sample."""
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    surr = np.minimum(ratio * adv, clipped * adv)
    live = ((adv >= 0) & (ratio < 1.0 + clip)) | ((adv < 0) & (ratio > 1.0 - clip))
    return surr, np.where(live, adv, 0.0)


def ppol_loss_from_ratio(ratio, adv_r, adv_c, lam: float, clip: float, scale_by_lambda=True):
    """Scalar loss and its per-sample derivative in ``ratio``."""
    n = ratio.size
    surr_r, dsurr = clipped_surrogate(ratio, adv_r, clip)
    denom = (1.0 + lam) if scale_by_lambda else 1.0
    loss = (-surr_r.mean() + lam * np.mean(ratio * adv_c)) / denom
    dratio = (-dsurr + lam * adv_c) / (n * denom)
    return float(loss), dratio


def _log_prob_grads(policy: GaussianPolicy, obs, u, dlogp, cache_mu=None):
    """Chain ``dL/dlogp`` into policy parameter gradients."""
    mu, cache = cache_mu if cache_mu is not None else policy.mean_net.forward_cache(obs)
    log_std = policy.clamped_log_std()
    inv_var = np.exp(-2.0 * log_std)
    diff = u - mu
    dmu = dlogp[:, None] * diff * inv_var
    _, grads = policy.mean_net.backward(cache, dmu)
    dlog_std = np.sum(dlogp[:, None] * (diff**2 * inv_var - 1.0), axis=0)
    dlog_std = np.where((policy.log_std > LOG_STD_MIN) & (policy.log_std < LOG_STD_MAX), dlog_std, 0.0)
    return grads + [dlog_std]


def ppo_lagrangian_loss(policy: GaussianPolicy, obs, u, logp_old, adv_r, adv_c, lam, clip=0.2, scale_by_lambda=True):
    """Loss value and gradients w.r.t. ``policy.params``.

    ``adv_r`` is expected standardized, ``adv_c`` raw.
    """
    mu, cache = policy.mean_net.forward_cache(obs)
    logp = gaussian_log_prob(u, mu, policy.clamped_log_std())
    ratio = np.exp(logp - logp_old)
    if not np.all(np.isfinite(ratio)):
        raise NonFiniteError("non-finite importance ratio")
    loss, dratio = ppol_loss_from_ratio(ratio, adv_r, adv_c, lam, clip, scale_by_lambda)
    grads = _log_prob_grads(policy, obs, u, dratio * ratio, (mu, cache))
    return loss, grads, ratio


def kl_regularizer(policy: GaussianPolicy, obs, obs_pert, beta: float):
    """``beta * mean KL(pi_fixed(obs) || pi(obs_pert))``; no gradient through the first argument.

    Returns ``(value, grads)``.
    """
    mu_a = policy.mean(obs)
    ls = policy.clamped_log_std()
    var = np.exp(2.0 * ls)
    mu_b, cache = policy.mean_net.forward_cache(obs_pert)
    n = len(mu_b)
    # same log-std on both sides, so only the mean term survives in the value
    kl = np.sum(ls - ls + (var + (mu_a - mu_b) ** 2) / (2.0 * var) - 0.5, axis=-1)
    value = beta * float(kl.mean())
    dmu = beta * (mu_b - mu_a) / var / n
    _, grads = policy.mean_net.backward(cache, dmu)
    dls = beta * np.sum(1.0 - (var + (mu_a - mu_b) ** 2) / var, axis=0) / n
    dls = np.where((policy.log_std > LOG_STD_MIN) & (policy.log_std < LOG_STD_MAX), dls, 0.0)
    return value, grads + [dls]
