"""Observation attackers bounded by an lp ball around the clean observation.

All functions work on a single observation ``(d,)`` or a batch ``(N, d)``; each
row is attacked independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import Critic, GaussianPolicy, squash, squash_grad

ATTACK_KINDS = ("none", "uniform", "mc", "mr", "mad", "amad")


@dataclass
class AttackBudget:
    epsilon: float
    norm_order: float = math.inf

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.norm_order not in (2, math.inf):
            raise ValueError("norm_order must be 2 or inf")

    def norm(self, d):
        return np.linalg.norm(d, ord=self.norm_order, axis=-1)


@dataclass
class AttackConfig:
    steps: int = 10
    eta: float | None = None  # None -> epsilon / 4
    beta: float = 10.0
    eps_q: float = 1e-5
    eps_s: float = 1e-5
    xi: float = 0.1
    backtrack: int = 4
    # inner optimizer for mc/mr: "adam" (scale-free steps) or "sgd" (raw gradient)
    optimizer: str = "adam"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.eta is not None and not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.eps_q < 0 or self.eps_s < 0:
            raise ValueError("early-stop thresholds must be non-negative")
        if not 0 < self.xi < 1:
            raise ValueError("xi must lie in (0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")

    def step_size(self, budget: AttackBudget) -> float:
        if self.eta is not None:
            return self.eta
        return budget.epsilon / 4 if budget.epsilon > 0 else 1.0


def _rows(x):
    x = np.asarray(x, dtype=np.float64)
    return np.atleast_2d(x), x.ndim == 1


def project(s0, s, budget: AttackBudget):
    """Closest point of the ball of radius epsilon around ``s0``."""
    s0 = np.asarray(s0, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    eps = budget.epsilon
    if budget.norm_order == math.inf:
        return np.clip(s, s0 - eps, s0 + eps)
    d = s - s0
    n = np.linalg.norm(d, axis=-1, keepdims=True)
    scale = np.where(n > eps, eps / np.maximum(n, 1e-300), 1.0)
    return s0 + d * scale


def uniform_attack(s, budget: AttackBudget, rng):
    """Independent U(-eps, eps) shift per coordinate (re-projected for the l2 ball)."""
    s = np.asarray(s, dtype=np.float64)
    eps = budget.epsilon
    if eps == 0:
        return s.copy()
    out = s + rng.uniform(-eps, eps, size=s.shape)
    if budget.norm_order != math.inf:
        out = project(s, out, budget)
    return out


# objectives: f(s, grad) -> values (N,) [, gradient (N, d)]


def _context_rows(context, n):
    if context is None:
        return None
    return np.broadcast_to(np.atleast_2d(np.asarray(context, dtype=np.float64)), (n, np.shape(context)[-1]))


def q_objective(policy: GaussianPolicy, q_net: Critic, s0, context=None):
    """``s -> Q(s0, mean_action(s))`` with its gradient in ``s``.

    ``context`` holds the critic's non-attackable inputs for each row of ``s0``.
    """
    s0 = np.atleast_2d(np.asarray(s0, dtype=np.float64))
    ctx = _context_rows(context, len(s0))

    def f(s, grad=True, rows=slice(None)):
        mu, cache = policy.mean_net.forward_cache(s)
        q, _, dq_da = q_net.value_and_grads(s0[rows], squash(mu), None if ctx is None else ctx[rows])
        if not grad:
            return q
        ds, _ = policy.mean_net.backward(cache, dq_da * squash_grad(mu))
        return q, ds

    return f


def kl_objective(policy: GaussianPolicy, s0):
    """``s -> KL(pi(.|s0) || pi(.|s))`` with its gradient in ``s``."""
    mu0 = policy.mean(np.atleast_2d(np.asarray(s0, dtype=np.float64)))
    inv_var = np.exp(-2.0 * policy.clamped_log_std())

    def f(s, grad=True, rows=slice(None)):
        mu, cache = policy.mean_net.forward_cache(s)
        diff = mu - mu0[rows]
        kl = 0.5 * np.sum(diff**2 * inv_var, axis=-1)
        if not grad:
            return kl
        ds, _ = policy.mean_net.backward(cache, diff * inv_var)
        return kl, ds

    return f


def projected_ascent(objective, s0, budget: AttackBudget, cfg: AttackConfig, trace=None):
    """Projected gradient ascent with per-row backtracking and early stopping.

    The update direction is the raw gradient (``cfg.optimizer == "sgd"``) or
    its Adam-normalized version, which moves about ``eta`` per coordinate
    whatever the scale of the objective.

    A step that lowers the objective is retried with a halved step size up to
    ``cfg.backtrack`` times; if it still lowers it the row keeps its best
    iterate and stops. ``trace`` (a list) receives the objective after every
    iteration, which is therefore non-decreasing per row.
    """
    s0, single = _rows(s0)
    s = s0.copy()
    val, g = objective(s)
    if trace is not None:
        trace.append(val.copy())
    eta = cfg.step_size(budget)
    active = np.isfinite(val) & np.all(np.isfinite(g), axis=1)
    m, v = np.zeros_like(s), np.zeros_like(s)
    for k in range(1, cfg.steps + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        if cfg.optimizer == "adam":
            m[idx] = 0.9 * m[idx] + 0.1 * g[idx]
            v[idx] = 0.999 * v[idx] + 0.001 * g[idx] ** 2
            denom = np.sqrt(v[idx] / (1 - 0.999**k))
            d = np.divide(m[idx] / (1 - 0.9**k), denom, out=np.zeros_like(denom), where=denom > 0)
        else:
            d = g[idx]
        step = np.full((idx.size, 1), eta)
        cand = project(s0[idx], s[idx] + step * d, budget)
        cval = objective(cand, grad=False, rows=idx)
        for _ in range(cfg.backtrack):
            worse = ~(cval >= val[idx])
            if not worse.any():
                break
            step[worse] *= 0.5
            w = idx[worse]
            cand[worse] = project(s0[w], s[w] + step[worse] * d[worse], budget)
            cval[worse] = objective(cand[worse], grad=False, rows=w)
        accept = cval >= val[idx]
        new_s = np.where(accept[:, None], cand, s[idx])
        new_val = np.where(accept, cval, val[idx])
        dq = np.abs(new_val - val[idx])
        ds = budget.norm(new_s - s[idx])
        s[idx], val[idx] = new_s, new_val
        done = ~accept | ((dq < cfg.eps_q) & (ds < cfg.eps_s))
        active[idx[done]] = False
        live = idx[~done]
        if live.size:
            _, g_live = objective(s[live], rows=live)
            g[live] = g_live
            active[live[~np.all(np.isfinite(g_live), axis=1)]] = False
        if trace is not None:
            trace.append(val.copy())
    return s[0] if single else s


def mc_mr_attack(s0, policy: GaussianPolicy, q_net: Critic, budget: AttackBudget, cfg: AttackConfig, trace=None,
                 context=None):
    """Push the observation towards higher ``Q(s0, pi_mean(s))``.

    With a cost critic this is the maximum-cost attacker, with a reward critic
    the maximum-reward one.
    """
    if not q_net.is_q:
        raise ValueError("mc/mr attack needs a Q critic")
    s0r, single = _rows(s0)
    out = projected_ascent(q_objective(policy, q_net, s0r, context), s0r, budget, cfg, trace)
    return out[0] if single else out


def mad_attack(s0, policy: GaussianPolicy, budget: AttackBudget, cfg: AttackConfig, rng, trace=None):
    """Langevin search for the in-ball observation that shifts the policy most (in KL).

    Returns the best iterate found per row, so the result is never worse than ``s0``.
    """
    s0, single = _rows(s0)
    f = kl_objective(policy, s0)
    eta = cfg.step_size(budget)
    noise = math.sqrt(2.0 / (cfg.beta * eta))
    s = s0.copy()
    val = f(s, grad=False)
    best, best_val = s.copy(), val.copy()
    active = np.ones(len(s), dtype=bool)
    for _ in range(cfg.steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        kl, g_kl = f(s[idx], rows=idx)
        finite = np.all(np.isfinite(g_kl), axis=1)
        active[idx[~finite]] = False
        idx, g_kl = idx[finite], g_kl[finite]
        if idx.size == 0:
            break
        g = -g_kl + noise * rng.standard_normal(g_kl.shape)
        new_s = project(s0[idx], s[idx] - eta * g, budget)
        new_val = f(new_s, grad=False, rows=idx)
        better = new_val > best_val[idx]
        best[idx[better]] = new_s[better]
        best_val[idx[better]] = new_val[better]
        dq = np.abs(new_val - val[idx])
        ds = budget.norm(new_s - s[idx])
        s[idx], val[idx] = new_s, new_val
        active[idx[(dq < cfg.eps_q) & (ds < cfg.eps_s)]] = False
        if trace is not None:
            trace.append(best_val.copy())
    return best[0] if single else best


def cost_value(policy: GaussianPolicy, q_c: Critic, s, context=None):
    """State cost value served by the Q critic at the policy's mean action."""
    return q_c.value(s, policy.mean_action(s), context)


def amad_threshold(values, xi: float) -> float:
    """The ``1 - xi`` percentile, snapped to the nearest sample.

    Snapping keeps the threshold equal to an observed value, so with distinct
    values exactly ``round(xi * (n - 1))`` states lie strictly above it and a
    vanishing ``xi`` lands on the maximum.
    """
    return float(np.percentile(values, 100.0 * (1.0 - xi), method="nearest"))


def amad_attack(batch, policy, vc_net: Critic, budget, cfg: AttackConfig, rng, threshold=None, context=None):
    """MAD on the states whose cost value strictly exceeds the (1 - xi) percentile.

    ``vc_net`` may be a V_c critic or a Q_c critic (evaluated at the mean action).
    A precomputed ``threshold`` replaces the batch percentile.
    """
    batch, single = _rows(batch)
    if len(batch) == 0:
        raise ValueError("empty batch")
    ctx = _context_rows(context, len(batch))
    vc = cost_value(policy, vc_net, batch, ctx) if vc_net.is_q else vc_net.value(batch, context=ctx)
    if threshold is None:
        threshold = amad_threshold(vc, cfg.xi)
    out = batch.copy()
    hit = vc > threshold
    if hit.any():
        out[hit] = mad_attack(batch[hit], policy, budget, cfg, rng)
    return out[0] if single else out


class Attacker:
    """Callable ``obs_batch, rng[, context] -> perturbed batch`` with a mutable budget.

    ``context`` is forwarded to critics that take non-attackable inputs and is
    ignored by attackers that use no critic.
    """

    kind = "none"

    def __init__(self, budget: AttackBudget | None = None, cfg: AttackConfig | None = None):
        self.budget = budget or AttackBudget(0.0)
        self.cfg = cfg or AttackConfig()

    def set_epsilon(self, eps: float):
        self.budget = AttackBudget(eps, self.budget.norm_order)

    def __call__(self, obs, rng, context=None):
        return np.array(obs, dtype=np.float64)


class UniformAttacker(Attacker):
    kind = "uniform"

    def __call__(self, obs, rng, context=None):
        return uniform_attack(obs, self.budget, rng)


class ValueAttacker(Attacker):
    """MC (cost critic) or MR (reward critic) attacker."""

    def __init__(self, kind, policy, q_net, budget=None, cfg=None):
        super().__init__(budget, cfg)
        if kind not in ("mc", "mr"):
            raise ValueError(kind)
        self.kind, self.policy, self.q_net = kind, policy, q_net

    def __call__(self, obs, rng, context=None):
        if self.budget.epsilon == 0:
            return np.array(obs, dtype=np.float64)
        return mc_mr_attack(obs, self.policy, self.q_net, self.budget, self.cfg, context=context)


class MADAttacker(Attacker):
    kind = "mad"

    def __init__(self, policy, budget=None, cfg=None):
        super().__init__(budget, cfg)
        self.policy = policy

    def __call__(self, obs, rng, context=None):
        if self.budget.epsilon == 0:
            return np.array(obs, dtype=np.float64)
        return mad_attack(obs, self.policy, self.budget, self.cfg, rng)


class AMADAttacker(Attacker):
    """MAD restricted to high cost-value states.

    Without a calibrated ``threshold`` the percentile is taken over each batch
    passed in.
    """

    kind = "amad"

    def __init__(self, policy, q_c, budget=None, cfg=None, threshold=None):
        super().__init__(budget, cfg)
        self.policy, self.q_c, self.threshold = policy, q_c, threshold

    def calibrate(self, states, context=None):
        self.threshold = amad_threshold(cost_value(self.policy, self.q_c, states, context), self.cfg.xi)
        return self.threshold

    def __call__(self, obs, rng, context=None):
        if self.budget.epsilon == 0:
            return np.array(obs, dtype=np.float64)
        return amad_attack(obs, self.policy, self.q_c, self.budget, self.cfg, rng, self.threshold, context)


def make_attacker(kind, policy=None, q_r=None, q_c=None, budget=None, cfg=None) -> Attacker:
    if kind == "none":
        return Attacker(budget, cfg)
    if kind == "uniform":
        return UniformAttacker(budget, cfg)
    if kind == "mc":
        return ValueAttacker("mc", policy, q_c, budget, cfg)
    if kind == "mr":
        return ValueAttacker("mr", policy, q_r, budget, cfg)
    if kind == "mad":
        return MADAttacker(policy, budget, cfg)
    if kind == "amad":
        return AMADAttacker(policy, q_c, budget, cfg)
    raise ValueError(f"unknown attack kind {kind!r}; expected one of {ATTACK_KINDS}")
