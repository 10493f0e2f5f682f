"""Dense tanh networks with hand-written reverse mode, Gaussian policy, optimizers.

Everything is float64. Batched inputs are ``(N, in_dim)``; a 1-D input is
treated as a batch of one and the batch axis is dropped on output.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
_LOG_2PI = math.log(2.0 * math.pi)


class NonFiniteError(FloatingPointError):
    """NaN or inf where a finite number is required."""


def orthogonal(shape, gain, rng):
    a = rng.standard_normal((max(shape), min(shape)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return gain * q[: shape[0], : shape[1]]


class MLP:
    """``sizes = [in, h1, ..., out]``; tanh on hidden layers, linear head."""

    def __init__(self, sizes: Sequence[int], rng=None, hidden_gain=math.sqrt(2.0), out_gain=1.0):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = [int(s) for s in sizes]
        rng = np.random.default_rng(0) if rng is None else rng
        self.weights, self.biases = [], []
        for i, (n_in, n_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            gain = out_gain if i == len(self.sizes) - 2 else hidden_gain
            self.weights.append(orthogonal((n_in, n_out), gain, rng))
            self.biases.append(np.zeros(n_out))

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_params(self, arrays):
        arrays = list(arrays)
        if len(arrays) != 2 * len(self.weights):
            raise ValueError("parameter count mismatch")
        for i in range(len(self.weights)):
            w, b = arrays[2 * i], arrays[2 * i + 1]
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise ValueError("parameter shape mismatch")
            self.weights[i] = np.array(w, dtype=np.float64)
            self.biases[i] = np.array(b, dtype=np.float64)

    def copy(self) -> "MLP":
        other = object.__new__(MLP)
        other.sizes = list(self.sizes)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def _as_batch(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected input dim {self.in_dim}, got {x.shape[-1]}")
        return x, single

    def forward_cache(self, x):
        """Forward pass keeping the per-layer activations needed by :meth:`backward`."""
        h, single = self._as_batch(x)
        acts = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h)
            acts.append(h)
        return (h[0] if single else h), (acts, single)

    def forward(self, x):
        return self.forward_cache(x)[0]

    __call__ = forward

    def backward(self, cache, dy):
        """Vector-Jacobian product. Returns ``(dx, grads)`` with grads ordered like ``params``."""
        acts, single = cache
        g = np.atleast_2d(np.asarray(dy, dtype=np.float64))
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * (1.0 - acts[i + 1] ** 2)
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return (g[0] if single else g), grads


def forward(net: MLP, x):
    return net.forward(x)


def grad_wrt_input(net: MLP, x):
    """Gradient of a scalar-output network w.r.t. its input (row-wise for batches)."""
    if net.out_dim != 1:
        raise ValueError("grad_wrt_input needs a scalar-output network")
    y, cache = net.forward_cache(x)
    dx, _ = net.backward(cache, np.ones_like(np.atleast_2d(y)))
    return dx


def grad_wrt_params(net: MLP, x, loss: Callable):
    """``loss(y) -> (value, dvalue/dy)``; returns ``(value, grads)``."""
    y, cache = net.forward_cache(x)
    value, dy = loss(y)
    if not np.isfinite(value):
        raise NonFiniteError(f"loss is {value}")
    _, grads = net.backward(cache, np.reshape(dy, np.shape(np.atleast_2d(y))))
    return float(value), grads


def squash(u):
    """Map a pre-squash Gaussian sample onto ``(0, 1)``."""
    return 0.5 * (np.tanh(u) + 1.0)


def squash_grad(u):
    return 0.5 * (1.0 - np.tanh(u) ** 2)


def log_squash_grad(u):
    """``log(d squash / du)``, stable for large ``|u|``."""
    au = np.abs(u)
    return -math.log(2.0) + 2.0 * (math.log(2.0) - au - np.log1p(np.exp(-2.0 * au)))


def gaussian_log_prob(u, mu, log_std):
    z = (u - mu) * np.exp(-log_std)
    return np.sum(-0.5 * z**2 - log_std - 0.5 * _LOG_2PI, axis=-1)


def gaussian_kl(mu_a, log_std_a, mu_b, log_std_b):
    """KL(N_a || N_b) for diagonal Gaussians, summed over the last axis."""
    var_a, var_b = np.exp(2 * log_std_a), np.exp(2 * log_std_b)
    return np.sum(log_std_b - log_std_a + (var_a + (mu_a - mu_b) ** 2) / (2 * var_b) - 0.5, axis=-1)


class GaussianPolicy:
    """Tanh-squashed diagonal Gaussian with a state-independent log-std.

    ``init_action`` (in (0, 1)) sets the output bias so that a fresh policy's
    mean action starts close to that value.
    """

    def __init__(self, obs_dim: int, act_dim: int = 1, hidden=(256, 256), rng=None, log_std_init=-0.5,
                 init_action: float = 0.5):
        if not 0.0 < init_action < 1.0:
            raise ValueError("init_action must lie in (0, 1)")
        self.mean_net = MLP([obs_dim, *hidden, act_dim], rng, out_gain=0.01)
        self.mean_net.biases[-1][:] = np.arctanh(2.0 * init_action - 1.0)
        self.log_std = np.full(act_dim, float(log_std_init))

    @property
    def obs_dim(self) -> int:
        return self.mean_net.in_dim

    @property
    def act_dim(self) -> int:
        return self.mean_net.out_dim

    @property
    def params(self) -> list[np.ndarray]:
        return self.mean_net.params + [self.log_std]

    def set_params(self, arrays):
        arrays = list(arrays)
        log_std = np.array(arrays[-1], dtype=np.float64)
        if log_std.shape != self.log_std.shape:
            raise ValueError("log_std shape mismatch")
        self.mean_net.set_params(arrays[:-1])
        self.log_std = log_std

    def clamped_log_std(self):
        return np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX)

    def copy(self) -> "GaussianPolicy":
        other = object.__new__(GaussianPolicy)
        other.mean_net = self.mean_net.copy()
        other.log_std = self.log_std.copy()
        return other

    def mean(self, obs):
        """Pre-squash mean."""
        return self.mean_net.forward(obs)

    def mean_action(self, obs):
        """Deterministic action in ``[0, 1]``."""
        return squash(self.mean(obs))

    def sample(self, obs, rng):
        """Returns ``(action, log_prob, u)`` where ``u`` is the pre-squash sample."""
        mu = self.mean(obs)
        log_std = self.clamped_log_std()
        u = mu + np.exp(log_std) * rng.standard_normal(np.shape(mu))
        logp = gaussian_log_prob(u, mu, log_std) - np.sum(log_squash_grad(u), axis=-1)
        return squash(u), logp, u


def sample_action(policy: GaussianPolicy, obs, rng):
    action, logp, _ = policy.sample(obs, rng)
    return action, logp


def kl_divergence(policy_a: GaussianPolicy, policy_b: GaussianPolicy, obs):
    """KL(pi_a(.|obs) || pi_b(.|obs)) on the pre-squash Gaussians."""
    if policy_a.act_dim != policy_b.act_dim:
        raise ValueError("action dimensions differ")
    return gaussian_kl(policy_a.mean(obs), policy_a.clamped_log_std(), policy_b.mean(obs), policy_b.clamped_log_std())


CRITIC_FLAVORS = ("V_r", "V_c", "Q_r", "Q_c")


class Critic:
    """Scalar value network; Q flavors read ``concat(obs, context, action)``.

    ``context_dim`` extra inputs (zero by default) carry side information that
    the critic may use but an attacker cannot touch, such as the episode phase.
    A critic without context inputs ignores any ``context`` it is given.
    """

    def __init__(self, flavor: str, obs_dim: int, act_dim: int = 1, hidden=(256, 256), rng=None,
                 context_dim: int = 0):
        if flavor not in CRITIC_FLAVORS:
            raise ValueError(f"unknown critic flavor {flavor!r}")
        if context_dim < 0:
            raise ValueError("context_dim must be non-negative")
        self.flavor = flavor
        self.obs_dim, self.act_dim, self.context_dim = obs_dim, act_dim, context_dim
        in_dim = obs_dim + context_dim + (act_dim if self.is_q else 0)
        self.net = MLP([in_dim, *hidden, 1], rng, out_gain=1.0)

    @property
    def is_q(self) -> bool:
        return self.flavor.startswith("Q")

    @property
    def params(self):
        return self.net.params

    def set_params(self, arrays):
        self.net.set_params(arrays)

    def copy(self) -> "Critic":
        other = object.__new__(Critic)
        other.flavor, other.obs_dim, other.act_dim = self.flavor, self.obs_dim, self.act_dim
        other.context_dim = self.context_dim
        other.net = self.net.copy()
        return other

    def inputs(self, obs, act=None, context=None):
        obs = np.asarray(obs, dtype=np.float64)
        parts = [obs]
        if self.context_dim:
            if context is None:
                raise ValueError(f"{self.flavor} critic needs {self.context_dim} context input(s)")
            context = np.asarray(context, dtype=np.float64)
            parts.append(np.broadcast_to(context, (*obs.shape[:-1], self.context_dim)))
        if self.is_q:
            if act is None:
                raise ValueError("Q critic needs an action")
            act = np.asarray(act, dtype=np.float64)
            if act.ndim < obs.ndim:
                act = act[..., None]
            parts.append(act)
        return np.concatenate(parts, axis=-1) if len(parts) > 1 else obs

    def value(self, obs, act=None, context=None):
        return self.net.forward(self.inputs(obs, act, context))[..., 0]

    def value_and_grads(self, obs, act=None, context=None):
        """Value plus its gradient w.r.t. ``obs`` and (for Q) ``act``."""
        y, cache = self.net.forward_cache(self.inputs(obs, act, context))
        dx, _ = self.net.backward(cache, np.ones_like(np.atleast_2d(y)))
        return y[..., 0], dx[..., : self.obs_dim], dx[..., self.obs_dim + self.context_dim :]


def _check_finite(grads):
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient")


def clip_grad_norm(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm is not None and total > max_norm:
        scale = max_norm / (total + 1e-12)
        grads = [g * scale for g in grads]
    return grads, total


class SGD:
    def __init__(self, params, lr=1e-2):
        self.lr = lr
        self.t = 0

    def step(self, params, grads):
        _check_finite(grads)
        self.t += 1
        for p, g in zip(params, grads):
            p -= self.lr * g

    def state(self):
        return {"t": self.t}, {}

    def load_state(self, scalars, arrays):
        self.t = int(scalars["t"])


class Adam:
    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        """In-place update of ``params``."""
        _check_finite(grads)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        arrays = {f"m{i}": m for i, m in enumerate(self.m)}
        arrays.update({f"v{i}": v for i, v in enumerate(self.v)})
        return {"t": self.t}, arrays

    def load_state(self, scalars, arrays):
        m = [np.array(arrays[f"m{i}"], dtype=np.float64) for i in range(len(self.m))]
        v = [np.array(arrays[f"v{i}"], dtype=np.float64) for i in range(len(self.v))]
        if [a.shape for a in m] != [a.shape for a in self.m] or [a.shape for a in v] != [a.shape for a in self.v]:
            raise ValueError("optimizer state shape mismatch")
        self.t = int(scalars["t"])
        self.m, self.v = m, v


def adam_step(params, grads, opt: Adam):
    opt.step(params, grads)
    return params


def sgd_step(params, grads, opt: SGD):
    opt.step(params, grads)
    return params


def polyak_update(target, online, tau: float):
    """``target <- (1 - tau) * target + tau * online`` in place; returns ``target``."""
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    tp, op = target.params, online.params
    if len(tp) != len(op) or any(a.shape != b.shape for a, b in zip(tp, op)):
        raise ValueError("target and online shapes differ")
    for a, b in zip(tp, op):
        a *= 1.0 - tau
        a += tau * b
    return target
