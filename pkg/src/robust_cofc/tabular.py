"""Exact small-CMDP checks of the observation-attack value bounds.

States live under the discrete metric (distance 1 between distinct states), so
an attack budget ``epsilon < 1`` leaves only the identity perturbation and
``epsilon >= 1`` admits the whole neighbourhood ``B(s)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

MAX_ENUMERATION = 10**6


class SearchSpaceTooLarge(ValueError):
    pass


class InfeasiblePolicy(ValueError):
    pass


@dataclass
class TabularCMDP:
    P: np.ndarray  # (S, A, S) transition probabilities
    R: np.ndarray  # (S, A, S)
    C: np.ndarray  # (S, A, S), non-negative
    gamma: float
    mu0: np.ndarray
    neighbors: list = field(default_factory=list)  # B(s), always containing s

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        S, A, S2 = self.P.shape
        if S != S2:
            raise ValueError("P must be (S, A, S)")
        if np.any(self.P < 0) or np.any(np.abs(self.P.sum(-1) - 1.0) > 1e-12):
            raise ValueError("each p(.|s,a) must be a probability vector")
        self.R = np.broadcast_to(np.asarray(self.R, dtype=np.float64), self.P.shape).copy()
        self.C = np.broadcast_to(np.asarray(self.C, dtype=np.float64), self.P.shape).copy()
        if np.any(self.C < 0):
            raise ValueError("costs must be non-negative")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        self.mu0 = np.asarray(self.mu0, dtype=np.float64)
        if not self.neighbors:
            self.neighbors = [[s] for s in range(S)]
        self.neighbors = [sorted(set(b) | {s}) for s, b in enumerate(self.neighbors)]

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    @property
    def max_cost(self) -> float:
        return float(self.C.max())

    def signal(self, flavor: str) -> np.ndarray:
        if flavor == "reward":
            return self.R
        if flavor == "cost":
            return self.C
        raise ValueError(f"flavor must be 'reward' or 'cost', got {flavor!r}")

    def attack_sets(self, epsilon: float):
        """Neighbourhoods reachable within ``epsilon`` under the discrete metric."""
        if epsilon >= 1:
            return self.neighbors
        return [[s] for s in range(self.n_states)]

    def unsafe_prob(self) -> np.ndarray:
        """``p_s = max_a P(next transition carries cost | s, a)``."""
        return (self.P * (self.C > 0)).sum(-1).max(-1)


def _check_policy(mdp: TabularCMDP, policy):
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy must be (S, A)")
    if np.any(policy < 0) or np.any(np.abs(policy.sum(-1) - 1.0) > 1e-9):
        raise ValueError("policy rows must be probability vectors")
    return policy


def attacked_policy(policy, attacker=None):
    """``pi(a | nu(s))`` for a deterministic map (S,) or a stochastic one (S, S)."""
    if attacker is None:
        return policy
    attacker = np.asarray(attacker)
    if attacker.ndim == 1:
        return policy[attacker]
    return attacker @ policy


def bellman(mdp: TabularCMDP, policy, v, flavor="cost", attacker=None):
    """One application of the attacked Bellman policy operator."""
    pa = attacked_policy(_check_policy(mdp, policy), attacker)
    f = mdp.signal(flavor)
    q = np.einsum("sat,sat->sa", mdp.P, f + mdp.gamma * np.asarray(v)[None, None, :])
    return np.sum(pa * q, axis=1)


def _induced(mdp, pa, flavor):
    P_pi = np.einsum("sa,sat->st", pa, mdp.P)
    f_pi = np.einsum("sa,sat,sat->s", pa, mdp.P, mdp.signal(flavor))
    return P_pi, f_pi


def solve_values(mdp: TabularCMDP, policy, flavor="cost", attacker=None):
    """Direct linear solve of the attacked Bellman equation."""
    pa = attacked_policy(_check_policy(mdp, policy), attacker)
    P_pi, f_pi = _induced(mdp, pa, flavor)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi, f_pi)


def policy_eval(mdp: TabularCMDP, policy, flavor="cost", attacker=None, tol=1e-10, max_iter=1_000_000):
    """Fixed point of the attacked Bellman operator by successive approximation."""
    pa = attacked_policy(_check_policy(mdp, policy), attacker)
    P_pi, f_pi = _induced(mdp, pa, flavor)
    v = np.zeros(mdp.n_states)
    # stop once the remaining error (gamma/(1-gamma)) * step is below tol
    factor = mdp.gamma / (1.0 - mdp.gamma) if mdp.gamma > 0 else 0.0
    for _ in range(max_iter):
        nv = f_pi + mdp.gamma * P_pi @ v
        step = np.max(np.abs(nv - v))
        v = nv
        if step * factor <= tol or step == 0:
            return v
    raise RuntimeError("policy evaluation did not converge")


def enumerate_attackers(sets):
    size = math.prod(len(b) for b in sets)
    if size > MAX_ENUMERATION:
        raise SearchSpaceTooLarge(f"{size} deterministic attackers exceed {MAX_ENUMERATION}")
    for combo in itertools.product(*sets):
        yield np.array(combo)


def best_deterministic_attacker(mdp: TabularCMDP, policy, objective="cost", epsilon=1.0):
    """Exhaustive search for the map maximizing ``V^{pi o nu}(mu0)``.

    Returns ``(attacker, value)``; ties keep the first map in enumeration order.
    """
    best, best_val = None, -math.inf
    for nu in enumerate_attackers(mdp.attack_sets(epsilon)):
        val = float(mdp.mu0 @ solve_values(mdp, policy, objective, nu))
        if val > best_val + 1e-15:
            best, best_val = nu, val
    return best, best_val


def random_stochastic_attacker(mdp: TabularCMDP, rng, epsilon=1.0):
    """Per-state Dirichlet mixture over the admissible perturbed states, shape (S, S)."""
    out = np.zeros((mdp.n_states, mdp.n_states))
    for s, b in enumerate(mdp.attack_sets(epsilon)):
        out[s, b] = rng.dirichlet(np.ones(len(b)))
    return out


def tv_distance(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def lipschitz_constant(mdp: TabularCMDP, policy) -> float:
    """Smallest L with TV(pi(s'), pi(s)) <= L d(s, s') over s' in B(s)."""
    policy = _check_policy(mdp, policy)
    L = 0.0
    for s, b in enumerate(mdp.neighbors):
        for t in b:
            if t != s:
                L = max(L, tv_distance(policy[s], policy[t]))
    return L


@dataclass
class BoundCheck:
    lhs: float
    rhs: float
    holds: bool

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


def one_step_values(mdp: TabularCMDP, policy, epsilon):
    """Per-state worst one-step-attacked cost value and the clean cost value."""
    policy = _check_policy(mdp, policy)
    v = solve_values(mdp, policy, "cost")
    q = np.einsum("sat,sat->sa", mdp.P, mdp.C + mdp.gamma * v[None, None, :])
    worst = np.array([max(float(policy[t] @ q[s]) for t in b) for s, b in enumerate(mdp.attack_sets(epsilon))])
    return worst, v


def check_one_step_bound(mdp: TabularCMDP, policy, lipschitz_L, epsilon, tol=1e-12) -> BoundCheck:
    """Worst single-step attack increase of the cost value against its per-state bound.

    ``lhs``/``rhs`` are reported at the state with the smallest margin.
    """
    worst, v = one_step_values(mdp, policy, epsilon)
    lhs = worst - v
    g, Cm = mdp.gamma, mdp.max_cost
    rhs = 2.0 * lipschitz_L * epsilon * (mdp.unsafe_prob() * Cm + g * Cm / (1.0 - g))
    i = int(np.argmin(rhs - lhs))
    return BoundCheck(float(lhs[i]), float(rhs[i]), bool(np.all(lhs <= rhs + tol)))


def episodic_bound(mdp: TabularCMDP, L, epsilon, kappa) -> float:
    g, Cm = mdp.gamma, mdp.max_cost
    return kappa + 2.0 * L * epsilon * Cm * (1.0 / (1.0 - g) + 4.0 * g * L * epsilon / (1.0 - g) ** 2) * (
        float(mdp.unsafe_prob().max()) + g / (1.0 - g)
    )


def check_episodic_bound(mdp: TabularCMDP, policy, L, epsilon, kappa, tol=1e-12) -> BoundCheck:
    """Worst attacked episodic cost value of a feasible policy against its bound."""
    clean = float(mdp.mu0 @ solve_values(mdp, policy, "cost"))
    if clean > kappa + tol:
        raise InfeasiblePolicy(f"V_c(mu0)={clean:.6g} exceeds kappa={kappa:.6g}")
    _, lhs = best_deterministic_attacker(mdp, policy, "cost", epsilon)
    rhs = episodic_bound(mdp, L, epsilon, kappa)
    return BoundCheck(lhs, rhs, lhs <= rhs + tol)


@dataclass
class ContractionCheck:
    ratio: float
    holds: bool


def check_contraction(mdp: TabularCMDP, policy, attacker, v1, v2, flavor="cost", tol=1e-12) -> ContractionCheck:
    d = float(np.max(np.abs(np.asarray(v1) - np.asarray(v2))))
    if d == 0:
        return ContractionCheck(0.0, True)
    t1 = bellman(mdp, policy, v1, flavor, attacker)
    t2 = bellman(mdp, policy, v2, flavor, attacker)
    ratio = float(np.max(np.abs(t1 - t2))) / d
    return ContractionCheck(ratio, ratio <= mdp.gamma + tol)


def random_cmdp(rng, n_states=5, n_actions=2, gamma=0.9, cost_density=0.3, neighbors=2) -> TabularCMDP:
    """Dirichlet transitions, sparse Bernoulli-masked uniform costs, random neighbourhoods."""
    S, A = n_states, n_actions
    P = rng.dirichlet(np.ones(S), size=(S, A))
    P /= P.sum(-1, keepdims=True)
    R = rng.uniform(-1.0, 0.0, size=(S, A, S))
    C = rng.uniform(0.0, 1.0, size=(S, A, S)) * (rng.random((S, A, S)) < cost_density)
    mu0 = rng.dirichlet(np.ones(S))
    nb = [[s, *rng.choice([t for t in range(S) if t != s], size=min(neighbors, S - 1), replace=False).tolist()]
          for s in range(S)]
    return TabularCMDP(P, R, C, gamma, mu0, nb)


def random_policy(rng, n_states, n_actions, concentration=1.0):
    return rng.dirichlet(np.full(n_actions, concentration), size=n_states)


def tight_instance(gamma=0.9) -> tuple[TabularCMDP, np.ndarray]:
    """Three-state instance where the one-step bound is exactly twice the worst attack.

    State 0 may be perceived as state 1, whose action leads into the absorbing
    unsafe state 1; the clean policy at state 0 heads to the safe state 2.
    """
    P = np.zeros((3, 2, 3))
    P[0, 0, 1] = P[0, 1, 2] = 1.0
    P[1, :, 1] = 1.0
    P[2, :, 2] = 1.0
    C = np.zeros((3, 2, 3))
    C[:, :, 1] = 1.0
    C[2] = 0.0
    policy = np.array([[0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    mdp = TabularCMDP(P, np.zeros_like(P), C, gamma, np.array([1.0, 0.0, 0.0]), [[0, 1], [1], [2]])
    return mdp, policy


@dataclass
class CheckReport:
    check: str
    seeds: int
    min_margin: float
    passed: bool
    detail: str = ""


def run_suite(seeds=range(100), n_states=5, n_actions=2, gamma=0.9, neighbors=2, lipschitz_scale=1.0,
              mixtures=100, contraction_trials=10, instances=None):
    """Run every bound check on random instances seeded by ``seeds``.

    ``instances`` (a list of ``(mdp, policy)``) replaces the random generator.
    """
    seeds = list(seeds)
    if instances is None:
        instances = []
        for seed in seeds:
            rng = np.random.default_rng([seed, 1])
            mdp = random_cmdp(rng, n_states, n_actions, gamma, neighbors=neighbors)
            instances.append((mdp, random_policy(rng, n_states, n_actions)))
    m1, m2, m3, m4 = [], [], [], []
    for k, (mdp, policy) in enumerate(instances):
        rng = np.random.default_rng([seeds[k] if k < len(seeds) else k, 2])
        # deterministic attackers dominate stochastic mixtures, for cost and reward
        for objective in ("cost", "reward"):
            _, best = best_deterministic_attacker(mdp, policy, objective)
            sampled = max(
                float(mdp.mu0 @ solve_values(mdp, policy, objective, random_stochastic_attacker(mdp, rng)))
                for _ in range(mixtures)
            )
            m1.append(best - sampled)
        L = lipschitz_scale * lipschitz_constant(mdp, policy)
        m2.append(check_one_step_bound(mdp, policy, L, 1.0).margin)
        kappa = float(mdp.mu0 @ solve_values(mdp, policy, "cost"))
        m3.append(check_episodic_bound(mdp, policy, L, 1.0, kappa).margin)
        for _ in range(contraction_trials):
            nu = random_stochastic_attacker(mdp, rng)
            v1, v2 = rng.normal(scale=10.0, size=(2, mdp.n_states))
            flavor = "cost" if rng.random() < 0.5 else "reward"
            m4.append(mdp.gamma - check_contraction(mdp, policy, nu, v1, v2, flavor).ratio)
    n = len(instances)
    return [
        CheckReport("deterministic-attacker", n, min(m1), min(m1) >= -1e-9, f"{len(m1)} comparisons"),
        CheckReport("one-step-bound", n, min(m2), min(m2) >= -1e-12),
        CheckReport("episodic-bound", n, min(m3), min(m3) >= -1e-12),
        CheckReport("contraction", n, min(m4), min(m4) >= -1e-12, f"{len(m4)} trials"),
    ]
