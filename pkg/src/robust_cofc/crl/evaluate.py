"""Deterministic evaluation of trained agents under each observation condition."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..attacks import AMADAttacker, AttackBudget, AttackConfig, make_attacker
from ..seeding import stream

CONDITIONS = ("natural", "uniform", "mc", "mr", "mad", "amad")


@dataclass
class EpisodeResults:
    rewards: np.ndarray
    costs: np.ndarray
    fuel_g: np.ndarray
    visited: np.ndarray | None = None
    phases: np.ndarray | None = None


@dataclass
class Summary:
    reward_mean: float
    reward_std: float
    cost_mean: float
    cost_std: float
    n: int


def run_episodes(agent, problem, attacker, initial_soc, rng_attack) -> EpisodeResults:
    """One synchronized episode per initial SOC, acting with the policy mean."""
    env = problem.env(len(initial_soc))
    obs = env.reset(initial_soc)
    rew = np.zeros(env.n)
    cost = np.zeros(env.n)
    visited, phases = [], []
    while not env.done:
        phase = env.phase()
        visited.append(obs)
        phases.append(phase)
        action = agent.policy.mean_action(attacker(obs, rng_attack, phase))
        obs, r, c, _ = env.step(action[:, 0])
        rew += r
        cost += c
    return EpisodeResults(rew, cost, env.fuel_g_cum.copy(), np.concatenate(visited), np.concatenate(phases))


def evaluate_agent(agent, problem, condition, n_episodes, seed, epsilon, attack_cfg=None, norm_order=np.inf,
                   soc_spread=0.02) -> EpisodeResults:
    """Episodes for one trained agent; the eval seed fixes initial SOCs and attack noise."""
    if condition not in CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}")
    attack_cfg = attack_cfg or AttackConfig()
    init = problem.initial_soc(stream(seed, "eval"), n_episodes, soc_spread)
    kind = "none" if condition == "natural" else condition
    attacker = make_attacker(kind, agent.policy, agent.q_r, agent.q_c, AttackBudget(epsilon, norm_order), attack_cfg)
    if isinstance(attacker, AMADAttacker) and epsilon > 0:
        # threshold from the states a clean run of the same episodes visits
        clean = run_episodes(agent, problem, make_attacker("none"), init, None)
        attacker.calibrate(clean.visited, clean.phases)
    return run_episodes(agent, problem, attacker, init, stream(seed, "eval-attack"))


def summarize(results) -> Summary:
    rewards = np.concatenate([r.rewards for r in results])
    costs = np.concatenate([r.costs for r in results])
    return Summary(float(rewards.mean()), float(rewards.std()), float(costs.mean()), float(costs.std()), rewards.size)


def evaluate(agents, problem, condition, n_episodes, seeds, epsilon, **kw) -> Summary:
    """Pool ``n_episodes`` per (agent, eval seed) pair into one mean/std summary."""
    results = [evaluate_agent(a, problem, condition, n_episodes, s, epsilon, **kw) for a, s in zip(agents, seeds)]
    return summarize(results)


def diverged(reward_mean: float, baseline_reward_mean: float, factor: float = 3.0) -> bool:
    """Reward collapsed below ``factor`` times the baseline magnitude."""
    return reward_mean < -factor * abs(baseline_reward_mean)
