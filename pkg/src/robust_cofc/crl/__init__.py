"""Constrained (Lagrangian) PPO training and evaluation."""

from .evaluate import CONDITIONS, evaluate, evaluate_agent, summarize
from .ppol import LagrangianState, epsilon_schedule, lambda_update, ppo_lagrangian_loss
from .rollout import RolloutBatch, collect_rollout, discounted_returns, gae
from .trainer import METHODS, Agent, Problem, TrainConfig, TrainingDiverged, train, train_adv_ppol, train_sa_ppol
