"""Offline model-based RL with dynamics augmentation and test-time context adaptation."""

from .augment import AugKind, AugRange, apply, sample_z
from .core import (ContextVector, Dataset, NormStats, Rng, Transition,
                   compute_norm_stats, load_dataset, save_dataset)
from .envs import (DynamicsParams, EnvKind, EnvState, SwitchingEnv, ToyEnv,
                   env_reset, env_step, generate_offline_dataset)
from .model import EnsembleModel, ModelPrediction, penalized_reward, predict, train_ensemble, uncertainty
from .sac import Actor, Critics, act, actor_update, critic_update, target_sync
from .trainer import ReplayBuffer, TrainConfig, rollout_batch, train
from .adapter import AdaptConfig, LinearDynModel, adapt_rollout, estimate_context, fit_linear, r_squared
from .evaluation import EvalGridResult, SwitchSpec, aggregate, grid_eval, oracle_eval, switch_eval, welch_ttest

__version__ = "0.1.0"
