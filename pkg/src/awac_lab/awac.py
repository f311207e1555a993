"""Advantage-weighted actor-critic.

Policy evaluation is TD learning of twin Q functions against Polyak-averaged
targets. Policy improvement is weighted maximum likelihood on replay-buffer
actions, with weights exp(A/lam) where A is the critic's advantage estimate.
No behavior density model is ever fitted here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .envs import Environment
from .nn import Adam, GaussianPolicy, TwinCritic
from .replay import Batch, Dataset, ReplayBuffer
from .training import Agent, LoopConfig, MetricsRecord, run_loop


@dataclass
class AwacConfig:
    lam: float = 1.0
    gamma: float = 0.99
    num_offline_steps: int = 25_000
    batch_size: int = 1024
    trains_per_env_step: int = 1
    advantage_samples: int = 4
    clamp_q_max: float | None = None
    weight_exponent_clip: float = 20.0
    use_z_estimate: bool = False
    z_samples: int = 10
    policy_hidden: tuple[int, ...] = (256, 256, 256, 256)
    critic_hidden: tuple[int, ...] = (256, 256, 256, 256)
    policy_lr: float = 3e-4
    critic_lr: float = 3e-4
    policy_weight_decay: float = 1e-4
    critic_weight_decay: float = 0.0
    tau: float = 5e-3
    buffer_capacity: int = 1_000_000
    dtype: str = "float64"

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.batch_size < 1 or self.advantage_samples < 1 or self.z_samples < 1:
            raise ValueError("batch_size, advantage_samples and z_samples must be >= 1")
        self.policy_hidden = tuple(self.policy_hidden)
        self.critic_hidden = tuple(self.critic_hidden)


# ---------------------------------------------------------------- critic

def critic_target(batch: Batch, policy: GaussianPolicy, critic: TwinCritic, gamma: float,
                  noise: np.ndarray, clamp_q_max: float | None = None) -> np.ndarray:
    """y = r + gamma (1 - terminal) min(target Q1, target Q2)(s', a'), a' ~ pi(.|s')."""
    next_actions, _ = policy.sample_no_grad(batch.next_states, noise)
    q_next = critic.target_min(batch.next_states, next_actions)
    if clamp_q_max is not None:
        q_next = np.minimum(q_next, clamp_q_max)
    return batch.rewards + gamma * (1.0 - batch.terminals) * q_next


def critic_loss_grads(critic: TwinCritic, states, actions, targets) -> tuple[float, list[np.ndarray]]:
    """Sum over both twins of mean squared error against shared targets."""
    x = critic._inputs(states, actions)
    n = len(targets)
    loss, grads = 0.0, []
    for net in (critic.q1, critic.q2):
        err = net.forward(x)[:, 0] - targets
        loss += float(np.mean(err * err))
        g, _ = net.backward((2.0 / n) * err[:, None])
        grads += g
    return loss, grads


# ---------------------------------------------------------------- advantages

def advantage_from_q(q_fn: Callable, states, actions, candidates: Sequence[np.ndarray], weights=None) -> np.ndarray:
    """Q(s, a) minus a weighted average of Q(s, c_k) over candidate actions.

    ``candidates[k]`` holds one candidate action per state. With ``weights`` of
    shape (B, K) this is an exact expectation (e.g. enumerating a discrete action
    set); without, a uniform Monte-Carlo average.
    """
    q = q_fn(states, actions)
    qs = np.stack([q_fn(states, c) for c in candidates], axis=1)
    if weights is None:
        baseline = np.mean(qs, axis=1)
    else:
        baseline = np.sum(np.asarray(weights) * qs, axis=1)
    return q - baseline


def estimate_advantage(policy: GaussianPolicy, critic: TwinCritic, states, actions, k: int,
                       noise: np.ndarray) -> np.ndarray:
    """Q_min(s, a) - (1/K) sum_i Q_min(s, a_i) with a_i ~ pi(.|s); ``noise`` has shape (K, B, act_dim)."""
    states = np.atleast_2d(states)
    b = len(states)
    flat_states = np.tile(states, (k, 1))
    cand, _ = policy.sample_no_grad(flat_states, noise.reshape(k * b, -1))
    q = critic.q_min(states, actions)
    qs = critic.q_min(flat_states, cand).reshape(k, b)
    return q - np.mean(qs, axis=0)


def awac_weights(advantages, lam: float, clip: float = 20.0, z=None) -> np.ndarray:
    w = np.exp(np.minimum(np.asarray(advantages, dtype=np.float64) / lam, clip))
    if z is not None:
        w = w / z
    return w


def estimate_z(policy: GaussianPolicy, critic: TwinCritic, states, baseline, lam: float, n: int,
               noise: np.ndarray, clip: float = 20.0) -> np.ndarray:
    """Monte-Carlo E_{a~pi}[exp(A(s,a)/lam)] per state with ``n`` policy samples."""
    states = np.atleast_2d(states)
    b = len(states)
    flat_states = np.tile(states, (n, 1))
    cand, _ = policy.sample_no_grad(flat_states, noise.reshape(n * b, -1))
    adv = critic.q_min(flat_states, cand).reshape(n, b) - baseline
    return np.mean(np.exp(np.minimum(adv / lam, clip)), axis=0)


def weighted_nll_grads(policy: GaussianPolicy, states, actions, weights) -> tuple[float, list[np.ndarray]]:
    """Loss -mean(w * log pi(a|s)) and its parameter gradients; weights are constants."""
    weights = np.asarray(weights, dtype=np.float64)
    n = len(weights)
    logp, grads = policy.log_prob_grad(states, actions, -weights / n)
    return float(-np.mean(weights * logp)), grads


# ---------------------------------------------------------------- training state

class TrainState(Agent):
    """Networks, optimizers, buffer and counters for one AWAC run."""

    def __init__(self, obs_dim: int, act_dim: int, action_low, action_high, config: AwacConfig, seed: int = 0,
                 dataset: Dataset | None = None):
        self.config = config
        self.seed = seed
        init_ss, train_ss = np.random.SeedSequence(seed).spawn(2)
        init_rng = np.random.default_rng(init_ss)
        self.rng = np.random.default_rng(train_ss)
        dtype = np.dtype(config.dtype)
        self.policy = GaussianPolicy(obs_dim, act_dim, config.policy_hidden, init_rng, action_low, action_high,
                                     dtype=dtype)
        self.critic = TwinCritic(obs_dim, act_dim, config.critic_hidden, init_rng, tau=config.tau, dtype=dtype,
                                 action_low=action_low, action_high=action_high)
        self.policy_opt = Adam(self.policy.params, config.policy_lr, weight_decay=config.policy_weight_decay,
                               names=self.policy.param_names)
        self.critic_opt = Adam(self.critic.params, config.critic_lr, weight_decay=config.critic_weight_decay,
                               names=self.critic.param_names)
        self.buffer = ReplayBuffer(config.buffer_capacity)
        if dataset is not None:
            self.buffer.extend(dataset)
        self.grad_steps = 0
        self.env_steps = 0

    def noise(self, *shape) -> np.ndarray:
        return self.rng.standard_normal((*shape, self.policy.act_dim))

    def update(self) -> dict[str, float]:
        batch = self.buffer.sample_batch(self.config.batch_size, self.rng)
        closs = critic_update(self, batch, self.config)
        aloss = actor_update(self, batch, self.config)
        return {"critic_loss": closs, "actor_loss": aloss}


def critic_update(state: TrainState, batch: Batch, config: AwacConfig) -> float:
    y = critic_target(batch, state.policy, state.critic, config.gamma, state.noise(len(batch)), config.clamp_q_max)
    loss, grads = critic_loss_grads(state.critic, batch.states, batch.actions, y)
    if not math.isfinite(loss):
        raise FloatingPointError(f"non-finite critic loss at step {state.grad_steps}: max |y| = {np.max(np.abs(y))}")
    state.critic_opt.step(grads)
    state.critic.polyak_update(config.tau)
    return loss


def actor_update(state: TrainState, batch: Batch, config: AwacConfig, advantages=None) -> float:
    """One weighted-likelihood step on the batch's own actions.

    Advantages are computed (or supplied) before the likelihood pass and carry
    no gradient; the policy is only evaluated at buffer actions.
    """
    k = config.advantage_samples
    if advantages is None:
        advantages = estimate_advantage(state.policy, state.critic, batch.states, batch.actions, k,
                                        state.noise(k, len(batch)))
    z = None
    if config.use_z_estimate:
        baseline = state.critic.q_min(batch.states, batch.actions) - advantages
        z = estimate_z(state.policy, state.critic, batch.states, baseline, config.lam, config.z_samples,
                       state.noise(config.z_samples, len(batch)), config.weight_exponent_clip)
    w = awac_weights(advantages, config.lam, config.weight_exponent_clip, z)
    loss, grads = weighted_nll_grads(state.policy, batch.states, batch.actions, w)
    state.policy_opt.step(grads)
    return loss


@dataclass
class RunSettings:
    """Evaluation/IO knobs of a run that are not algorithm hyperparameters."""

    eval_every: int = 1000
    eval_episodes: int = 10
    offline_eval_every: int = 0
    record_wall_clock: bool = False
    trackers: list = field(default_factory=list)
    on_record: Callable[[MetricsRecord], None] | None = None


def run(env: Environment, eval_env: Environment, dataset: Dataset, config: AwacConfig, budget: int,
        seed: int = 0, settings: RunSettings | None = None, state: TrainState | None = None) -> list[MetricsRecord]:
    """Offline pretraining on ``dataset`` then online fine-tuning for ``budget`` env steps."""
    if dataset is None or dataset.n_transitions == 0:
        raise ValueError("AWAC needs a nonempty dataset")
    if budget < 0:
        raise ValueError("budget must be >= 0")
    settings = settings or RunSettings()
    if state is None:
        state = TrainState(env.obs_dim, env.act_dim, env.action_low, env.action_high, config, seed, dataset)
    loop = LoopConfig(config.num_offline_steps, budget, config.trains_per_env_step, settings.eval_every,
                      settings.eval_episodes, settings.offline_eval_every, settings.record_wall_clock)
    return run_loop(state, env, eval_env, loop, eval_seed=_eval_seed(seed), trackers=settings.trackers,
                    on_record=settings.on_record)


def _eval_seed(seed: int) -> int:
    return int(np.random.SeedSequence([seed, 7]).generate_state(1)[0]) % (2**31)
