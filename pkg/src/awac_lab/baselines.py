"""Reference algorithms: behavior cloning, SAC and its demonstration variants,
an explicit behavior-penalty actor-critic, AWR and MARWIL.

Every agent here plugs into ``training.run_loop`` exactly like AWAC, so all of
them consume the same datasets, environments and metrics stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .awac import RunSettings, _eval_seed, critic_loss_grads, weighted_nll_grads
from .envs import Environment
from .nn import Adam, DenseNet, GaussianPolicy, TwinCritic
from .replay import Batch, Dataset, ReplayBuffer
from .training import Agent, LoopConfig, MetricsRecord, run_loop

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


# ---------------------------------------------------------------- behavior density model

class BehaviorDensityModel:
    """State-conditional diagonal Gaussian over raw (unsquashed) actions, fitted by MLE.

    Unlike the policy there is no tanh squashing, so the density stays bounded
    for actions near the box edges.
    """

    def __init__(self, obs_dim: int, act_dim: int, hidden=(64, 64), rng=None, dtype=np.float64,
                 log_std_bounds=(-10.0, 2.0), lr: float = 1e-3):
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.trunk = DenseNet([obs_dim, *hidden, 2 * act_dim], rng, dtype=dtype)
        self.log_std_bounds = log_std_bounds
        self.opt = Adam(self.trunk.params, lr, names=self.trunk.param_names)
        self.history: list[float] = []

    def _heads(self, out):
        lo, hi = self.log_std_bounds
        raw = out[:, self.act_dim :]
        return out[:, : self.act_dim], np.clip(raw, lo, hi), (raw >= lo) & (raw <= hi)

    def log_prob(self, states, actions) -> np.ndarray:
        mean, log_std, _ = self._heads(self.trunk.predict(np.atleast_2d(states)))
        z = (np.atleast_2d(actions) - mean) * np.exp(-log_std)
        return np.sum(-0.5 * z * z - log_std - _HALF_LOG_2PI, axis=1)

    def log_prob_grad(self, states, actions, coef):
        """Log-densities and parameter gradients of ``sum(coef * log_prob)``."""
        mean, log_std, inside = self._heads(self.trunk.forward(np.atleast_2d(states)))
        z = (np.atleast_2d(actions) - mean) * np.exp(-log_std)
        logp = np.sum(-0.5 * z * z - log_std - _HALF_LOG_2PI, axis=1)
        c = np.asarray(coef, dtype=np.float64)[:, None]
        grads, _ = self.trunk.backward(np.concatenate([c * z * np.exp(-log_std), c * (z * z - 1.0) * inside], axis=1))
        return logp, grads

    def action_grad(self, states, actions) -> tuple[np.ndarray, np.ndarray]:
        """Log-densities and d log p / d action; the model itself is held fixed."""
        mean, log_std = self._heads(self.trunk.predict(np.atleast_2d(states)))[:2]
        inv_var = np.exp(-2.0 * log_std)
        diff = np.atleast_2d(actions) - mean
        logp = np.sum(-0.5 * diff * diff * inv_var - log_std - _HALF_LOG_2PI, axis=1)
        return logp, -diff * inv_var

    def fit(self, states, actions, steps: int, batch_size: int, rng: np.random.Generator) -> float:
        """``steps`` Adam steps of MLE on minibatches; returns mean log-likelihood on all the data."""
        n = len(states)
        for _ in range(steps):
            idx = rng.integers(0, n, size=batch_size)
            _, grads = self.log_prob_grad(states[idx], actions[idx], np.full(batch_size, -1.0 / batch_size))
            self.opt.step(grads)
        ll = float(np.mean(self.log_prob(states, actions)))
        self.history.append(ll)
        return ll


class BehaviorTracker:
    """Refits a behavior density model on the host agent's buffer at each cadence point.

    Records mean log-likelihood on the whole buffer and on the most recent
    ``recent_window`` online transitions. ``plateau`` is the whole-buffer value
    at the last offline-phase refit.
    """

    def __init__(self, obs_dim, act_dim, hidden=(64, 64), seed=0, fit_steps=500, batch_size=256,
                 recent_window=2000, lr=1e-3, dtype=np.float32):
        self.rng = np.random.default_rng(seed)
        self.model = BehaviorDensityModel(obs_dim, act_dim, hidden, self.rng, dtype=dtype, lr=lr)
        self.fit_steps, self.batch_size, self.recent_window = fit_steps, batch_size, recent_window
        self.offline_series: list[tuple[int, float]] = []
        self.online_series: list[tuple[int, float, float]] = []
        self.plateau = math.nan

    def _refit(self, buffer: ReplayBuffer) -> float:
        data = buffer.all()
        return self.model.fit(data.states, data.actions, self.fit_steps, self.batch_size, self.rng)

    def on_offline(self, agent: Agent, step: int) -> None:
        ll = self._refit(agent.buffer)
        self.offline_series.append((step, ll))
        self.plateau = ll

    def on_eval(self, agent: Agent, rec: MetricsRecord) -> None:
        if not self.offline_series:
            # no offline cadence configured: the first evaluation stands in for the plateau
            self.on_offline(agent, agent.grad_steps)
        ll = self._refit(agent.buffer)
        recent = math.nan
        n_online = min(agent.env_steps, self.recent_window)
        if n_online > 0:
            b = agent.buffer.recent(n_online)
            recent = float(np.mean(self.model.log_prob(b.states, b.actions)))
        rec.behavior_loglik, rec.behavior_loglik_recent = ll, recent
        self.online_series.append((agent.env_steps, ll, recent))


def behavior_model_fit_and_track(obs_dim: int, act_dim: int, **kwargs) -> BehaviorTracker:
    return BehaviorTracker(obs_dim, act_dim, **kwargs)


# ---------------------------------------------------------------- config

@dataclass
class BaselineConfig:
    gamma: float = 0.99
    num_offline_steps: int = 0
    batch_size: int = 1024
    trains_per_env_step: int = 1
    policy_hidden: tuple[int, ...] = (256, 256, 256, 256)
    critic_hidden: tuple[int, ...] = (256, 256, 256, 256)
    policy_lr: float = 3e-4
    critic_lr: float = 3e-4
    policy_weight_decay: float = 0.0
    tau: float = 5e-3
    buffer_capacity: int = 1_000_000
    dtype: str = "float64"
    clamp_q_max: float | None = None
    # SAC entropy weight
    init_log_alpha: float = 0.0
    alpha_lr: float = 3e-4
    fixed_alpha: float | None = None
    target_entropy: float | None = None  # None: -act_dim measured in the unit box
    # SACfD mode: prior (buffer preload), pretrain (preload + BC actor), scratch (no data)
    sacfd_mode: str = "prior"
    bc_steps: int = 2000
    bc_lr: float = 1e-3
    # SAC+BC and the behavior-penalty variant
    bc_weight: float = 0.0
    brac_penalty: float = 0.0
    behavior_hidden: tuple[int, ...] = (64, 64)
    behavior_refit_every: int = 1000
    behavior_fit_steps: int = 200
    # AWR / MARWIL
    awr_temperature: float = 1.0
    td_lambda: float = 0.95
    weight_exponent_clip: float = 20.0
    value_hidden: tuple[int, ...] = (256, 256)
    value_lr: float = 1e-3
    return_refresh_every: int = 500
    marwil: bool = False

    def __post_init__(self):
        for name in ("bc_weight", "brac_penalty", "awr_temperature", "bc_steps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.awr_temperature > 0:
            raise ValueError("awr_temperature must be positive")
        if not 0.0 <= self.td_lambda <= 1.0:
            raise ValueError("td_lambda must lie in [0, 1]")
        if self.sacfd_mode not in ("prior", "pretrain", "scratch"):
            raise ValueError(f"unknown sacfd_mode {self.sacfd_mode!r}")
        for name in ("policy_hidden", "critic_hidden", "behavior_hidden", "value_hidden"):
            setattr(self, name, tuple(getattr(self, name)))


# ---------------------------------------------------------------- behavior cloning

def bc_loss_grads(policy: GaussianPolicy, states, actions):
    """Negative mean log-likelihood of ``actions``; equal to the weighted loss with unit weights."""
    return weighted_nll_grads(policy, states, actions, np.ones(len(actions)))


def bc_train(dataset: Dataset, policy: GaussianPolicy, steps: int, batch_size: int = 256, lr: float = 1e-3,
             rng: np.random.Generator | None = None, weight_decay: float = 0.0) -> GaussianPolicy:
    """Maximum-likelihood fit of ``policy`` to the dataset's actions (in place)."""
    if dataset.n_transitions == 0:
        raise ValueError("cannot clone an empty dataset")
    rng = np.random.default_rng(0) if rng is None else rng
    states = np.concatenate([t.states for t in dataset.trajectories])
    actions = policy.inside_box(np.concatenate([t.actions for t in dataset.trajectories]))
    opt = Adam(policy.params, lr, weight_decay=weight_decay, names=policy.param_names)
    for _ in range(steps):
        idx = rng.integers(0, len(states), size=batch_size)
        _, grads = bc_loss_grads(policy, states[idx], actions[idx])
        opt.step(grads)
    return policy


# ---------------------------------------------------------------- SAC family

def sac_critic_target(batch: Batch, policy: GaussianPolicy, critic: TwinCritic, gamma: float, alpha: float,
                      noise, clamp_q_max=None) -> np.ndarray:
    next_actions, next_logp = policy.sample_no_grad(batch.next_states, noise)
    q_next = critic.target_min(batch.next_states, next_actions)
    if clamp_q_max is not None:
        q_next = np.minimum(q_next, clamp_q_max)
    return batch.rewards + gamma * (1.0 - batch.terminals) * (q_next - alpha * next_logp)


def sac_actor_loss_grads(policy: GaussianPolicy, critic: TwinCritic, states, noise, alpha: float,
                         demo=None, bc_weight: float = 0.0, behavior: BehaviorDensityModel | None = None,
                         brac_penalty: float = 0.0):
    """Reparameterized actor loss mean(alpha log pi(a~|s) - Q_min(s, a~)) plus optional terms.

    ``demo = (states, actions)`` adds ``bc_weight`` times the BC loss on those
    pairs; ``behavior`` adds ``-brac_penalty * mean(log pi_b(a~|s))``.
    Returns (loss, grads, log-probs of the samples).
    """
    n = len(states)
    actions, logp = policy.sample(states, noise)
    q, dq_da = critic.q_min_action_grad(states, actions, np.full(n, -1.0 / n))
    loss = float(np.mean(alpha * logp - q))
    grad_a = dq_da
    if behavior is not None and brac_penalty > 0:
        blogp, db_da = behavior.action_grad(states, actions)
        loss -= brac_penalty * float(np.mean(blogp))
        grad_a = grad_a - (brac_penalty / n) * db_da
    grads = policy.sample_backward(grad_a, np.full(n, alpha / n))
    if demo is not None and bc_weight > 0:
        bc_loss, bc_grads = bc_loss_grads(policy, *demo)
        loss += bc_weight * bc_loss
        grads = [g + bc_weight * h for g, h in zip(grads, bc_grads)]
    return loss, grads, logp


def scaled_target_entropy(policy: GaussianPolicy) -> float:
    """-act_dim for a unit box, shifted by the log-volume of the actual action box."""
    return float(-policy.act_dim + np.sum(np.log(policy.half)))


class SacAgent(Agent):
    """SAC with automatic entropy tuning; optional BC term and behavior-density penalty."""

    def __init__(self, obs_dim, act_dim, action_low, action_high, config: BaselineConfig, seed: int = 0,
                 dataset: Dataset | None = None):
        self.config = config
        init_ss, train_ss, bc_ss = np.random.SeedSequence(seed).spawn(3)
        init_rng = np.random.default_rng(init_ss)
        self.rng = np.random.default_rng(train_ss)
        dtype = np.dtype(config.dtype)
        self.policy = GaussianPolicy(obs_dim, act_dim, config.policy_hidden, init_rng, action_low, action_high,
                                     dtype=dtype)
        self.critic = TwinCritic(obs_dim, act_dim, config.critic_hidden, init_rng, tau=config.tau, dtype=dtype,
                                 action_low=action_low, action_high=action_high)
        self.policy_opt = Adam(self.policy.params, config.policy_lr, weight_decay=config.policy_weight_decay,
                               names=self.policy.param_names)
        self.critic_opt = Adam(self.critic.params, config.critic_lr, names=self.critic.param_names)
        self.log_alpha = np.array([config.init_log_alpha])
        self.alpha_opt = Adam([self.log_alpha], config.alpha_lr, names=["log_alpha"])
        self.target_entropy = (scaled_target_entropy(self.policy) if config.target_entropy is None
                               else config.target_entropy)
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.demos = None
        if dataset is not None and dataset.n_transitions:
            self.demos = (np.concatenate([t.states for t in dataset.trajectories]),
                          self.policy.inside_box(np.concatenate([t.actions for t in dataset.trajectories])))
            if config.sacfd_mode != "scratch":
                self.buffer.extend(dataset)
            if config.sacfd_mode == "pretrain":
                bc_train(dataset, self.policy, config.bc_steps, min(config.batch_size, 256), config.bc_lr,
                         np.random.default_rng(bc_ss))
        self.behavior = None
        if config.brac_penalty > 0:
            self.behavior = BehaviorDensityModel(obs_dim, act_dim, config.behavior_hidden, init_rng, dtype=dtype)
        self.grad_steps = 0
        self.env_steps = 0

    @property
    def alpha(self) -> float:
        return float(self.config.fixed_alpha if self.config.fixed_alpha is not None else math.exp(self.log_alpha[0]))

    def noise(self, *shape):
        return self.rng.standard_normal((*shape, self.policy.act_dim))

    def _refit_behavior(self):
        data = self.buffer.all()
        self.behavior.fit(data.states, data.actions, self.config.behavior_fit_steps, 256, self.rng)

    def update(self) -> dict[str, float]:
        cfg = self.config
        if self.behavior is not None and self.grad_steps % cfg.behavior_refit_every == 0:
            self._refit_behavior()
        batch = self.buffer.sample_batch(cfg.batch_size, self.rng)
        return sac_step(self, batch)


def sac_step(agent: SacAgent, batch: Batch) -> dict[str, float]:
    """Critic, actor and entropy-weight updates on one batch (with the agent's optional extra terms)."""
    cfg = agent.config
    alpha = agent.alpha
    y = sac_critic_target(batch, agent.policy, agent.critic, cfg.gamma, alpha, agent.noise(len(batch)),
                          cfg.clamp_q_max)
    closs, cgrads = critic_loss_grads(agent.critic, batch.states, batch.actions, y)
    if not math.isfinite(closs):
        raise FloatingPointError(f"non-finite SAC critic loss at step {agent.grad_steps}")
    agent.critic_opt.step(cgrads)
    agent.critic.polyak_update(cfg.tau)
    demo = None
    if cfg.bc_weight > 0 and agent.demos is not None:
        idx = agent.rng.integers(0, len(agent.demos[0]), size=min(len(batch), 256))
        demo = (agent.demos[0][idx], agent.demos[1][idx])
    aloss, agrads, logp = sac_actor_loss_grads(agent.policy, agent.critic, batch.states, agent.noise(len(batch)),
                                               alpha, demo, cfg.bc_weight, agent.behavior, cfg.brac_penalty)
    agent.policy_opt.step(agrads)
    if cfg.fixed_alpha is None:
        # d/d log_alpha of -log_alpha * mean(logp + target)
        agent.alpha_opt.step([np.array([-float(np.mean(logp)) - agent.target_entropy])])
    return {"critic_loss": closs, "actor_loss": aloss}


def sac_bc_step(agent: SacAgent, batch: Batch) -> dict[str, float]:
    if agent.config.bc_weight <= 0 or agent.demos is None:
        raise ValueError("SAC+BC needs bc_weight > 0 and demonstration data")
    return sac_step(agent, batch)


def brac_style_step(agent: SacAgent, batch: Batch) -> dict[str, float]:
    if agent.behavior is None:
        raise ValueError("the behavior-penalty variant needs brac_penalty > 0")
    return sac_step(agent, batch)


# ---------------------------------------------------------------- AWR / MARWIL

def lambda_returns(rewards, next_values, terminal_end: bool, gamma: float, trace: float,
                   bootstrap_tail: bool = True) -> np.ndarray:
    """TD(lambda) returns of one trajectory.

    ``next_values[t]`` is V(s_{t+1}). The recursion is
    R_t = r_t + gamma ((1 - trace) V(s_{t+1}) + trace R_{t+1}); the last step
    bootstraps from V only if the trajectory was cut (not terminal) and
    ``bootstrap_tail`` is set.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    nv = np.asarray(next_values, dtype=np.float64)
    x = rewards + gamma * (1.0 - trace) * nv
    tail = 0.0 if (terminal_end or not bootstrap_tail) else nv[-1]
    x[-1] = rewards[-1] + gamma * tail
    return lfilter([1.0], [1.0, -gamma * trace], x[::-1])[::-1]


def value_loss_grads(value_net: DenseNet, states, targets):
    err = value_net.forward(states)[:, 0] - targets
    grads, _ = value_net.backward((2.0 / len(targets)) * err[:, None])
    return float(np.mean(err * err)), grads


class AwrAgent(Agent):
    """Advantage-weighted regression against a value function of the buffer's behavior.

    Returns are recomputed over the whole buffer after every collected
    trajectory and every ``return_refresh_every`` offline steps. With
    ``marwil`` the advantage uses the plain single-path discounted return.
    """

    def __init__(self, obs_dim, act_dim, action_low, action_high, config: BaselineConfig, seed: int = 0,
                 dataset: Dataset | None = None):
        self.config = config
        init_ss, train_ss = np.random.SeedSequence(seed).spawn(2)
        init_rng = np.random.default_rng(init_ss)
        self.rng = np.random.default_rng(train_ss)
        dtype = np.dtype(config.dtype)
        self.policy = GaussianPolicy(obs_dim, act_dim, config.policy_hidden, init_rng, action_low, action_high,
                                     dtype=dtype)
        self.value = DenseNet([obs_dim, *config.value_hidden, 1], init_rng, dtype=dtype)
        self.policy_opt = Adam(self.policy.params, config.policy_lr, weight_decay=config.policy_weight_decay,
                               names=self.policy.param_names)
        self.value_opt = Adam(self.value.params, config.value_lr, names=self.value.param_names)
        self.buffer = ReplayBuffer(config.buffer_capacity)
        if dataset is not None:
            self.buffer.extend(dataset)
        self.returns = np.zeros(config.buffer_capacity)
        self.grad_steps = 0
        self.env_steps = 0
        if len(self.buffer):
            self.refresh_returns()

    def refresh_returns(self) -> None:
        cfg = self.config
        trace = 1.0 if cfg.marwil else cfg.td_lambda
        slices = self.buffer.trajectory_slices()
        if not slices:
            return
        all_slots = np.concatenate(slices)
        next_v = self.value.predict(self.buffer.next_states[all_slots])[:, 0].astype(np.float64)
        start = 0
        for sl in slices:
            n = len(sl)
            self.returns[sl] = lambda_returns(self.buffer.rewards[sl], next_v[start : start + n],
                                              bool(self.buffer.terminals[sl[-1]]), cfg.gamma, trace,
                                              bootstrap_tail=not cfg.marwil)
            start += n

    def after_trajectory(self, traj) -> None:
        self.refresh_returns()

    def offline_update(self) -> dict[str, float]:
        if self.grad_steps and self.grad_steps % self.config.return_refresh_every == 0:
            self.refresh_returns()
        return self.update()

    def update(self) -> dict[str, float]:
        cfg = self.config
        batch = self.buffer.sample_batch(cfg.batch_size, self.rng)
        targets = self.returns[batch.indices]
        vloss, vgrads = value_loss_grads(self.value, batch.states, targets)
        adv = awr_advantages(self.value, batch.states, targets)
        aloss, agrads = awr_actor_loss_grads(self.policy, batch.states, batch.actions, adv, cfg.awr_temperature,
                                             cfg.weight_exponent_clip)
        self.value_opt.step(vgrads)
        self.policy_opt.step(agrads)
        return {"critic_loss": vloss, "actor_loss": aloss}


def awr_advantages(value_net: DenseNet, states, returns) -> np.ndarray:
    return np.asarray(returns, dtype=np.float64) - value_net.predict(states)[:, 0]


def awr_actor_loss_grads(policy: GaussianPolicy, states, actions, advantages, temperature: float,
                         clip: float = 20.0):
    w = np.exp(np.minimum(np.asarray(advantages) / temperature, clip))
    return weighted_nll_grads(policy, states, policy.inside_box(actions), w)


def awr_step(agent: AwrAgent) -> dict[str, float]:
    if agent.config.marwil:
        raise ValueError("agent is configured for MARWIL")
    return agent.update()


def marwil_step(agent: AwrAgent) -> dict[str, float]:
    if not agent.config.marwil:
        raise ValueError("agent is configured for AWR")
    return agent.update()


# ---------------------------------------------------------------- runs

BASELINE_ALGOS = ("bc", "sac", "sacfd_prior", "sacfd_pretrain", "sac_bc", "brac", "awr", "marwil")


def make_baseline_agent(algo: str, env: Environment, config: BaselineConfig, seed: int,
                        dataset: Dataset | None) -> Agent:
    args = (env.obs_dim, env.act_dim, env.action_low, env.action_high)
    if algo in ("sac", "sacfd_prior", "sacfd_pretrain", "sac_bc", "brac"):
        mode = {"sac": "scratch", "sacfd_prior": "prior", "sacfd_pretrain": "pretrain"}.get(algo, config.sacfd_mode)
        if mode != config.sacfd_mode:
            config = _replace(config, sacfd_mode=mode)
        if algo == "sac_bc" and config.bc_weight <= 0:
            raise ValueError("sac_bc requires bc_weight > 0")
        if algo == "brac" and config.brac_penalty <= 0:
            raise ValueError("brac requires brac_penalty > 0")
        return SacAgent(*args, config, seed, dataset)
    if algo in ("awr", "marwil"):
        if (algo == "marwil") != config.marwil:
            config = _replace(config, marwil=(algo == "marwil"))
        return AwrAgent(*args, config, seed, dataset)
    if algo == "bc":
        return BcAgent(*args, config, seed, dataset)
    raise ValueError(f"unknown baseline {algo!r}")


class BcAgent(Agent):
    """Behavior cloning on the dataset; online data is collected but never trained on."""

    def __init__(self, obs_dim, act_dim, action_low, action_high, config: BaselineConfig, seed=0, dataset=None):
        if dataset is None or dataset.n_transitions == 0:
            raise ValueError("behavior cloning needs a nonempty dataset")
        init_ss, train_ss, bc_ss = np.random.SeedSequence(seed).spawn(3)
        self.rng = np.random.default_rng(train_ss)
        self.policy = GaussianPolicy(obs_dim, act_dim, config.policy_hidden, np.random.default_rng(init_ss),
                                     action_low, action_high, dtype=np.dtype(config.dtype))
        bc_train(dataset, self.policy, config.bc_steps, min(config.batch_size, 256), config.bc_lr,
                 np.random.default_rng(bc_ss))
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.buffer.extend(dataset)
        self.grad_steps = 0
        self.env_steps = 0

    def update(self) -> dict[str, float]:
        return {}


def _replace(config: BaselineConfig, **changes) -> BaselineConfig:
    from dataclasses import replace
    return replace(config, **changes)


def run_baseline(algo: str, env: Environment, eval_env: Environment, dataset: Dataset | None,
                 config: BaselineConfig, budget: int, seed: int = 0,
                 settings: RunSettings | None = None, agent: Agent | None = None) -> list[MetricsRecord]:
    """Run a baseline through the same offline-then-online loop as AWAC.

    SACfD variants and SAC from scratch do no offline gradient steps; their
    step-0 evaluation is the initial (or BC-initialized) policy.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    settings = settings or RunSettings()
    if agent is None:
        agent = make_baseline_agent(algo, env, config, seed, dataset)
    offline = config.num_offline_steps
    if algo in ("sac", "sacfd_prior", "sacfd_pretrain", "bc"):
        offline = 0
    loop = LoopConfig(offline, budget, config.trains_per_env_step, settings.eval_every, settings.eval_episodes,
                      settings.offline_eval_every, settings.record_wall_clock)
    return run_loop(agent, env, eval_env, loop, eval_seed=_eval_seed(seed), trackers=settings.trackers,
                    on_record=settings.on_record)
