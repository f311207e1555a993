"""The offline-then-online loop shared by AWAC and every baseline.

An agent owns its networks and replay buffer and exposes ``update()`` (one
gradient iteration) and ``act()``. ``run_loop`` performs the offline phase,
then alternates collecting one trajectory with the stochastic policy and
training one iteration per collected environment step, evaluating the mean
action at a fixed cadence.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, fields
from typing import Callable, Iterable

import numpy as np

from .envs import Environment
from .nn import GaussianPolicy
from .replay import ReplayBuffer, Trajectory, Transition


@dataclass
class MetricsRecord:
    epoch: int
    env_steps: int
    grad_steps: int
    eval_return_mean: float
    eval_return_min: float
    eval_return_max: float
    success_rate: float
    critic_loss: float = math.nan
    actor_loss: float = math.nan
    policy_entropy: float = math.nan
    behavior_loglik: float = math.nan
    behavior_loglik_recent: float = math.nan
    wall_clock: float = 0.0
    status: str = "ok"

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_dict(self) -> dict:
        return asdict(self)


class RunAborted(RuntimeError):
    """Raised when a run fails; ``records`` holds what was emitted before the fault."""

    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


class Agent:
    """Minimal interface the loop relies on."""

    policy: GaussianPolicy
    buffer: ReplayBuffer
    rng: np.random.Generator
    grad_steps: int = 0
    env_steps: int = 0

    def update(self) -> dict[str, float]:
        raise NotImplementedError

    def offline_update(self) -> dict[str, float]:
        return self.update()

    def act(self, obs) -> np.ndarray:
        noise = self.rng.standard_normal(self.policy.act_dim)
        action, _ = self.policy.sample_no_grad(obs, noise)
        return self.policy.inside_box(action)[0]

    def after_trajectory(self, traj: Trajectory) -> None:
        pass

    def entropy_estimate(self, n: int = 256) -> float:
        if len(self.buffer) == 0:
            return math.nan
        batch = self.buffer.sample_batch(n, self.rng)
        noise = self.rng.standard_normal((n, self.policy.act_dim))
        _, logp = self.policy.sample_no_grad(batch.states, noise)
        return float(-np.mean(logp))


def evaluate(policy: GaussianPolicy, env: Environment, episodes: int, seed: int) -> dict[str, float]:
    """Deterministic (mean-action) returns over ``episodes`` seeded episodes."""
    returns, successes = [], []
    for k in range(episodes):
        obs = env.reset(seed=seed + k)
        total, term = 0.0, False
        while True:
            obs, r, term, trunc = env.step(policy.mean_action(obs)[0])
            total += r
            if term or trunc:
                break
        returns.append(total)
        successes.append(float(term))
    return {
        "eval_return_mean": float(np.mean(returns)),
        "eval_return_min": float(np.min(returns)),
        "eval_return_max": float(np.max(returns)),
        "success_rate": float(np.mean(successes)),
    }


def collect_trajectory(agent: Agent, env: Environment, act: Callable | None = None) -> Trajectory:
    act = agent.act if act is None else act
    obs = env.reset()
    steps = []
    while True:
        a = np.asarray(act(obs), dtype=np.float64)
        nxt, r, term, trunc = env.step(a)
        steps.append(Transition(obs, a, r, nxt, term))
        obs = nxt
        if term or trunc:
            return Trajectory.from_transitions(steps, tag="online")


@dataclass
class LoopConfig:
    num_offline_steps: int = 0
    budget: int = 0
    trains_per_env_step: int = 1
    eval_every: int = 1000
    eval_episodes: int = 10
    offline_eval_every: int = 0
    record_wall_clock: bool = False


def run_loop(
    agent: Agent,
    env: Environment,
    eval_env: Environment,
    cfg: LoopConfig,
    eval_seed: int,
    trackers: Iterable = (),
    on_record: Callable[[MetricsRecord], None] | None = None,
) -> list[MetricsRecord]:
    """Offline phase (no interaction) followed by online fine-tuning up to ``cfg.budget`` env steps.

    Records are emitted at every evaluation; the first online-phase record is at
    env step 0, i.e. the purely offline policy. Trackers get ``on_offline(agent,
    step)`` during the offline phase and ``on_eval(agent, record)`` at each
    online evaluation.
    """
    trackers = list(trackers)
    records: list[MetricsRecord] = []
    start = time.perf_counter()
    losses: dict[str, list[float]] = {}
    epoch = 0

    def emit(status="ok"):
        nonlocal epoch
        ev = evaluate(agent.policy, eval_env, cfg.eval_episodes, eval_seed)
        rec = MetricsRecord(
            epoch=epoch, env_steps=agent.env_steps, grad_steps=agent.grad_steps, **ev,
            critic_loss=_mean(losses.get("critic_loss")), actor_loss=_mean(losses.get("actor_loss")),
            policy_entropy=agent.entropy_estimate(),
            wall_clock=(time.perf_counter() - start) if cfg.record_wall_clock else 0.0,
            status=status,
        )
        for tr in trackers:
            tr.on_eval(agent, rec)
        losses.clear()
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        epoch += 1
        return rec

    def train(n):
        for _ in range(n):
            out = agent.update()
            agent.grad_steps += 1
            for k, v in out.items():
                if not np.isfinite(v):
                    raise FloatingPointError(f"non-finite {k} at gradient step {agent.grad_steps}")
                losses.setdefault(k, []).append(v)

    try:
        for step in range(cfg.num_offline_steps):
            out = agent.offline_update()
            agent.grad_steps += 1
            for k, v in out.items():
                if not np.isfinite(v):
                    raise FloatingPointError(f"non-finite {k} at offline step {agent.grad_steps}")
                losses.setdefault(k, []).append(v)
            if cfg.offline_eval_every and (step + 1) % cfg.offline_eval_every == 0:
                for tr in trackers:
                    tr.on_offline(agent, step + 1)
        emit()
        next_eval = cfg.eval_every
        while agent.env_steps < cfg.budget:
            traj = collect_trajectory(agent, env)
            n = min(len(traj), cfg.budget - agent.env_steps)
            if n < len(traj):
                traj = Trajectory(traj.states[:n], traj.actions[:n], traj.rewards[:n],
                                  traj.next_states[:n], traj.terminals[:n], traj.tag)
            agent.buffer.push_trajectory(traj)
            agent.env_steps += n
            agent.after_trajectory(traj)
            train(n * cfg.trains_per_env_step)
            if agent.env_steps >= next_eval or agent.env_steps >= cfg.budget:
                emit()
                while next_eval <= agent.env_steps:
                    next_eval += cfg.eval_every
    except Exception as exc:  # noqa: BLE001 - preserve partial metrics for any fault
        failed = MetricsRecord(epoch=epoch, env_steps=agent.env_steps, grad_steps=agent.grad_steps,
                               eval_return_mean=math.nan, eval_return_min=math.nan, eval_return_max=math.nan,
                               success_rate=math.nan, status="failed")
        records.append(failed)
        if on_record is not None:
            on_record(failed)
        raise RunAborted(f"run aborted: {exc}", records) from exc
    return records


def _mean(xs):
    return float(np.mean(xs)) if xs else math.nan
