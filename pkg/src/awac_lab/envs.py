"""Desk-scale environments: a sparse-reward chain, a 2-D point-mass pusher, and OU noise.

Environments follow a small gym-like protocol::

    obs = env.reset(seed=None)
    obs, reward, terminal, truncated = env.step(action)

``terminal`` marks absorbing success (no bootstrapping past it); ``truncated``
marks the time limit. An episode is over when either is set, and stepping after
that raises until the next ``reset``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mdp import FiniteMDP, value_iteration

CHAIN_MAX_STEPS = 50
POINTMASS_MAX_STEPS = 100


def chain_mdp(length: int, slip_prob: float = 0.0, gamma: float = 0.99) -> FiniteMDP:
    """Chain 0..length-1 with actions (left, right); the last state is an absorbing goal.

    Every non-goal state pays -1 per step. With probability ``slip_prob`` the
    executed move is the opposite of the chosen one. Left at state 0 stays put.
    """
    if length < 2:
        raise ValueError("chain length must be at least 2")
    if not 0.0 <= slip_prob < 0.5:
        raise ValueError("slip_prob must lie in [0, 0.5)")
    n = length
    goal = n - 1
    p = np.zeros((n, 2, n))
    r = np.full((n, 2), -1.0)
    for s in range(n):
        if s == goal:
            p[s, :, s] = 1.0
            r[s] = 0.0
            continue
        left, right = max(s - 1, 0), s + 1
        p[s, 0, left] += 1.0 - slip_prob
        p[s, 0, right] += slip_prob
        p[s, 1, right] += 1.0 - slip_prob
        p[s, 1, left] += slip_prob
    init = np.zeros(n)
    init[0] = 1.0
    term = np.zeros(n, bool)
    term[goal] = True
    return FiniteMDP(p, r, gamma, init, term)


class Environment:
    name = "env"
    obs_dim: int
    act_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    max_steps: int

    def __init__(self, seed: int | None = None):
        self.rng = np.random.default_rng(seed)
        self._done = True
        self.t = 0

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self._done = False
        self.t = 0
        return self._reset()

    def step(self, action):
        if self._done:
            raise RuntimeError("step called on a finished episode; call reset() first")
        action = np.clip(np.asarray(action, dtype=np.float64).ravel(), self.action_low, self.action_high)
        obs, reward, terminal = self._step(action)
        self.t += 1
        truncated = (not terminal) and self.t >= self.max_steps
        self._done = terminal or truncated
        return obs, reward, terminal, truncated

    def _reset(self):
        raise NotImplementedError

    def _step(self, action):
        raise NotImplementedError


class ChainEnv(Environment):
    """Continuous-action view of ``chain_mdp``: action > 0 means right.

    Observations are one-hot state indicators; the action box is [-1, 1].
    """

    name = "chain"

    def __init__(self, length: int = 10, slip_prob: float = 0.1, gamma: float = 0.99,
                 max_steps: int = CHAIN_MAX_STEPS, seed: int | None = None):
        super().__init__(seed)
        self.mdp = chain_mdp(length, slip_prob, gamma)
        self.length = length
        self.obs_dim, self.act_dim = length, 1
        self.action_low = np.array([-1.0])
        self.action_high = np.array([1.0])
        self.max_steps = max_steps
        self.state = 0

    @staticmethod
    def discretize(action) -> int:
        return int(np.asarray(action).ravel()[0] > 0.0)

    def observe(self, s: int | None = None) -> np.ndarray:
        obs = np.zeros(self.length)
        obs[self.state if s is None else s] = 1.0
        return obs

    def _reset(self):
        self.state = int(self.rng.choice(self.length, p=self.mdp.initial_dist))
        return self.observe()

    def _step(self, action):
        a = self.discretize(action)
        s = self.state
        reward = float(self.mdp.reward[s, a])
        self.state = int(self.rng.choice(self.length, p=self.mdp.transition[s, a]))
        terminal = bool(self.mdp.terminal[self.state])
        return self.observe(), reward, terminal

    @property
    def success(self) -> bool:
        return bool(self.mdp.terminal[self.state])


class ChainExpert:
    """Greedy value-iteration policy mapped to continuous actions of magnitude ``scale``."""

    def __init__(self, env: ChainEnv, scale: float = 0.9, noise: float = 0.05, seed: int | None = None):
        _, greedy = value_iteration(env.mdp)
        self.greedy = np.argmax(greedy.probs, axis=1)
        self.scale, self.noise = scale, noise
        self.rng = np.random.default_rng(seed)

    def __call__(self, obs) -> np.ndarray:
        s = int(np.argmax(obs))
        a = self.scale if self.greedy[s] == 1 else -self.scale
        a += self.noise * self.rng.standard_normal()
        return np.clip(np.array([a]), -0.99, 0.99)


class PointMassPush(Environment):
    """Hand pushes a puck toward a goal inside the unit square.

    State is (hand xy, puck xy, goal xy). The action is a hand velocity in
    [-0.05, 0.05]^2. While the hand is within ``contact_radius`` of the puck and
    moves toward it, the puck is displaced rigidly with the hand.

    With ``relative_obs`` the observation appends (puck - hand, goal - puck),
    which small networks otherwise struggle to synthesize.
    """

    name = "pointmass"
    MAX_SPEED = 0.05

    def __init__(self, reward_mode: str = "sparse", contact_radius: float = 0.06, goal_radius: float = 0.08,
                 max_steps: int = POINTMASS_MAX_STEPS, seed: int | None = None,
                 hand_box=((0.05, 0.3), (0.2, 0.8)), puck_box=((0.35, 0.5), (0.3, 0.7)),
                 goal_box=((0.8, 0.8), (0.5, 0.5)), relative_obs: bool = True):
        super().__init__(seed)
        self.relative_obs = relative_obs
        if reward_mode not in ("sparse", "dense"):
            raise ValueError(f"unknown reward mode {reward_mode!r}")
        self.reward_mode = reward_mode
        self.contact_radius, self.goal_radius = contact_radius, goal_radius
        self.obs_dim, self.act_dim = (10 if relative_obs else 6), 2
        self.action_low = np.full(2, -self.MAX_SPEED)
        self.action_high = np.full(2, self.MAX_SPEED)
        self.max_steps = max_steps
        self.hand_box, self.puck_box, self.goal_box = hand_box, puck_box, goal_box
        self.hand = np.zeros(2)
        self.puck = np.zeros(2)
        self.goal = np.zeros(2)

    def _draw(self, box):
        (x0, x1), (y0, y1) = box
        return np.array([self.rng.uniform(x0, x1), self.rng.uniform(y0, y1)])

    def _reset(self):
        self.hand = self._draw(self.hand_box)
        self.puck = self._draw(self.puck_box)
        self.goal = self._draw(self.goal_box)
        return self.observe()

    def set_state(self, hand, puck, goal) -> np.ndarray:
        """Place the objects directly (scripted tests); starts a fresh episode."""
        self._done, self.t = False, 0
        self.hand, self.puck, self.goal = (np.array(v, dtype=np.float64) for v in (hand, puck, goal))
        return self.observe()

    def observe(self) -> np.ndarray:
        parts = [self.hand, self.puck, self.goal]
        if self.relative_obs:
            parts += [self.puck - self.hand, self.goal - self.puck]
        return np.concatenate(parts)

    @property
    def puck_distance(self) -> float:
        return float(np.linalg.norm(self.puck - self.goal))

    @property
    def success(self) -> bool:
        return self.puck_distance <= self.goal_radius

    def reward(self) -> float:
        if self.reward_mode == "dense":
            return -self.puck_distance
        return 0.0 if self.success else -1.0

    def _step(self, action):
        offset = self.puck - self.hand
        if np.linalg.norm(offset) <= self.contact_radius and float(action @ offset) > 0.0:
            self.puck = np.clip(self.puck + action, 0.0, 1.0)
        self.hand = np.clip(self.hand + action, 0.0, 1.0)
        return self.observe(), self.reward(), self.success


class PushExpert:
    """Scripted pusher: get behind the puck (relative to the goal), then push straight."""

    def __init__(self, env: PointMassPush, speed: float = 0.04, noise: float = 0.004, seed: int | None = None):
        self.env, self.speed, self.noise = env, speed, noise
        self.rng = np.random.default_rng(seed)

    def __call__(self, obs) -> np.ndarray:
        hand, puck, goal = obs[:2], obs[2:4], obs[4:6]
        to_goal = goal - puck
        direction = to_goal / max(np.linalg.norm(to_goal), 1e-9)
        behind = puck - 0.6 * self.env.contact_radius * direction
        offset = puck - hand
        aligned = (np.linalg.norm(offset) <= self.env.contact_radius
                   and float(offset @ direction) >= 0.5 * np.linalg.norm(offset))
        if aligned:
            move = direction
        else:
            gap = behind - hand
            # detour sideways when the straight path to the pre-push point crosses the puck
            if float(offset @ direction) < 0 and np.linalg.norm(offset) < 2.5 * self.env.contact_radius:
                side = np.array([-direction[1], direction[0]])
                gap = gap + side * 2 * self.env.contact_radius * np.sign(float(side @ -offset) or 1.0)
            move = gap / max(np.linalg.norm(gap), 1e-9) * min(1.0, np.linalg.norm(gap) / self.speed)
        a = self.speed * move + self.noise * self.rng.standard_normal(2)
        lim = 0.96 * PointMassPush.MAX_SPEED
        return np.clip(a, -lim, lim)


@dataclass
class OUNoise:
    """Ornstein-Uhlenbeck process x <- x - theta x dt + sigma sqrt(dt) N(0, 1)."""

    dim: int
    theta: float = 0.15
    sigma: float = 0.3
    dt: float = 1.0
    seed: int | None = None
    x0: float = 0.0

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        self.state = np.full(self.dim, float(self.x0))

    def reset(self, x0: float | None = None) -> None:
        self.state = np.full(self.dim, self.x0 if x0 is None else float(x0))

    def sample(self) -> np.ndarray:
        self.state = (self.state - self.theta * self.state * self.dt
                      + self.sigma * math.sqrt(self.dt) * self.rng.standard_normal(self.dim))
        return self.state.copy()

    @property
    def stationary_variance(self) -> float:
        a = 1.0 - self.theta * self.dt
        return self.sigma ** 2 * self.dt / (1.0 - a * a)


def make_env(name: str, seed: int | None = None, **params) -> Environment:
    if name == "chain":
        return ChainEnv(seed=seed, **params)
    if name == "pointmass":
        return PointMassPush(seed=seed, **params)
    raise ValueError(f"unknown environment {name!r}")


def make_expert(env: Environment, seed: int | None = None):
    if isinstance(env, ChainEnv):
        return ChainExpert(env, seed=seed)
    if isinstance(env, PointMassPush):
        return PushExpert(env, seed=seed)
    raise ValueError(f"no scripted expert for {env.name}")


def rollout_policy_fn(env: Environment, act, seed: int | None = None):
    """Run one episode with ``act(obs) -> action``; returns lists plus the success flag."""
    obs = env.reset(seed)
    states, actions, rewards, next_states, terminals = [], [], [], [], []
    while True:
        a = np.asarray(act(obs), dtype=np.float64)
        nxt, r, term, trunc = env.step(a)
        states.append(obs)
        actions.append(a)
        rewards.append(r)
        next_states.append(nxt)
        terminals.append(term)
        obs = nxt
        if term or trunc:
            break
    return states, actions, rewards, next_states, terminals, bool(terminals[-1])


