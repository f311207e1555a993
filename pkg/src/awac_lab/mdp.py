"""Exact tabular MDP machinery.

Everything here is a pure function of immutable numpy tables and serves as the
ground-truth oracle for the learned components: discounted returns, the policy
Bellman operator, exact policy evaluation and value iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

ORACLE_TOL = 1e-10
LOOP_TOL = 1e-6

_TEXT_MAGIC = "# finite-mdp v1"


@dataclass(frozen=True)
class FiniteMDP:
    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S, A)
    gamma: float
    initial_dist: np.ndarray | None = None
    terminal: np.ndarray | None = None
    atol: float = field(default=1e-9, repr=False)

    def __post_init__(self):
        p = np.asarray(self.transition, dtype=np.float64)
        r = np.asarray(self.reward, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {p.shape}")
        n_s, n_a = p.shape[:2]
        if r.shape != (n_s, n_a):
            raise ValueError(f"reward shape {r.shape} does not match ({n_s}, {n_a})")
        if np.any(p < 0) or np.any(np.abs(p.sum(-1) - 1.0) > self.atol):
            raise ValueError("every transition row must be a probability vector")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        mu = np.full(n_s, 1.0 / n_s) if self.initial_dist is None else self.initial_dist
        mu = np.asarray(mu, dtype=np.float64)
        if mu.shape != (n_s,) or np.any(mu < 0) or abs(mu.sum() - 1.0) > self.atol:
            raise ValueError("initial_dist must be a probability vector over states")
        term = np.zeros(n_s, bool) if self.terminal is None else np.asarray(self.terminal, bool)
        if term.shape != (n_s,):
            raise ValueError("terminal must be a boolean vector over states")
        for s in np.flatnonzero(term):
            if np.any(r[s] != 0.0) or np.any(np.abs(p[s, :, s] - 1.0) > self.atol):
                raise ValueError(f"terminal state {s} must self-loop with zero reward")
        for name, val in (("transition", p), ("reward", r), ("initial_dist", mu), ("terminal", term)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def to_text(self) -> str:
        lines = [
            _TEXT_MAGIC,
            f"n_states {self.n_states}",
            f"n_actions {self.n_actions}",
            f"gamma {self.gamma!r}",
            "initial " + " ".join(repr(float(x)) for x in self.initial_dist),
            "terminal " + " ".join(str(int(x)) for x in self.terminal),
        ]
        for s in range(self.n_states):
            for a in range(self.n_actions):
                row = [repr(float(self.reward[s, a]))]
                row += [repr(float(x)) for x in self.transition[s, a]]
                lines.append(f"{s} {a} " + " ".join(row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FiniteMDP":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != _TEXT_MAGIC:
            raise ValueError("missing finite-mdp header")
        header = {}
        for ln in lines[1:6]:
            key, _, rest = ln.partition(" ")
            header[key] = rest.split()
        try:
            n_s = int(header["n_states"][0])
            n_a = int(header["n_actions"][0])
            gamma = float(header["gamma"][0])
            init = np.array([float(x) for x in header["initial"]])
            term = np.array([bool(int(x)) for x in header["terminal"]])
        except (KeyError, IndexError, ValueError) as exc:
            raise ValueError(f"malformed finite-mdp header: {exc}") from exc
        body = lines[6:]
        if len(body) != n_s * n_a:
            raise ValueError(f"expected {n_s * n_a} (s, a) rows, found {len(body)}")
        p = np.zeros((n_s, n_a, n_s))
        r = np.zeros((n_s, n_a))
        for ln in body:
            tok = ln.split()
            if len(tok) != 3 + n_s:
                raise ValueError(f"malformed row: {ln!r}")
            s, a = int(tok[0]), int(tok[1])
            r[s, a] = float(tok[2])
            p[s, a] = [float(x) for x in tok[3:]]
        return cls(p, r, gamma, init, term)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "FiniteMDP":
        return cls.from_text(Path(path).read_text())


@dataclass(frozen=True)
class TabularPolicy:
    probs: np.ndarray  # (S, A)

    def __post_init__(self):
        pi = np.asarray(self.probs, dtype=np.float64)
        if pi.ndim != 2 or np.any(pi < 0) or np.any(np.abs(pi.sum(1) - 1.0) > 1e-9):
            raise ValueError("policy rows must be probability vectors")
        pi.setflags(write=False)
        object.__setattr__(self, "probs", pi)

    @classmethod
    def deterministic(cls, actions: Sequence[int], n_actions: int) -> "TabularPolicy":
        actions = np.asarray(actions, dtype=int)
        return cls(np.eye(n_actions)[actions])

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "TabularPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))


@dataclass(frozen=True)
class ValueTables:
    v: np.ndarray
    q: np.ndarray

    @property
    def advantage(self) -> np.ndarray:
        return self.q - self.v[:, None]


def discounted_return(rewards: Sequence[float], gamma: float) -> float:
    """Sum of ``gamma**t * rewards[t]``, discounting from the first element."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.size == 0:
        return 0.0
    # Horner form keeps long sequences exact to rounding.
    total = 0.0
    for r in rewards[::-1]:
        total = r + gamma * total
    return float(total)


def _next_value(mdp: FiniteMDP, policy: TabularPolicy, q: np.ndarray) -> np.ndarray:
    v = np.sum(policy.probs * q, axis=1)
    v = np.where(mdp.terminal, 0.0, v)
    return v


def bellman_backup(mdp: FiniteMDP, policy: TabularPolicy, q: np.ndarray) -> np.ndarray:
    """Apply the policy Bellman operator once to ``q``."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != mdp.reward.shape or policy.probs.shape != mdp.reward.shape:
        raise ValueError("table shapes do not match the MDP")
    return mdp.reward + mdp.gamma * mdp.transition @ _next_value(mdp, policy, q)


def optimal_backup(mdp: FiniteMDP, q: np.ndarray) -> np.ndarray:
    v = np.where(mdp.terminal, 0.0, np.max(q, axis=1))
    return mdp.reward + mdp.gamma * mdp.transition @ v


def _check_gamma(mdp: FiniteMDP) -> None:
    if mdp.gamma >= 1.0:
        raise ValueError("iterative evaluation requires gamma < 1")


def exact_policy_evaluation(
    mdp: FiniteMDP, policy: TabularPolicy, tol: float = ORACLE_TOL, max_iter: int = 1_000_000
) -> ValueTables:
    """Iterate the policy backup from zero until the sup-norm error bound is below ``tol``.

    The stopping rule uses the contraction bound ``gamma / (1 - gamma) * delta``
    rather than the raw step ``delta``, so the returned table is within ``tol`` of
    the true fixed point.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    _check_gamma(mdp)
    g = mdp.gamma
    q = np.zeros_like(mdp.reward)
    for _ in range(max_iter):
        q_new = bellman_backup(mdp, policy, q)
        delta = np.max(np.abs(q_new - q))
        q = q_new
        if g == 0.0 or g * delta / (1.0 - g) < tol:
            break
    v = np.sum(policy.probs * q, axis=1)
    return ValueTables(v=v, q=q)


def solve_policy_linear(mdp: FiniteMDP, policy: TabularPolicy) -> ValueTables:
    """Direct solution of ``(I - gamma P_pi) q = r`` over state-action pairs."""
    n_s, n_a = mdp.reward.shape
    # P_pi[(s,a), (s',a')] = p(s'|s,a) pi(a'|s') with terminal continuation removed
    pi_next = np.where(mdp.terminal[:, None], 0.0, policy.probs)
    big = (mdp.transition[:, :, :, None] * pi_next[None, None]).reshape(n_s * n_a, n_s * n_a)
    q = np.linalg.solve(np.eye(n_s * n_a) - mdp.gamma * big, mdp.reward.reshape(-1))
    q = q.reshape(n_s, n_a)
    return ValueTables(v=np.sum(policy.probs * q, axis=1), q=q)


def value_iteration(
    mdp: FiniteMDP, tol: float = ORACLE_TOL, max_iter: int = 1_000_000
) -> tuple[ValueTables, TabularPolicy]:
    """Optimal Q within ``tol`` and its greedy policy (ties go to the lowest action index)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    _check_gamma(mdp)
    g = mdp.gamma
    q = np.zeros_like(mdp.reward)
    for _ in range(max_iter):
        q_new = optimal_backup(mdp, q)
        delta = np.max(np.abs(q_new - q))
        q = q_new
        if g == 0.0 or g * delta / (1.0 - g) < tol:
            break
    greedy = np.argmax(q, axis=1)
    policy = TabularPolicy.deterministic(greedy, mdp.n_actions)
    return ValueTables(v=np.max(q, axis=1), q=q), policy


def random_mdp(
    rng: np.random.Generator, n_states: int, n_actions: int, gamma: float, sparsity: float = 0.0
) -> FiniteMDP:
    """Random dense (or partially sparse) MDP used by property tests and fixtures."""
    p = rng.random((n_states, n_actions, n_states))
    if sparsity > 0:
        p *= rng.random(p.shape) >= sparsity
        p[..., 0] += 1e-3
    p /= p.sum(-1, keepdims=True)
    r = rng.normal(size=(n_states, n_actions))
    mu = rng.dirichlet(np.ones(n_states))
    return FiniteMDP(p, r, gamma, mu)
