"""Small numpy neural-network engine with hand-written reverse mode.

Networks are dense ReLU stacks operating on batches (rows are samples). Every
trainable object exposes ``params`` (a list of arrays updated in place) and a
matching list of gradients from its backward pass, which is all the optimizer
needs.
"""

from __future__ import annotations

import copy
import math
from pathlib import Path
from typing import Sequence

import numpy as np

LOG_STD_BOUNDS = (-20.0, 2.0)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG2 = math.log(2.0)


class DenseNet:
    """Affine layers with ReLU between them and an identity output."""

    def __init__(
        self,
        layer_sizes: Sequence[int],
        rng: np.random.Generator | None = None,
        final_scale: float | None = None,
        dtype=np.float64,
    ):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output widths")
        self.layer_sizes = [int(s) for s in layer_sizes]
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(0) if rng is None else rng
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        n_layers = len(self.layer_sizes) - 1
        for k, (n_in, n_out) in enumerate(zip(self.layer_sizes[:-1], self.layer_sizes[1:])):
            bound = 1.0 / math.sqrt(n_in)
            if k == n_layers - 1 and final_scale is not None:
                bound = final_scale
            self.weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)).astype(self.dtype))
            self.biases.append(rng.uniform(-bound, bound, size=n_out).astype(self.dtype))
        self._cache = None

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def param_names(self) -> list[str]:
        names = []
        for k in range(len(self.weights)):
            names += [f"W{k}", f"b{k}"]
        return names

    def _run(self, x):
        x = np.asarray(x, dtype=self.dtype)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None]
        if x.shape[1] != self.layer_sizes[0]:
            raise ValueError(f"input width {x.shape[1]} != {self.layer_sizes[0]}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return acts, squeeze

    def forward(self, x) -> np.ndarray:
        """Forward pass that caches activations for one subsequent ``backward``."""
        acts, squeeze = self._run(x)
        self._cache = (acts, squeeze)
        return acts[-1][0] if squeeze else acts[-1]

    def predict(self, x) -> np.ndarray:
        acts, squeeze = self._run(x)
        return acts[-1][0] if squeeze else acts[-1]

    __call__ = predict

    def backward(self, grad_out) -> tuple[list[np.ndarray], np.ndarray]:
        """Return (parameter gradients in ``params`` order, gradient wrt the input)."""
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        acts, squeeze = self._cache
        g = np.asarray(grad_out, dtype=self.dtype)
        if squeeze:
            g = g[None]
        grads: list[np.ndarray] = []
        for k in range(len(self.weights) - 1, -1, -1):
            if k < len(self.weights) - 1:
                g = g * (acts[k + 1] > 0)
            grads.append(g.sum(axis=0))
            grads.append(acts[k].T @ g)
            g = g @ self.weights[k].T
        grads.reverse()
        return grads, (g[0] if squeeze else g)

    def copy(self) -> "DenseNet":
        return copy.deepcopy(self)

    def load_params(self, params: Sequence[np.ndarray]) -> None:
        for dst, src in zip(self.params, params):
            if dst.shape != src.shape:
                raise ValueError(f"shape mismatch {dst.shape} vs {src.shape}")
            dst[...] = src

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.copy() for n, p in zip(self.param_names, self.params)}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.load_params([state[n] for n in self.param_names])


def _log1m_tanh_sq(u):
    # log(1 - tanh(u)^2) computed without cancellation
    return 2.0 * (_LOG2 - u - np.logaddexp(0.0, -2.0 * u))


class GaussianPolicy:
    """Diagonal Gaussian over a pre-squash variable, tanh-squashed onto the action box."""

    def __init__(
        self,
        obs_dim: int,
        act_dim: int,
        hidden: Sequence[int] = (64, 64),
        rng: np.random.Generator | None = None,
        action_low=-1.0,
        action_high=1.0,
        log_std_bounds=LOG_STD_BOUNDS,
        dtype=np.float64,
    ):
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.trunk = DenseNet([obs_dim, *hidden, 2 * act_dim], rng, dtype=dtype)
        low = np.broadcast_to(np.asarray(action_low, dtype=np.float64), (act_dim,))
        high = np.broadcast_to(np.asarray(action_high, dtype=np.float64), (act_dim,))
        self.center = (high + low) / 2.0
        self.half = (high - low) / 2.0
        self.log_std_bounds = log_std_bounds
        self._cache = None

    @property
    def params(self):
        return self.trunk.params

    @property
    def param_names(self):
        return self.trunk.param_names

    def _heads(self, out):
        mean = out[:, : self.act_dim]
        raw = out[:, self.act_dim :]
        lo, hi = self.log_std_bounds
        log_std = np.clip(raw, lo, hi)
        inside = (raw >= lo) & (raw <= hi)
        return mean, log_std, inside

    def distribution(self, states):
        """(mean, log_std) of the pre-squash Gaussian, without caching."""
        mean, log_std, _ = self._heads(self.trunk.predict(np.atleast_2d(states)))
        return mean, log_std

    def mean_action(self, states) -> np.ndarray:
        mean, _ = self.distribution(states)
        return self.center + self.half * np.tanh(mean)

    def inside_box(self, actions, margin: float = 1e-6) -> np.ndarray:
        """Pull actions strictly inside the box so they keep a finite log-density."""
        y = np.clip((np.atleast_2d(actions) - self.center) / self.half, margin - 1.0, 1.0 - margin)
        return self.center + self.half * y

    def unsquash(self, actions) -> np.ndarray:
        y = (np.atleast_2d(actions) - self.center) / self.half
        if np.any(np.abs(y) >= 1.0):
            raise ValueError("action on or outside the box boundary has no density")
        return np.arctanh(y)

    def _log_prob_u(self, u, mean, log_std):
        z = (u - mean) * np.exp(-log_std)
        per_dim = -0.5 * z * z - log_std - _HALF_LOG_2PI - np.log(self.half) - _log1m_tanh_sq(u)
        return per_dim.sum(axis=1), z

    def log_prob(self, states, actions) -> np.ndarray:
        u = self.unsquash(actions)
        mean, log_std = self.distribution(states)
        return self._log_prob_u(u, mean, log_std)[0]

    def log_prob_grad(self, states, actions, coef) -> tuple[np.ndarray, list[np.ndarray]]:
        """Log-densities at given actions and gradients of ``sum(coef * log_prob)``."""
        u = self.unsquash(actions)
        out = self.trunk.forward(np.atleast_2d(states))
        mean, log_std, inside = self._heads(out)
        logp, z = self._log_prob_u(u, mean, log_std)
        c = np.asarray(coef, dtype=np.float64)[:, None]
        g_mean = c * z * np.exp(-log_std)
        g_log_std = c * (z * z - 1.0) * inside
        grads, _ = self.trunk.backward(np.concatenate([g_mean, g_log_std], axis=1))
        return logp, grads

    def sample(self, states, noise) -> tuple[np.ndarray, np.ndarray]:
        """Reparameterized sample squash(mean + std * noise) and its log-density.

        Caches what ``sample_backward`` needs.
        """
        out = self.trunk.forward(np.atleast_2d(states))
        mean, log_std, inside = self._heads(out)
        std = np.exp(log_std)
        noise = np.asarray(noise, dtype=np.float64).reshape(mean.shape)
        u = mean + std * noise
        t = np.tanh(u)
        actions = self.center + self.half * t
        per_dim = -0.5 * noise * noise - log_std - _HALF_LOG_2PI - np.log(self.half) - _log1m_tanh_sq(u)
        self._cache = (noise, std, t, inside)
        return actions, per_dim.sum(axis=1)

    def sample_backward(self, grad_actions, grad_log_prob) -> list[np.ndarray]:
        """Parameter gradients given dL/d(action) and dL/d(log_prob) for the cached sample."""
        if self._cache is None:
            raise RuntimeError("sample_backward called without a cached sample")
        noise, std, t, inside = self._cache
        g_lp = np.asarray(grad_log_prob, dtype=np.float64)[:, None]
        g_u = np.asarray(grad_actions, dtype=np.float64) * self.half * (1.0 - t * t) + g_lp * 2.0 * t
        g_log_std = (g_u * std * noise - g_lp) * inside
        grads, _ = self.trunk.backward(np.concatenate([g_u, g_log_std], axis=1))
        return grads

    def sample_no_grad(self, states, noise) -> tuple[np.ndarray, np.ndarray]:
        mean, log_std = self.distribution(states)
        noise = np.asarray(noise, dtype=np.float64).reshape(mean.shape)
        u = mean + np.exp(log_std) * noise
        actions = self.center + self.half * np.tanh(u)
        per_dim = -0.5 * noise * noise - log_std - _HALF_LOG_2PI - np.log(self.half) - _log1m_tanh_sq(u)
        return actions, per_dim.sum(axis=1)

    def copy(self) -> "GaussianPolicy":
        return copy.deepcopy(self)

    def state_dict(self):
        return self.trunk.state_dict()

    def load_state_dict(self, state):
        self.trunk.load_state_dict(state)


class TwinCritic:
    """Two Q networks over concat(state, action) with Polyak-averaged target copies."""

    def __init__(self, obs_dim: int, act_dim: int, hidden: Sequence[int] = (64, 64), rng=None,
                 tau: float = 5e-3, dtype=np.float64, action_low=None, action_high=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.obs_dim, self.act_dim = obs_dim, act_dim
        # actions enter the networks rescaled to [-1, 1] so tiny boxes do not drown them out
        low = -np.ones(act_dim) if action_low is None else np.broadcast_to(np.asarray(action_low, float), (act_dim,))
        high = np.ones(act_dim) if action_high is None else np.broadcast_to(np.asarray(action_high, float), (act_dim,))
        self.action_center = (high + low) / 2.0
        self.action_half = (high - low) / 2.0
        self.q1 = DenseNet([obs_dim + act_dim, *hidden, 1], rng, dtype=dtype)
        self.q2 = DenseNet([obs_dim + act_dim, *hidden, 1], rng, dtype=dtype)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.tau = tau

    @property
    def params(self):
        return self.q1.params + self.q2.params

    @property
    def param_names(self):
        return [f"q1.{n}" for n in self.q1.param_names] + [f"q2.{n}" for n in self.q2.param_names]

    def _inputs(self, states, actions):
        scaled = (np.atleast_2d(actions) - self.action_center) / self.action_half
        return np.concatenate([np.atleast_2d(states), scaled], axis=1)

    def q_values(self, states, actions) -> tuple[np.ndarray, np.ndarray]:
        x = self._inputs(states, actions)
        return self.q1.predict(x)[:, 0], self.q2.predict(x)[:, 0]

    def q_min(self, states, actions) -> np.ndarray:
        return np.minimum(*self.q_values(states, actions))

    def target_min(self, states, actions) -> np.ndarray:
        x = self._inputs(states, actions)
        return np.minimum(self.q1_target.predict(x)[:, 0], self.q2_target.predict(x)[:, 0])

    def q_min_action_grad(self, states, actions, coef) -> tuple[np.ndarray, np.ndarray]:
        """Q_min(s, a) and d(sum(coef * Q_min))/da; the critic is treated as fixed."""
        x = self._inputs(states, actions)
        y1 = self.q1.forward(x)[:, 0]
        y2 = self.q2.forward(x)[:, 0]
        pick1 = y1 <= y2
        coef = np.asarray(coef, dtype=np.float64)
        _, gx1 = self.q1.backward((coef * pick1)[:, None])
        _, gx2 = self.q2.backward((coef * ~pick1)[:, None])
        return np.where(pick1, y1, y2), (gx1 + gx2)[:, self.obs_dim :] / self.action_half

    def polyak_update(self, tau: float | None = None) -> None:
        tau = self.tau if tau is None else tau
        if not 0.0 <= tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        for online, target in ((self.q1, self.q1_target), (self.q2, self.q2_target)):
            for p, t in zip(online.params, target.params):
                if tau == 1.0:
                    t[...] = p
                else:
                    t *= 1.0 - tau
                    t += tau * p

    def state_dict(self):
        out = {}
        for tag, net in (("q1", self.q1), ("q2", self.q2), ("q1_target", self.q1_target), ("q2_target", self.q2_target)):
            out.update({f"{tag}.{k}": v for k, v in net.state_dict().items()})
        return out

    def load_state_dict(self, state):
        for tag, net in (("q1", self.q1), ("q2", self.q2), ("q1_target", self.q1_target), ("q2_target", self.q2_target)):
            net.load_state_dict({k[len(tag) + 1 :]: v for k, v in state.items() if k.startswith(tag + ".") and k.count(".") == 1})


class Adam:
    """Bias-corrected adaptive-moment updates with decoupled weight decay."""

    def __init__(self, params, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, names: Sequence[str] | None = None):
        self.params = list(params)
        self.names = list(names) if names is not None else [f"param[{i}]" for i in range(len(self.params))]
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameter list")
        for name, p, g in zip(self.names, self.params, grads):
            if g.shape != p.shape:
                raise ValueError(f"{name}: gradient shape {g.shape} != {p.shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {name}")
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay:
                p -= self.lr * self.weight_decay * p
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self):
        out = {"t": np.array(self.t)}
        for k, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m{k}"] = m.copy()
            out[f"v{k}"] = v.copy()
        return out


def save_checkpoint(path: str | Path, **modules) -> None:
    """Write named modules' parameters to an uncompressed ``.npz`` archive.

    Keys are ``<module>/<param>``; shapes and dtypes are stored by numpy, so the
    round trip is bit-exact. Layer widths are recorded as ``<module>/__sizes__``.
    """
    arrays = {}
    for name, mod in modules.items():
        for k, v in mod.state_dict().items():
            arrays[f"{name}/{k}"] = v
        net = getattr(mod, "trunk", mod)
        if isinstance(net, DenseNet):
            arrays[f"{name}/__sizes__"] = np.array(net.layer_sizes)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> dict[str, dict[str, np.ndarray]]:
    out: dict[str, dict[str, np.ndarray]] = {}
    with np.load(path, allow_pickle=False) as data:
        for key in data.files:
            mod, _, param = key.partition("/")
            out.setdefault(mod, {})[param] = data[key]
    return out
