"""Transition storage: the ring replay buffer and the on-disk trajectory dataset.

Dataset file layout (all little-endian):

    8 bytes   magic ``AWACDSET``
    uint32    format version
    uint32    header length in bytes
    header    UTF-8 JSON: env name, widths, counts, per-trajectory lengths and tags
    records   one fixed-width float64 record per transition:
              state | action | reward | next_state | terminal(0/1)

The explicit length index in the header delimits trajectories; the terminal
flag may only be set on a trajectory's last record.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

MAGIC = b"AWACDSET"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool

    def __post_init__(self):
        s = np.asarray(self.state, dtype=np.float64).ravel()
        s2 = np.asarray(self.next_state, dtype=np.float64).ravel()
        a = np.asarray(self.action, dtype=np.float64).ravel()
        if s.shape != s2.shape:
            raise ValueError("state and next_state widths differ")
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")
        object.__setattr__(self, "state", s)
        object.__setattr__(self, "next_state", s2)
        object.__setattr__(self, "action", a)
        object.__setattr__(self, "reward", float(self.reward))
        object.__setattr__(self, "terminal", bool(self.terminal))


@dataclass
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    tag: str = ""

    def __len__(self):
        return len(self.rewards)

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition], tag: str = "") -> "Trajectory":
        if not transitions:
            raise ValueError("a trajectory needs at least one transition")
        return cls(
            np.stack([t.state for t in transitions]),
            np.stack([t.action for t in transitions]),
            np.array([t.reward for t in transitions]),
            np.stack([t.next_state for t in transitions]),
            np.array([t.terminal for t in transitions], dtype=bool),
            tag,
        )

    def transitions(self) -> Iterator[Transition]:
        for k in range(len(self)):
            yield Transition(self.states[k], self.actions[k], self.rewards[k], self.next_states[k], self.terminals[k])

    @property
    def succeeded(self) -> bool:
        return bool(self.terminals[-1])


@dataclass
class Dataset:
    env_name: str
    obs_dim: int
    act_dim: int
    trajectories: list[Trajectory] = field(default_factory=list)

    @property
    def n_transitions(self) -> int:
        return sum(len(t) for t in self.trajectories)

    def __len__(self):
        return len(self.trajectories)


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    indices: np.ndarray

    def __len__(self):
        return len(self.rewards)


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling.

    Widths are fixed by the first push. Each slot also records whether it closes
    an episode (terminal or time-limit cut), which trajectory-based estimators use.
    """

    def __init__(self, capacity: int = 1_000_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.size = 0
        self.cursor = 0
        self.total_pushed = 0
        self.obs_dim: int | None = None
        self.act_dim: int | None = None

    def _allocate(self, obs_dim, act_dim):
        self.obs_dim, self.act_dim = obs_dim, act_dim
        n = self.capacity
        self.states = np.zeros((n, obs_dim))
        self.actions = np.zeros((n, act_dim))
        self.rewards = np.zeros(n)
        self.next_states = np.zeros((n, obs_dim))
        self.terminals = np.zeros(n, dtype=bool)
        self.episode_ends = np.zeros(n, dtype=bool)
        self.stamps = np.zeros(n, dtype=np.int64)

    def push(self, transition: Transition, end_of_episode: bool = False) -> None:
        s, a = transition.state, transition.action
        if self.obs_dim is None:
            self._allocate(s.size, a.size)
        elif s.size != self.obs_dim or a.size != self.act_dim:
            raise ValueError(
                f"transition widths ({s.size}, {a.size}) do not match buffer ({self.obs_dim}, {self.act_dim})"
            )
        k = self.cursor
        self.states[k] = s
        self.actions[k] = a
        self.rewards[k] = transition.reward
        self.next_states[k] = transition.next_state
        self.terminals[k] = transition.terminal
        self.episode_ends[k] = end_of_episode or transition.terminal
        self.stamps[k] = self.total_pushed
        self.cursor = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.total_pushed += 1

    def push_trajectory(self, traj: Trajectory) -> None:
        n = len(traj)
        for k, t in enumerate(traj.transitions()):
            self.push(t, end_of_episode=(k == n - 1))

    def extend(self, dataset: Dataset | Iterable[Trajectory]) -> None:
        trajs = dataset.trajectories if isinstance(dataset, Dataset) else dataset
        for traj in trajs:
            self.push_trajectory(traj)

    def __len__(self):
        return self.size

    def _ordered_slots(self) -> np.ndarray:
        """Occupied slot indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.capacity) + self.cursor) % self.capacity

    def _gather(self, idx) -> Batch:
        return Batch(
            self.states[idx], self.actions[idx], self.rewards[idx],
            self.next_states[idx], self.terminals[idx], np.asarray(idx),
        )

    def sample_batch(self, n: int, rng: np.random.Generator) -> Batch:
        if self.size == 0:
            raise IndexError("cannot sample from an empty buffer")
        return self._gather(rng.integers(0, self.size, size=n))

    def all(self) -> Batch:
        return self._gather(self._ordered_slots())

    def recent(self, n: int) -> Batch:
        """The ``n`` most recently pushed transitions, oldest first."""
        slots = self._ordered_slots()
        return self._gather(slots[max(0, len(slots) - n):])

    def transitions(self) -> list[Transition]:
        b = self.all()
        return [Transition(b.states[k], b.actions[k], b.rewards[k], b.next_states[k], b.terminals[k])
                for k in range(len(b))]

    def trajectory_slices(self) -> list[np.ndarray]:
        """Slot index arrays of each complete episode, oldest first.

        The oldest episode may have lost its head to FIFO eviction; that is fine
        for return computation. A trailing run without an episode end is an
        incomplete trajectory and is rejected.
        """
        slots = self._ordered_slots()
        ends = np.flatnonzero(self.episode_ends[slots])
        if len(slots) and (len(ends) == 0 or ends[-1] != len(slots) - 1):
            raise ValueError("buffer ends with an incomplete trajectory (no terminal or episode cut)")
        out, start = [], 0
        for e in ends:
            out.append(slots[start : e + 1])
            start = e + 1
        return out


def _record_width(obs_dim, act_dim):
    return 2 * obs_dim + act_dim + 2


def save_dataset(path: str | Path, dataset: Dataset) -> None:
    header = {
        "env": dataset.env_name,
        "obs_dim": dataset.obs_dim,
        "act_dim": dataset.act_dim,
        "n_trajectories": len(dataset.trajectories),
        "n_transitions": dataset.n_transitions,
        "lengths": [len(t) for t in dataset.trajectories],
        "tags": [t.tag for t in dataset.trajectories],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(blob)), blob]
    for t in dataset.trajectories:
        if t.states.shape[1] != dataset.obs_dim or t.actions.shape[1] != dataset.act_dim:
            raise ValueError("trajectory widths do not match the dataset")
        rec = np.concatenate(
            [t.states, t.actions, t.rewards[:, None], t.next_states, t.terminals[:, None].astype(np.float64)],
            axis=1,
        )
        parts.append(rec.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_dataset(path: str | Path) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a dataset file (bad magic)")
    if len(raw) < 16:
        raise ValueError(f"{path}: truncated header")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    try:
        header = json.loads(raw[16 : 16 + hlen].decode())
        obs_dim, act_dim = int(header["obs_dim"]), int(header["act_dim"])
        lengths = [int(n) for n in header["lengths"]]
        tags = list(header["tags"])
        n_total = int(header["n_transitions"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: malformed header: {exc}") from exc
    if len(tags) != len(lengths) or sum(lengths) != n_total or any(n < 1 for n in lengths):
        raise ValueError(f"{path}: inconsistent trajectory index in header")
    width = _record_width(obs_dim, act_dim)
    rec_bytes = 8 * width
    body = raw[16 + hlen :]
    n_full = len(body) // rec_bytes
    if n_full < n_total:
        raise ValueError(f"{path}: record {n_full} is truncated or missing ({len(body)} body bytes, "
                         f"expected {n_total * rec_bytes})")
    if len(body) > n_total * rec_bytes:
        raise ValueError(f"{path}: trailing data after record {n_total - 1}")
    recs = np.frombuffer(body, dtype="<f8").reshape(n_total, width).astype(np.float64)
    o, a = obs_dim, act_dim
    trajs, start = [], 0
    for k, (n, tag) in enumerate(zip(lengths, tags)):
        r = recs[start : start + n]
        term = r[:, -1]
        if np.any((term != 0.0) & (term != 1.0)):
            idx = start + int(np.flatnonzero((term != 0.0) & (term != 1.0))[0])
            raise ValueError(f"{path}: record {idx} has an invalid terminal flag")
        if np.any(term[:-1] == 1.0):
            idx = start + int(np.flatnonzero(term[:-1] == 1.0)[0])
            raise ValueError(f"{path}: record {idx} is terminal inside trajectory {k}")
        if not np.all(np.isfinite(r)):
            idx = start + int(np.flatnonzero(~np.all(np.isfinite(r), axis=1))[0])
            raise ValueError(f"{path}: record {idx} holds non-finite values")
        trajs.append(Trajectory(
            r[:, :o].copy(), r[:, o : o + a].copy(), r[:, o + a].copy(),
            r[:, o + a + 1 : 2 * o + a + 1].copy(), term.astype(bool), tag,
        ))
        start += n
    return Dataset(str(header["env"]), obs_dim, act_dim, trajs)
