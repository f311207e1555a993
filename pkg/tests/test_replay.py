import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from awac_lab.replay import Dataset, ReplayBuffer, Trajectory, Transition, load_dataset, save_dataset


def tr(k, obs_dim=2, act_dim=1, terminal=False):
    return Transition(np.full(obs_dim, k, float), np.full(act_dim, -k, float), float(k), np.full(obs_dim, k + 0.5),
                      terminal)


def contents(buf):
    return buf.all().rewards.tolist()


def random_dataset(rng, n_traj=4, obs_dim=3, act_dim=2):
    trajs = []
    for k in range(n_traj):
        n = int(rng.integers(1, 8))
        term = np.zeros(n, dtype=bool)
        term[-1] = bool(rng.integers(2))
        trajs.append(Trajectory(rng.normal(size=(n, obs_dim)), rng.normal(size=(n, act_dim)), rng.normal(size=n),
                                rng.normal(size=(n, obs_dim)), term, tag=f"t{k}"))
    return Dataset("pointmass", obs_dim, act_dim, trajs)


def assert_same_dataset(a, b):
    assert (a.env_name, a.obs_dim, a.act_dim, len(a)) == (b.env_name, b.obs_dim, b.act_dim, len(b))
    for x, y in zip(a.trajectories, b.trajectories):
        assert x.tag == y.tag
        for name in ("states", "actions", "rewards", "next_states", "terminals"):
            assert np.array_equal(getattr(x, name), getattr(y, name))


def test_transition_validation():
    with pytest.raises(ValueError):
        Transition(np.zeros(2), np.zeros(1), 0.0, np.zeros(3), False)
    with pytest.raises(ValueError):
        Transition(np.zeros(2), np.zeros(1), float("inf"), np.zeros(2), False)


def test_fifo_examples():
    buf = ReplayBuffer(2)
    buf.push(tr(1))
    assert len(buf) == 1
    buf.push(tr(2))
    buf.push(tr(3))
    assert contents(buf) == [2.0, 3.0]
    big = ReplayBuffer(10)
    for k in range(7):
        big.push(tr(k))
    assert contents(big) == list(map(float, range(7)))


def test_width_mismatch_is_rejected():
    buf = ReplayBuffer(4)
    buf.push(tr(0))
    with pytest.raises(ValueError):
        buf.push(tr(1, obs_dim=3))
    with pytest.raises(ValueError):
        buf.push(tr(1, act_dim=2))
    with pytest.raises(ValueError):
        ReplayBuffer(0)


def test_sampling_examples():
    buf = ReplayBuffer(5)
    with pytest.raises(IndexError):
        buf.sample_batch(3, np.random.default_rng(0))
    buf.push(tr(7))
    batch = buf.sample_batch(4, np.random.default_rng(0))
    assert batch.rewards.tolist() == [7.0] * 4
    assert np.array_equal(batch.states, np.full((4, 2), 7.0))


def test_sampling_is_uniform():
    buf = ReplayBuffer(20)
    for k in range(10):
        buf.push(tr(k))
    draws = buf.sample_batch(100_000, np.random.default_rng(1)).rewards.astype(int)
    counts = np.bincount(draws, minlength=10)
    sigma = np.sqrt(100_000 * 0.1 * 0.9)
    assert np.all(np.abs(counts - 10_000) <= 5 * sigma)


def test_sampling_is_seed_deterministic():
    buf = ReplayBuffer(50)
    for k in range(30):
        buf.push(tr(k))
    a = [buf.sample_batch(8, r).rewards for r in [np.random.default_rng(3)] * 3]
    rng = np.random.default_rng(3)
    b = [buf.sample_batch(8, rng).rewards for _ in range(3)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_sampling_never_touches_empty_slots():
    buf = ReplayBuffer(1000)
    for k in range(3):
        buf.push(tr(k + 1))
    assert set(buf.sample_batch(5000, np.random.default_rng(2)).rewards.tolist()) <= {1.0, 2.0, 3.0}


def test_dataset_then_online_is_the_union():
    rng = np.random.default_rng(4)
    ds = random_dataset(rng)
    buf = ReplayBuffer(1000)
    buf.extend(ds)
    online = [tr(100 + k, obs_dim=3, act_dim=2) for k in range(5)]
    for t in online:
        buf.push(t)
    expected = np.concatenate([t.rewards for t in ds.trajectories] + [[t.reward for t in online]])
    assert np.array_equal(buf.all().rewards, expected)


def test_recent_and_trajectory_slices():
    buf = ReplayBuffer(6)
    for n in (3, 2, 4):
        traj = Trajectory.from_transitions([tr(k) for k in range(n)])
        buf.push_trajectory(traj)
    assert buf.recent(2).rewards.tolist() == [2.0, 3.0]
    slices = buf.trajectory_slices()
    # capacity 6 keeps the last 6 pushes: tail of the 2-step episode plus the 4-step one
    assert [len(s) for s in slices] == [2, 4]
    buf.push(tr(9))
    with pytest.raises(ValueError):
        buf.trajectory_slices()


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.lists(st.integers(0, 1000), max_size=40))
def test_fifo_matches_reference_list(capacity, values):
    buf = ReplayBuffer(capacity)
    ref = []
    for v in values:
        buf.push(tr(v))
        ref.append(float(v))
        ref = ref[-capacity:]
        assert contents(buf) == ref
        assert len(buf) == len(ref) <= capacity


def test_dataset_round_trip(tmp_path):
    ds = random_dataset(np.random.default_rng(5))
    save_dataset(tmp_path / "d.dset", ds)
    assert_same_dataset(ds, load_dataset(tmp_path / "d.dset"))
    empty = Dataset("chain", 4, 1, [])
    save_dataset(tmp_path / "e.dset", empty)
    back = load_dataset(tmp_path / "e.dset")
    assert len(back) == 0 and back.obs_dim == 4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_dataset_round_trip_property(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, n_traj=int(rng.integers(0, 6)), obs_dim=int(rng.integers(1, 5)),
                        act_dim=int(rng.integers(1, 3)))
    path = tmp_path_factory.mktemp("rt") / "d.dset"
    save_dataset(path, ds)
    assert_same_dataset(ds, load_dataset(path))
    save_dataset(path.with_suffix(".b"), load_dataset(path))
    assert path.read_bytes() == path.with_suffix(".b").read_bytes()


def test_truncated_file_names_the_record(tmp_path):
    ds = random_dataset(np.random.default_rng(6))
    path = tmp_path / "d.dset"
    save_dataset(path, ds)
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    last = ds.n_transitions - 1
    with pytest.raises(ValueError, match=f"record {last}"):
        load_dataset(path)
    path.write_bytes(raw + b"\x00" * 8)
    with pytest.raises(ValueError, match="trailing"):
        load_dataset(path)
    path.write_bytes(b"NOTADSET" + raw[8:])
    with pytest.raises(ValueError, match="magic"):
        load_dataset(path)


def test_terminal_flag_inside_trajectory_is_rejected(tmp_path):
    traj = Trajectory(np.zeros((3, 1)), np.zeros((3, 1)), np.zeros(3), np.zeros((3, 1)),
                      np.array([False, True, False]))
    path = tmp_path / "bad.dset"
    save_dataset(path, Dataset("chain", 1, 1, [traj]))
    with pytest.raises(ValueError, match="record 1"):
        load_dataset(path)
