"""Experiment pipeline: dataset generation, configured runs, metrics CSVs and comparison reports."""

from __future__ import annotations

import ast
import csv
import inspect
import io
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .awac import AwacConfig, RunSettings, TrainState
from .awac import run as run_awac
from .baselines import BASELINE_ALGOS, BaselineConfig, BehaviorTracker, bc_train, make_baseline_agent, run_baseline
from .envs import ChainEnv, Environment, OUNoise, PointMassPush, make_env, make_expert
from .nn import GaussianPolicy, load_checkpoint, save_checkpoint
from .replay import Dataset, Trajectory, Transition, load_dataset, save_dataset
from .training import MetricsRecord, RunAborted, evaluate

OUTPUT_ROOT_ENV = "AWAC_LAB_OUT"
ALGOS = ("awac",) + BASELINE_ALGOS


# ---------------------------------------------------------------- dataset generation

class ExpertFailure(RuntimeError):
    pass


def _rollout(env: Environment, act, seed: int, tag: str) -> Trajectory:
    obs = env.reset(seed=seed)
    steps = []
    while True:
        a = np.asarray(act(obs), dtype=np.float64)
        nxt, r, term, trunc = env.step(a)
        steps.append(Transition(obs, np.clip(a, env.action_low, env.action_high), r, nxt, term))
        obs = nxt
        if term or trunc:
            return Trajectory.from_transitions(steps, tag)


def generate_dataset(env: Environment, protocol: str = "expert_bc", counts: Sequence[int] = (15, 100),
                     seed: int = 0, bc_steps: int = 2000, bc_hidden=(64, 64), ou_sigma: float = 0.3,
                     ou_theta: float = 0.15) -> Dataset:
    """Build an offline dataset.

    ``expert_bc``: ``counts = (n_demo, n_bc)`` expert rollouts, then rollouts of
    a stochastic behavior clone fitted on them. ``random_ou``: ``counts = (n,)``
    rollouts driven by Ornstein-Uhlenbeck noise scaled to the action box.
    Trajectories carry tags "expert", "bc" or "random".
    """
    ss = np.random.SeedSequence(seed)
    env_ss, act_ss, bc_ss = ss.spawn(3)
    episode_seeds = env_ss.generate_state(sum(counts) + 1)
    ds = Dataset(env.name, env.obs_dim, env.act_dim, [])
    if protocol == "expert_bc":
        n_demo, n_bc = counts
        expert = make_expert(env, seed=int(act_ss.generate_state(1)[0]))
        demos = [_rollout(env, expert, int(episode_seeds[k]), "expert") for k in range(n_demo)]
        if n_demo and sum(t.succeeded for t in demos) * 2 < n_demo:
            raise ExpertFailure(f"expert succeeded in only {sum(t.succeeded for t in demos)}/{n_demo} attempts")
        ds.trajectories += demos
        if n_bc:
            if not demos:
                raise ValueError("cannot clone without expert demonstrations")
            rng = np.random.default_rng(bc_ss)
            clone = GaussianPolicy(env.obs_dim, env.act_dim, bc_hidden, rng, env.action_low, env.action_high)
            bc_train(Dataset(env.name, env.obs_dim, env.act_dim, demos), clone, bc_steps, rng=rng)

            def act(obs):
                a, _ = clone.sample_no_grad(obs, rng.standard_normal(env.act_dim))
                return clone.inside_box(a)[0]

            ds.trajectories += [_rollout(env, act, int(episode_seeds[n_demo + k]), "bc") for k in range(n_bc)]
    elif protocol == "random_ou":
        (n,) = counts
        noise = OUNoise(env.act_dim, theta=ou_theta, sigma=ou_sigma, seed=int(act_ss.generate_state(1)[0]))
        center = (env.action_high + env.action_low) / 2
        half = (env.action_high - env.action_low) / 2

        def act(obs):
            return center + half * np.clip(noise.sample(), -0.99, 0.99)

        for k in range(n):
            noise.reset()
            ds.trajectories.append(_rollout(env, act, int(episode_seeds[k]), "random"))
    else:
        raise ValueError(f"unknown dataset protocol {protocol!r}")
    return ds


def dataset_summary(ds: Dataset) -> dict[str, int]:
    tags: dict[str, int] = {}
    for t in ds.trajectories:
        tags[t.tag] = tags.get(t.tag, 0) + 1
    return {"trajectories": len(ds), "transitions": ds.n_transitions,
            "successful": sum(t.succeeded for t in ds.trajectories), **{f"tag:{k}": v for k, v in tags.items()}}


# ---------------------------------------------------------------- configuration

# Small networks, float32 and a sparse-reward Q clamp keep a run within a couple
# of CPU-minutes; see README for how these differ from the algorithm defaults.
DESK_ALGO_DEFAULTS = {
    "batch_size": 256,
    "policy_hidden": (64, 64),
    "critic_hidden": (64, 64),
    "dtype": "float32",
    "clamp_q_max": 0.0,
    "critic_lr": 1e-3,
    "tau": 0.01,
}
DESK_AWAC_DEFAULTS = {"lam": 0.1}
DESK_BASELINE_DEFAULTS = {"value_hidden": (64, 64)}
DESK_RUN_DEFAULTS = {
    "chain": {"num_offline_steps": 5000, "budget": 20000},
    "pointmass": {"num_offline_steps": 5000, "budget": 20000},
}
DESK_ENV_DEFAULTS = {
    "chain": {},
    "pointmass": {"hand_box": ((0.1, 0.3), (0.3, 0.7)), "puck_box": ((0.4, 0.55), (0.35, 0.65))},
}
DATA_DEFAULTS = {"protocol": "expert_bc", "counts": (15, 100), "seed": 0, "bc_steps": 500}


@dataclass
class ExperimentConfig:
    """Everything a run needs; built from flat ``section.key = value`` text.

    Sections: ``env`` (``env.name`` plus constructor keywords), ``algo``
    (``algo.name`` plus hyperparameters), ``data`` (dataset generation) and
    ``run`` (seeds, budget, cadence, paths).
    """

    env: str = "pointmass"
    env_params: dict = field(default_factory=dict)
    algo: str = "awac"
    algo_params: dict = field(default_factory=dict)
    data_params: dict = field(default_factory=dict)
    dataset: str = ""
    seeds: tuple[int, ...] = (0,)
    budget: int | None = None
    eval_every: int = 1000
    eval_episodes: int = 10
    out: str = "runs"
    track_behavior: bool = False
    behavior_every: int = 1000
    save_checkpoints: bool = True

    RUN_KEYS = ("dataset", "seeds", "budget", "eval_every", "eval_episodes", "out", "track_behavior",
                "behavior_every", "save_checkpoints")

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError(f"seeds must be distinct, got {self.seeds}")
        if self.algo not in ALGOS:
            raise ValueError(f"unknown algorithm {self.algo!r}; expected one of {ALGOS}")
        if self.env not in DESK_RUN_DEFAULTS:
            raise ValueError(f"unknown environment {self.env!r}")
        if self.budget is not None and self.budget < 0:
            raise ValueError("budget must be >= 0")
        if self.eval_every <= 0 or self.eval_episodes <= 0:
            raise ValueError("eval_every and eval_episodes must be positive")
        _check_env_params(self.env, self.env_params)
        self.algo_config()  # rejects unknown hyperparameters early
        unknown = set(self.data_params) - set(DATA_DEFAULTS)
        if unknown:
            raise ValueError(f"unknown data keys: {sorted(unknown)}")

    @property
    def run_budget(self) -> int:
        return DESK_RUN_DEFAULTS[self.env]["budget"] if self.budget is None else self.budget

    def algo_config(self) -> AwacConfig | BaselineConfig:
        base = dict(DESK_ALGO_DEFAULTS, num_offline_steps=DESK_RUN_DEFAULTS[self.env]["num_offline_steps"])
        if self.algo == "awac":
            cls, base = AwacConfig, {**base, **DESK_AWAC_DEFAULTS}
        else:
            cls, base = BaselineConfig, {**base, **DESK_BASELINE_DEFAULTS}
        names = {f.name for f in fields(cls)}
        unknown = set(self.algo_params) - names
        if unknown:
            raise ValueError(f"unknown {self.algo} hyperparameters: {sorted(unknown)}")
        kwargs = {k: v for k, v in base.items() if k in names}
        kwargs.update(self.algo_params)
        for k, v in kwargs.items():
            if isinstance(v, list):
                kwargs[k] = tuple(v)
        return cls(**kwargs)

    def env_kwargs(self) -> dict:
        return {**DESK_ENV_DEFAULTS[self.env], **self.env_params}

    def data_kwargs(self) -> dict:
        return {**DATA_DEFAULTS, **self.data_params}

    @classmethod
    def from_text(cls, text: str, **overrides) -> "ExperimentConfig":
        kw: dict = {"env_params": {}, "algo_params": {}, "data_params": {}}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'section.key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            section, _, name = key.partition(".")
            val = _parse_value(value)
            if section == "env" and name == "name":
                kw["env"] = val
            elif section == "algo" and name == "name":
                kw["algo"] = val
            elif section in ("env", "algo", "data") and name:
                kw[f"{section}_params"][name] = val
            elif section == "run" and name in cls.RUN_KEYS:
                kw[name] = tuple(val) if name == "seeds" and isinstance(val, (list, tuple)) else val
                if name == "seeds" and isinstance(val, int):
                    kw[name] = (val,)
            else:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text(), **overrides)

    def to_text(self) -> str:
        lines = [f"env.name = {self.env}"]
        lines += [f"env.{k} = {v!r}" for k, v in sorted(self.env_params.items())]
        lines += [f"algo.name = {self.algo}"]
        lines += [f"algo.{k} = {v!r}" for k, v in sorted(self.algo_params.items())]
        lines += [f"data.{k} = {v!r}" for k, v in sorted(self.data_params.items())]
        for k in self.RUN_KEYS:
            lines.append(f"run.{k} = {getattr(self, k)!r}")
        return "\n".join(lines) + "\n"


def _parse_value(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        low = text.lower()
        if low in ("true", "false"):
            return low == "true"
        if low in ("none", "null"):
            return None
        return text


def _check_env_params(env: str, params: dict) -> None:
    cls = {"chain": ChainEnv, "pointmass": PointMassPush}[env]
    allowed = set(inspect.signature(cls).parameters) - {"seed"}
    unknown = set(params) - allowed
    if unknown:
        raise ValueError(f"unknown {env} parameters: {sorted(unknown)}")


def output_root(out: str | Path | None = None) -> Path:
    """``$AWAC_LAB_OUT`` wins over the configured directory."""
    env = os.environ.get(OUTPUT_ROOT_ENV)
    return Path(env) if env else Path(out if out is not None else "runs")


def make_dataset(config: ExperimentConfig) -> Dataset:
    kw = config.data_kwargs()
    env = make_env(config.env, seed=int(kw["seed"]), **config.env_kwargs())
    return generate_dataset(env, kw["protocol"], tuple(kw["counts"]), seed=int(kw["seed"]),
                            bc_steps=int(kw["bc_steps"]))


# ---------------------------------------------------------------- metrics CSV

CSV_COLUMNS = ["env", "algo", "seed"] + MetricsRecord.columns()
_INT_FIELDS = {f.name for f in fields(MetricsRecord) if f.type in ("int", int)}
_STR_FIELDS = {"status"}


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def record_row(env: str, algo: str, seed: int, rec: MetricsRecord) -> list[str]:
    return [env, algo, str(seed)] + [_fmt(v) for v in rec.as_dict().values()]


def emit_metrics(env: str, algo: str, seed: int, records: Sequence[MetricsRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in records:
        w.writerow(record_row(env, algo, seed, rec))
    return buf.getvalue()


@dataclass
class MetricsSeries:
    env: str
    algo: str
    seed: int
    records: list[MetricsRecord]

    def values(self, metric: str) -> np.ndarray:
        return np.array([getattr(r, metric) for r in self.records], dtype=float)

    @property
    def steps(self) -> np.ndarray:
        return np.array([r.env_steps for r in self.records], dtype=float)

    @property
    def failed(self) -> bool:
        return any(r.status != "ok" for r in self.records)


def parse_metrics(text: str) -> MetricsSeries:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != CSV_COLUMNS:
        raise ValueError("not a metrics CSV (header mismatch)")
    env = algo = None
    seed = 0
    records = []
    for row in rows[1:]:
        if len(row) != len(CSV_COLUMNS):
            raise ValueError(f"malformed metrics row: {row}")
        env, algo, seed = row[0], row[1], int(row[2])
        kw = {}
        for name, cell in zip(CSV_COLUMNS[3:], row[3:]):
            kw[name] = cell if name in _STR_FIELDS else int(cell) if name in _INT_FIELDS else float(cell)
        records.append(MetricsRecord(**kw))
    if env is None:
        raise ValueError("metrics CSV has no records")
    return MetricsSeries(env, algo, seed, records)


def load_metrics(path: str | Path) -> MetricsSeries:
    return parse_metrics(Path(path).read_text())


# ---------------------------------------------------------------- running

@dataclass
class SeedResult:
    seed: int
    metrics_path: Path
    records: list[MetricsRecord]
    checkpoint_path: Path | None = None
    tracker: BehaviorTracker | None = None
    error: str | None = None


def _seed_streams(seed: int) -> tuple[int, int]:
    env_seed, eval_seed = np.random.SeedSequence([seed, 1]).generate_state(2)
    return int(env_seed), int(eval_seed)


def run_single(config: ExperimentConfig, seed: int, dataset: Dataset | None, out_dir: Path) -> SeedResult:
    """One seed of one algorithm; the metrics CSV is written row by row as evaluations happen."""
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / f"{config.algo}_{config.env}_seed{seed}.csv"
    env_seed, eval_seed = _seed_streams(seed)
    env = make_env(config.env, seed=env_seed, **config.env_kwargs())
    eval_env = make_env(config.env, seed=eval_seed, **config.env_kwargs())
    algo_cfg = config.algo_config()
    tracker = None
    if config.track_behavior:
        tracker = BehaviorTracker(env.obs_dim, env.act_dim, seed=int(np.random.SeedSequence([seed, 2]).generate_state(1)[0]))
    result = SeedResult(seed, metrics_path, [], tracker=tracker)
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        fh.flush()

        def on_record(rec):
            writer.writerow(record_row(config.env, config.algo, seed, rec))
            fh.flush()

        settings = RunSettings(eval_every=config.eval_every, eval_episodes=config.eval_episodes,
                               offline_eval_every=config.behavior_every if tracker else 0,
                               trackers=[tracker] if tracker else [], on_record=on_record)
        if config.algo == "awac":
            agent = TrainState(env.obs_dim, env.act_dim, env.action_low, env.action_high, algo_cfg, seed, dataset)
        else:
            agent = make_baseline_agent(config.algo, env, algo_cfg, seed, dataset)
        try:
            if config.algo == "awac":
                result.records = run_awac(env, eval_env, dataset, algo_cfg, config.run_budget, seed, settings, agent)
            else:
                result.records = run_baseline(config.algo, env, eval_env, dataset, algo_cfg, config.run_budget,
                                              seed, settings, agent)
        except RunAborted as exc:
            result.records, result.error = exc.records, str(exc)
    if config.save_checkpoints and result.error is None:
        result.checkpoint_path = out_dir / f"{config.algo}_{config.env}_seed{seed}.npz"
        modules = {"policy": agent.policy}
        if getattr(agent, "critic", None) is not None:
            modules["critic"] = agent.critic
        save_checkpoint(result.checkpoint_path, **modules)
    return result


def run_experiment(config: ExperimentConfig, dataset: Dataset | None = None,
                   out_dir: str | Path | None = None) -> list[SeedResult]:
    """Run every configured seed; a failed seed keeps its partial CSV and does not stop the others.

    With no dataset given or configured, one is generated from the ``data.*`` settings.
    Outputs go to ``out_dir`` if given, else ``$AWAC_LAB_OUT``, else ``config.out``.
    """
    if dataset is None and config.dataset:
        path = Path(config.dataset)
        if not path.exists():
            raise FileNotFoundError(f"dataset {path} does not exist")
        dataset = load_dataset(path)
    if dataset is None and config.algo != "sac":
        dataset = make_dataset(config)
    if dataset is not None and dataset.env_name != config.env:
        raise ValueError(f"dataset was generated on {dataset.env_name!r}, config runs {config.env!r}")
    out_dir = Path(out_dir) if out_dir is not None else output_root(config.out)
    return [run_single(config, seed, dataset, out_dir) for seed in config.seeds]


def load_policy(path: str | Path, env: Environment) -> GaussianPolicy:
    """Rebuild the policy stored in a run checkpoint; widths and dtype come from the file."""
    data = load_checkpoint(path)["policy"]
    sizes = [int(n) for n in data["__sizes__"]]
    if sizes[0] != env.obs_dim or sizes[-1] != 2 * env.act_dim:
        raise ValueError(f"checkpoint layer widths {sizes} do not fit environment {env.name}")
    dtype = next(v.dtype for k, v in data.items() if k != "__sizes__")
    policy = GaussianPolicy(env.obs_dim, env.act_dim, tuple(sizes[1:-1]), np.random.default_rng(0),
                            env.action_low, env.action_high, dtype=dtype)
    policy.load_state_dict(data)
    return policy


# ---------------------------------------------------------------- comparison

@dataclass
class AlgoSummary:
    algo: str
    seeds: list[int]
    curve: list[dict]
    steps_to_threshold: list[float]
    step0: list[float]
    dip_depth: list[float]

    @property
    def median_steps_to_threshold(self) -> float:
        return float(np.median(self.steps_to_threshold))

    @property
    def median_step0(self) -> float:
        return float(np.median(self.step0))

    @property
    def median_dip_depth(self) -> float:
        return float(np.median(self.dip_depth))


@dataclass
class ComparisonReport:
    env: str
    metric: str
    threshold: float
    summaries: dict[str, AlgoSummary]

    def to_text(self) -> str:
        head = f"env={self.env} metric={self.metric} threshold={self.threshold!r}"
        cols = ["algo", "seeds", "step0_median", "steps_to_threshold_median", "dip_depth_median", "final_median"]
        rows = [cols]
        for s in self.summaries.values():
            rows.append([s.algo, str(len(s.seeds)), f"{s.median_step0:.4g}", f"{s.median_steps_to_threshold:.6g}",
                         f"{s.median_dip_depth:.4g}", f"{s.curve[-1]['median']:.4g}" if s.curve else "nan"])
        widths = [max(len(r[i]) for r in rows) for i in range(len(cols))]
        body = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        return "\n".join([head] + body) + "\n"

    def curve_csv(self, algo: str) -> str:
        s = self.summaries[algo]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "env_steps", "median", "q25", "q75"] + [f"seed{k}" for k in s.seeds])
        for row in s.curve:
            w.writerow([row["epoch"], _fmt(row["env_steps"]), _fmt(row["median"]), _fmt(row["q25"]),
                        _fmt(row["q75"])] + [_fmt(v) for v in row["per_seed"]])
        return buf.getvalue()

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.txt"]
        paths[0].write_text(self.to_text())
        for algo in self.summaries:
            p = out / f"curve_{algo}.csv"
            p.write_text(self.curve_csv(algo))
            paths.append(p)
        return paths


def steps_to_threshold(series: MetricsSeries, metric: str, threshold: float) -> float:
    """First env-step count whose evaluation reaches ``threshold``; ``inf`` if never."""
    for r in series.records:
        v = getattr(r, metric)
        if r.status == "ok" and v >= threshold:
            return float(r.env_steps)
    return math.inf


def dip_depth(series: MetricsSeries, metric: str, early_fraction: float = 0.2, budget: int | None = None) -> float:
    """Worst early fine-tuning score divided by the step-0 score (1.0 means no drop)."""
    ok = [r for r in series.records if r.status == "ok"]
    if not ok:
        return math.nan
    start = getattr(ok[0], metric)
    horizon = early_fraction * (budget if budget is not None else ok[-1].env_steps)
    early = [getattr(r, metric) for r in ok[1:] if r.env_steps <= horizon]
    if not early or start == 0:
        return math.nan
    return float(min(early) / start)


def compare(series: Sequence[MetricsSeries], threshold: float = 0.9, metric: str = "success_rate",
            early_fraction: float = 0.2, budget: int | None = None) -> ComparisonReport:
    if len(series) == 0:
        raise ValueError("nothing to compare")
    envs = {s.env for s in series}
    if len(envs) > 1:
        raise ValueError(f"cannot compare runs from different environments: {sorted(envs)}")
    by_algo: dict[str, list[MetricsSeries]] = {}
    for s in series:
        by_algo.setdefault(s.algo, []).append(s)
    summaries = {}
    for algo, group in by_algo.items():
        group = sorted(group, key=lambda s: s.seed)
        ok = [[r for r in s.records if r.status == "ok"] for s in group]
        length = max(len(o) for o in ok)
        curve = []
        for i in range(length):
            vals = [getattr(o[i], metric) if i < len(o) else math.nan for o in ok]
            steps = [o[i].env_steps for o in ok if i < len(o)]
            present = [v for v in vals if not math.isnan(v)]
            q25, med, q75 = np.percentile(present, [25, 50, 75]) if present else (math.nan,) * 3
            curve.append({"epoch": i, "env_steps": float(np.median(steps)), "median": float(med),
                          "q25": float(q25), "q75": float(q75), "per_seed": vals})
        summaries[algo] = AlgoSummary(
            algo, [s.seed for s in group], curve,
            [steps_to_threshold(s, metric, threshold) for s in group],
            [getattr(o[0], metric) if o else math.nan for o in ok],
            [dip_depth(s, metric, early_fraction, budget) for s in group],
        )
    return ComparisonReport(envs.pop(), metric, threshold, summaries)
