"""Experiment configuration, seed fan-out, aggregation and CSV output."""

from __future__ import annotations

import csv
import inspect
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from qrex.algorithms import (
    AlgoConfig,
    ControlMode,
    RunTrace,
    buffered_run,
    epiqrex_run,
    otl_replay_q_run,
    qrex_run,
    qrexdare_run,
    vanilla_q_run,
)
from qrex.envs import ENVIRONMENTS, make_env
from qrex.errors import ConfigurationError, QRexError
from qrex.mdp import BehaviorPolicy, Environment, TabularEnv
from qrex.oracle import value_iteration

SEED_ENV_VAR = "QREX_MASTER_SEED"

ExperimentName = Literal["gridworld", "randomwalk", "mountaincar", "baird", "lds", "custom-tabular"]
AlgorithmName = Literal["qrex", "qrexdare", "epiqrex", "vanilla", "otl_er_q", "er_q", "otl_q"]
MetricName = Literal["sup_error", "l2_weight_error", "episode_length", "weight_norm"]

# target mode, data mode and replay order implied by each algorithm
ALGORITHMS: dict[str, dict[str, str]] = {
    "qrex": {"target_mode": "frozen", "data_mode": "fresh", "replay_order": "reverse"},
    "qrexdare": {"target_mode": "frozen", "data_mode": "reuse", "replay_order": "reverse"},
    "epiqrex": {"target_mode": "frozen", "data_mode": "fresh", "replay_order": "reverse"},
    "vanilla": {"target_mode": "live", "data_mode": "fresh", "replay_order": "forward"},
    "otl_er_q": {"target_mode": "frozen", "data_mode": "fresh", "replay_order": "random"},
    "er_q": {"target_mode": "live", "data_mode": "fresh", "replay_order": "random"},
    "otl_q": {"target_mode": "frozen", "data_mode": "fresh", "replay_order": "forward"},
}

# Budgets (K, checkpoint cadence) are pilot-calibrated defaults, not paper values.
EXPERIMENT_DEFAULTS: dict[str, dict[str, Any]] = {
    "gridworld": dict(
        algorithm="qrex", gamma=0.9, eta=0.05, K=200, N=1, B=3000, u=0, combine="II",
        checkpoint_every=3000, seeds=30, metrics=["sup_error"], env={"reward_noise": 0.5},
    ),
    "baird": dict(
        algorithm="otl_q", gamma=0.99, eta=0.01 / math.sqrt(5), K=80, N=5, B=50, u=0, combine="I",
        init_w=1.0, checkpoint_every=250, seeds=10, metrics=["weight_norm"], env={"embedding": "shared"},
    ),
    "lds": dict(
        algorithm="qrex", gamma=0.99, eta=0.01, K=200, N=5, B=75, u=25, combine="II",
        checkpoint_every=5000, seeds=100, metrics=["l2_weight_error"], averaged_metrics=["l2_weight_error"],
        env={"dim": 5, "rho": 0.9, "sigma": 1.0, "system_seed": 0},
    ),
    "mountaincar": dict(
        algorithm="epiqrex", gamma=1.0, eta=0.1 / 4, K=500, N=1, B=1, u=0, combine="I", control="greedy",
        checkpoint_every=1, seeds=100, metrics=["episode_length"], average_iterates=False,
        env={"n_tilings": 4, "tiles": 4},
    ),
    "randomwalk": dict(
        algorithm="epiqrex", gamma=1.0, eta=0.01, K=1000, N=1, B=1, u=0, combine="II",
        checkpoint_every=10, seeds=10, metrics=["sup_error"], env={"num_states": 100, "num_groups": 10},
    ),
    "custom-tabular": dict(
        algorithm="qrex", gamma=None, eta=0.05, K=50, N=1, B=1000, u=0, combine="I",
        checkpoint_every=0, seeds=1, metrics=["sup_error"], env={},
    ),
}


class ExperimentConfig(BaseModel):
    """Fully resolved experiment description; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    experiment: ExperimentName = "gridworld"
    algorithm: AlgorithmName = "qrex"
    eta: float = 0.05
    gamma: float | None = 0.9
    K: int = 1
    N: int = 1
    B: int = 1
    u: int = 0
    combine: Literal["I", "II"] = "I"
    replay_order: Literal["reverse", "forward", "random"] | None = None
    target_mode: Literal["frozen", "live"] | None = None
    data_mode: Literal["fresh", "reuse"] | None = None
    init_w: float | list[float] | None = None
    episodic: bool | None = None
    episode_cap: int = 100_000
    checkpoint_every: int = 0
    with_replacement: bool = False
    total_steps: int | None = None
    divergence_limit: float = 1e12
    average_iterates: bool = True
    control: Literal["fixed", "greedy"] = "fixed"
    seeds: int = 1
    base_seed: int = 0
    env: dict[str, Any] = {}
    metrics: list[MetricName] = ["sup_error"]
    averaged_metrics: list[MetricName] = []

    @model_validator(mode="before")
    @classmethod
    def _fill_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        name = data.get("experiment", "gridworld")
        defaults = EXPERIMENT_DEFAULTS.get(name, {})
        merged = {**defaults, **data}
        if isinstance(data.get("env"), dict):
            merged["env"] = {**defaults.get("env", {}), **data["env"]}
        return merged

    @model_validator(mode="after")
    def _check(self) -> "ExperimentConfig":
        implied = ALGORITHMS[self.algorithm]
        for key, want in implied.items():
            got = getattr(self, key)
            if got is not None and got != want:
                raise ValueError(f"{key}={got!r} conflicts with algorithm {self.algorithm!r} (needs {want!r})")
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        if self.experiment == "custom-tabular" and "model_path" not in self.env:
            raise ValueError("env.model_path is required for custom-tabular")
        allowed = set(inspect.signature(ENVIRONMENTS[self.experiment]).parameters) - {"gamma"}
        for key in self.env:
            if key not in allowed:
                raise ValueError(f"unknown env key {key!r} for {self.experiment} (allowed: {sorted(allowed)})")
        if self.algorithm in ("qrexdare",) and self.experiment in ("mountaincar", "randomwalk"):
            raise ValueError(f"algorithm {self.algorithm!r} needs a continuing environment")
        if self.algorithm == "epiqrex" and self.experiment not in ("mountaincar", "randomwalk"):
            raise ValueError("algorithm 'epiqrex' needs an episodic environment (mountaincar or randomwalk)")
        if self.algorithm == "qrex" and self.experiment in ("mountaincar", "randomwalk"):
            raise ValueError("algorithm 'qrex' needs a continuing environment; use epiqrex")
        episodic_env = self.experiment in ("mountaincar", "randomwalk")
        if self.episodic is not None and self.episodic != episodic_env:
            raise ValueError(f"episodic={self.episodic} does not match experiment {self.experiment!r}")
        self.algo_config(None)  # surfaces AlgoConfig constraint violations at parse time
        return self

    def resolved(self, key: str) -> Any:
        value = getattr(self, key)
        return ALGORITHMS[self.algorithm][key] if value is None else value

    def algo_config(self, gamma: float | None) -> AlgoConfig:
        g = self.gamma if self.gamma is not None else (gamma if gamma is not None else 0.9)
        try:
            return AlgoConfig(
                eta=self.eta, gamma=g, K=self.K, N=self.N, B=self.B, u=self.u, combine=self.combine,
                replay_order=self.resolved("replay_order"), target_mode=self.resolved("target_mode"),
                data_mode=self.resolved("data_mode"), init_w=self.init_w,
                episodic=self.experiment in ("mountaincar", "randomwalk"),
                episode_cap=self.episode_cap, checkpoint_every=self.checkpoint_every,
                with_replacement=self.with_replacement, total_steps=self.total_steps,
                divergence_limit=self.divergence_limit, average_iterates=self.average_iterates,
            )
        except ConfigurationError as exc:
            raise ValueError(str(exc)) from None

    def echo(self) -> dict:
        return self.model_dump(mode="json")


def _parse_value(text: str) -> Any:
    return yaml.safe_load(text) if text.strip() else ""


def _set_dotted(data: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"{key}: {p!r} is not a mapping")
    node[parts[-1]] = value


def _format_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"])
        msg = err["msg"]
        if err["type"] == "extra_forbidden":
            msg = f"unknown key {loc!r}"
        parts.append(f"{loc}: {msg}" if loc else msg)
    return "; ".join(parts)


def parse_config(path: str | Path | None = None, overrides: list[str] | dict | None = None,
                 environ: dict[str, str] | None = None) -> ExperimentConfig:
    """Read a YAML config, apply ``key=value`` overrides (dotted keys reach into ``env``), fill defaults."""
    data: dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        loaded = yaml.safe_load(text) if text.strip() else {}
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"config {path} must be a mapping")
        data.update(loaded)
    if isinstance(overrides, dict):
        for k, v in overrides.items():
            _set_dotted(data, k, v)
    else:
        for item in overrides or []:
            if "=" not in item:
                raise ConfigurationError(f"override {item!r} must look like key=value")
            k, v = item.split("=", 1)
            _set_dotted(data, k.strip(), _parse_value(v))
    environ = os.environ if environ is None else environ
    if environ.get(SEED_ENV_VAR):
        try:
            data["base_seed"] = int(environ[SEED_ENV_VAR])
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV_VAR} must be an integer") from None
    try:
        return ExperimentConfig(**data)
    except ValidationError as exc:
        raise ConfigurationError(_format_error(exc)) from None
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


# ---------------------------------------------------------------------------
# single runs


def build_env(cfg: ExperimentConfig) -> Environment:
    kwargs = dict(cfg.env)
    if cfg.gamma is not None:
        kwargs["gamma"] = cfg.gamma
    try:
        return make_env(cfg.experiment, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"env: {exc}") from None


def _reference(env: Environment) -> tuple[Any, np.ndarray] | None:
    """Evaluation pairs and exact Q* on them, where an exact answer exists."""
    if isinstance(env, TabularEnv):
        states, actions = env.eval_pairs()
        q_star = value_iteration(env.model, tol=1e-10)
        return (states, actions), q_star[states, actions]
    pairs = env.eval_pairs()
    w_star = getattr(env, "optimal_weights", None)
    if pairs is None or w_star is None:
        return None
    idx, val = env.features.sparse(*pairs)
    return pairs, (w_star[idx] * val).sum(axis=1)


def make_evaluator(cfg: ExperimentConfig, env: Environment):
    """Metric callback ``(w, w_avg) -> {name: value}`` for the configured metric set."""
    ref = _reference(env) if "sup_error" in cfg.metrics else None
    if "sup_error" in cfg.metrics and ref is None:
        raise ConfigurationError(f"sup_error is not available for {cfg.experiment}")
    if ref is not None:
        idx, val = env.features.sparse(*ref[0])
        q_ref = ref[1]
    w_star = getattr(env, "optimal_weights", None)
    if "l2_weight_error" in cfg.metrics and w_star is None:
        raise ConfigurationError(f"l2_weight_error is not available for {cfg.experiment}")

    def evaluate(w: np.ndarray, w_avg: np.ndarray) -> dict:
        out = {}
        for name in cfg.metrics:
            x = w_avg if name in cfg.averaged_metrics else w
            if name == "sup_error":
                out[name] = float(np.max(np.abs((x[idx] * val).sum(axis=1) - q_ref)))
            elif name == "l2_weight_error":
                out[name] = float(np.linalg.norm(x - w_star))
            elif name == "weight_norm":
                out[name] = float(np.linalg.norm(x))
        return out

    return evaluate


def run_single(cfg: ExperimentConfig, seed: int) -> RunTrace:
    """One seeded run; the whole run draws from ``default_rng(seed)``."""
    env = build_env(cfg)
    algo = cfg.algo_config(env.gamma)
    rng = np.random.default_rng(seed)
    evaluate = make_evaluator(cfg, env)
    policy = BehaviorPolicy.uniform()
    control = ControlMode(cfg.control)
    name = cfg.algorithm
    if name == "qrex":
        return qrex_run(algo, env, policy, rng, evaluate)
    if name == "qrexdare":
        dataset = env.rollout(policy, algo.N * algo.S, rng)
        return qrexdare_run(algo, dataset, env.features, rng, evaluate)
    if name == "epiqrex":
        return epiqrex_run(algo, env, control, rng, policy, evaluate)
    if name == "vanilla":
        return vanilla_q_run(algo, env, policy, rng, evaluate, control)
    if name in ("otl_er_q", "er_q"):
        return otl_replay_q_run(algo, env, policy, rng, evaluate, control)
    return buffered_run(algo, env, policy, rng, evaluate, control)


@dataclass
class SeedResult:
    seed: int
    x_unit: str
    rows: list[tuple[int, str, float]]  # (x, metric, value)
    diverged: bool
    truncated_episodes: int
    skipped_episodes: int


def _rows(cfg: ExperimentConfig, trace: RunTrace) -> list[tuple[int, str, float]]:
    rows = []
    last_x = None
    for cp in trace.checkpoints:
        x = cp.episodes if trace.x_unit == "episodes" else cp.samples
        if last_x is not None and x <= last_x:
            continue
        last_x = x
        for name in cfg.metrics:
            if name in cp.metrics:
                rows.append((int(x), name, float(cp.metrics[name])))
    return rows


def _run_seed(payload: tuple[dict, int]) -> SeedResult:
    cfg_dict, seed = payload
    cfg = ExperimentConfig(**cfg_dict)
    try:
        trace = run_single(cfg, seed)
    except ConfigurationError:
        raise
    except Exception as exc:  # surfaced with the seed attached
        raise RunFailure(seed, f"{type(exc).__name__}: {exc}") from exc
    return SeedResult(seed, trace.x_unit, _rows(cfg, trace), trace.diverged,
                      trace.truncated_episodes, trace.skipped_episodes)


class RunFailure(QRexError, RuntimeError):
    def __init__(self, seed: int, message: str):
        super().__init__(f"seed {seed}: {message}")
        self.seed = seed

    def __reduce__(self):
        return (RunFailure, (self.seed, str(self).split(": ", 1)[1]))


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class AggregateResult:
    config: ExperimentConfig
    seeds: list[SeedResult]
    # metric -> (x, mean, stderr, count)
    curves: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=dict)
    env_params: dict = field(default_factory=dict)

    @property
    def x_unit(self) -> str:
        return self.seeds[0].x_unit if self.seeds else "samples"

    @property
    def diverged_seeds(self) -> list[int]:
        return [s.seed for s in self.seeds if s.diverged]

    def final(self, metric: str) -> np.ndarray:
        """Last recorded value of ``metric`` for every seed, in seed order."""
        out = []
        for s in self.seeds:
            vals = [v for _, m, v in s.rows if m == metric]
            out.append(vals[-1] if vals else np.nan)
        return np.asarray(out)

    def per_seed(self, metric: str) -> np.ndarray:
        """``(seeds, checkpoints)`` matrix of ``metric``; shorter (diverged) runs are padded with NaN."""
        series = [[v for _, m, v in s.rows if m == metric] for s in self.seeds]
        width = max((len(x) for x in series), default=0)
        out = np.full((len(series), width), np.nan)
        for i, x in enumerate(series):
            out[i, : len(x)] = x
        return out


def aggregate(cfg: ExperimentConfig, results: list[SeedResult], env_params: dict | None = None) -> AggregateResult:
    agg = AggregateResult(cfg, sorted(results, key=lambda r: r.seed), env_params=env_params or {})
    for metric in cfg.metrics:
        by_x: dict[int, list[float]] = {}
        for res in agg.seeds:
            for x, m, v in res.rows:
                if m == metric:
                    by_x.setdefault(x, []).append(v)
        xs = np.array(sorted(by_x), dtype=np.int64)
        mean = np.array([np.mean(by_x[x]) for x in xs])
        stderr = np.array([np.std(by_x[x], ddof=1) / math.sqrt(len(by_x[x])) if len(by_x[x]) > 1 else 0.0
                           for x in xs])
        count = np.array([len(by_x[x]) for x in xs], dtype=np.int64)
        agg.curves[metric] = (xs, mean, stderr, count)
    return agg


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> AggregateResult:
    """Runs seeds ``base_seed .. base_seed + seeds - 1`` on up to ``jobs`` processes; output is seed-ordered."""
    if jobs < 1:
        raise ConfigurationError("jobs must be >= 1")
    env_params = build_env(cfg).params()
    payloads = [(cfg.echo(), cfg.base_seed + i) for i in range(cfg.seeds)]
    if jobs == 1 or cfg.seeds == 1:
        results = [_run_seed(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, cfg.seeds)) as pool:
            results = list(pool.map(_run_seed, payloads))
    return aggregate(cfg, results, env_params)


# ---------------------------------------------------------------------------
# CSV

CSV_COLUMNS = ["experiment", "algorithm", "seed", "x_unit", "x", "metric", "value"]


def _fmt(v: float) -> str:
    return format(float(v), ".12g")


def render_csv(result: AggregateResult) -> str:
    cfg = result.config
    buf = io.StringIO()
    buf.write(f"# config: {json.dumps(cfg.echo(), sort_keys=True)}\n")
    buf.write(f"# env: {json.dumps(result.env_params, sort_keys=True, default=str)}\n")
    buf.write(f"# diverged_seeds: {json.dumps(result.diverged_seeds)}\n")
    truncated = {s.seed: s.truncated_episodes for s in result.seeds if s.truncated_episodes}
    skipped = {s.seed: s.skipped_episodes for s in result.seeds if s.skipped_episodes}
    buf.write(f"# truncated_episodes: {json.dumps(truncated, sort_keys=True)}\n")
    buf.write(f"# skipped_episodes: {json.dumps(skipped, sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    x_unit = result.x_unit
    for s in result.seeds:
        for x, metric, value in s.rows:
            writer.writerow([cfg.experiment, cfg.algorithm, s.seed, x_unit, x, metric, _fmt(value)])
    for label, col in (("mean", 1), ("stderr", 2)):
        for metric, curve in result.curves.items():
            for x, v in zip(curve[0], curve[col]):
                writer.writerow([cfg.experiment, cfg.algorithm, label, x_unit, int(x), metric, _fmt(v)])
    return buf.getvalue()


def emit_csv(result: AggregateResult, path: str | Path | None) -> None:
    """Write the CSV to ``path`` (``None`` or ``"-"`` means stdout)."""
    text = render_csv(result)
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


@dataclass
class CsvData:
    config: dict
    rows: list[dict]

    def curve(self, metric: str, label: str = "mean") -> tuple[np.ndarray, np.ndarray]:
        pts = [(int(r["x"]), float(r["value"])) for r in self.rows if r["seed"] == label and r["metric"] == metric]
        return np.array([p[0] for p in pts], dtype=np.int64), np.array([p[1] for p in pts])


def read_csv(path: str | Path) -> CsvData:
    config: dict = {}
    lines = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("# config: "):
                config = json.loads(line[len("# config: "):])
            elif not line.startswith("#"):
                lines.append(line)
    return CsvData(config, list(csv.DictReader(lines)))


def config_from_csv(path: str | Path) -> ExperimentConfig:
    """Re-parse the config echoed in a CSV header."""
    return ExperimentConfig(**read_csv(path).config)
