"""Q-learning with online targets and (reverse) experience replay.

Every learner here is a point in one configuration space:

* replay order -- reverse (Q-Rex family), forward, or uniformly random;
* target mode  -- bootstrap from a snapshot frozen for an outer loop, or live;
* data mode    -- fresh samples per outer loop, or the same dataset reused;
* combine      -- Option I carries the last iterate, Option II the average.

``qrex_run``, ``qrexdare_run``, ``epiqrex_run``, ``vanilla_q_run`` and
``otl_replay_q_run`` validate their slice of that space and delegate to the
shared loops below.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np

from qrex import _kernels
from qrex.errors import ConfigurationError
from qrex.mdp import BehaviorPolicy, Environment, FeatureMap, Trajectory
from qrex.replay import Buffer, ReplayOrder, iteration_order, partition_stream, sample_with_replacement

Evaluator = Callable[[np.ndarray, np.ndarray], dict]


class Combine(str, enum.Enum):
    OPTION_I = "I"
    OPTION_II = "II"


class TargetMode(str, enum.Enum):
    FROZEN = "frozen"
    LIVE = "live"


class DataMode(str, enum.Enum):
    FRESH = "fresh"
    REUSE = "reuse"


class ControlMode(str, enum.Enum):
    FIXED = "fixed"
    GREEDY = "greedy"


@dataclass(frozen=True)
class AlgoConfig:
    eta: float
    gamma: float
    K: int = 1
    N: int = 1
    B: int = 1
    u: int = 0
    combine: Combine = Combine.OPTION_I
    replay_order: ReplayOrder = ReplayOrder.REVERSE
    target_mode: TargetMode = TargetMode.FROZEN
    data_mode: DataMode = DataMode.FRESH
    init_w: Any = None
    episodic: bool = False
    episode_cap: int = 100_000
    checkpoint_every: int = 0
    with_replacement: bool = False
    total_steps: int | None = None
    record: bool = False
    divergence_limit: float = 1e12
    average_iterates: bool = True
    track_envelope: bool = False

    def __post_init__(self):
        for name, kind in (("combine", Combine), ("replay_order", ReplayOrder), ("target_mode", TargetMode),
                           ("data_mode", DataMode)):
            try:
                object.__setattr__(self, name, kind(getattr(self, name)))
            except ValueError:
                choices = [m.value for m in kind]
                raise ConfigurationError(f"{name} must be one of {choices}, got {getattr(self, name)!r}") from None
        if not (self.eta >= 0 and np.isfinite(self.eta)):
            raise ConfigurationError(f"eta must be a finite non-negative number, got {self.eta}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must lie in [0, 1], got {self.gamma}")
        partition_stream(self.K, self.N, self.B, self.u)
        if self.data_mode is DataMode.REUSE and self.target_mode is not TargetMode.FROZEN:
            raise ConfigurationError("data_mode=reuse requires target_mode=frozen")
        if self.episode_cap < 1:
            raise ConfigurationError("episode_cap must be >= 1")
        if self.checkpoint_every < 0:
            raise ConfigurationError("checkpoint_every must be >= 0")
        if self.total_steps is not None and self.total_steps < 1:
            raise ConfigurationError("total_steps must be >= 1")

    @property
    def S(self) -> int:
        return self.B + self.u

    @property
    def budget(self) -> int:
        """Fresh samples a continuing run draws (``K N (B + u)`` unless overridden)."""
        return self.total_steps if self.total_steps is not None else self.K * self.N * self.S

    def initial_weights(self, dim: int) -> np.ndarray:
        if self.init_w is None:
            return np.zeros(dim)
        w = np.asarray(self.init_w, dtype=float)
        if w.ndim == 0:
            return np.full(dim, float(w))
        if w.shape != (dim,):
            raise ConfigurationError(f"init_w has shape {w.shape}, expected ({dim},)")
        return w.copy()


@dataclass
class Checkpoint:
    samples: int
    w: np.ndarray
    w_avg: np.ndarray
    metrics: dict = field(default_factory=dict)
    episodes: int = 0


@dataclass
class PassLog:
    """What one replay pass touched: 1-based positions in update order."""

    positions: np.ndarray
    steps: int
    diverged: bool = False
    target: np.ndarray | None = None

    @property
    def bootstrap_positions(self) -> np.ndarray:
        """Position whose *state* each update bootstraps from (one past the transition)."""
        return self.positions[: self.steps] + 1


@dataclass
class BufferRecord:
    transitions: Trajectory
    w_start: np.ndarray
    w_end: np.ndarray
    log: PassLog


@dataclass
class LoopRecord:
    """Everything the lemma checkers need about one outer loop."""

    k: int
    w_entry: np.ndarray
    buffers: list[BufferRecord]
    w_next: np.ndarray | None = None


@dataclass
class RunTrace:
    checkpoints: list[Checkpoint]
    final_w: np.ndarray
    diverged: bool = False
    samples_consumed: int = 0
    x_unit: str = "samples"
    episode_lengths: list[int] = field(default_factory=list)
    truncated_episodes: int = 0
    skipped_episodes: int = 0
    loops: list[LoopRecord] = field(default_factory=list)
    updates: int = 0
    envelope: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def final_avg(self) -> np.ndarray:
        return self.checkpoints[-1].w_avg if self.checkpoints else self.final_w


# ---------------------------------------------------------------------------
# building blocks


@dataclass
class _Arrays:
    idx: np.ndarray
    val: np.ndarray
    r: np.ndarray
    nidx: np.ndarray
    nval: np.ndarray
    nterm: np.ndarray


def _materialize(traj: Trajectory, fm: FeatureMap) -> _Arrays:
    n = len(traj)
    idx, val = fm.sparse(traj.states, traj.actions)
    nterm = np.asarray(traj.next_terminal, dtype=bool)
    live = np.flatnonzero(~nterm)
    if len(live) == n:
        nidx, nval = fm.sparse_all_actions(traj.next_states)
    else:
        # terminal next states are never embedded; their rows stay zero
        nidx = np.zeros((n, fm.num_actions, fm.nnz), dtype=np.int64)
        nval = np.zeros((n, fm.num_actions, fm.nnz))
        if len(live) and live[-1] == len(live) - 1:  # live prefix, the usual episode shape
            nidx[: len(live)], nval[: len(live)] = fm.sparse_all_actions(traj.next_states[: len(live)])
        elif len(live):
            nidx[live], nval[live] = fm.sparse_all_actions(traj.next_states[live])
    return _Arrays(
        np.ascontiguousarray(idx, dtype=np.int64),
        np.ascontiguousarray(val, dtype=float),
        np.asarray(traj.rewards, dtype=float),
        nidx,
        nval,
        nterm,
    )


def bootstrap_values(target: np.ndarray, arr: _Arrays) -> np.ndarray:
    """``max_a' <phi(s', a'), target>`` per row, 0 where ``s'`` is terminal."""
    out = np.empty(arr.nidx.shape[0])
    _kernels.bootstrap(np.ascontiguousarray(target, dtype=float), arr.nidx, arr.nval, arr.nterm, out)
    return out


class _Accumulator:
    """Running sum of every post-update iterate of a run (iterate averaging).

    With ``envelope`` set it also keeps the per-coordinate minimum and
    maximum over those iterates.
    """

    def __init__(self, dim: int, average: bool = True, envelope: bool = False):
        self.average = average
        self.total = np.zeros(dim if average else 0)
        self.count = 0
        self.envelope = envelope
        self.lo = np.full(dim if envelope else 0, np.inf)
        self.hi = np.full(dim if envelope else 0, -np.inf)

    def mean(self, fallback: np.ndarray) -> np.ndarray:
        return self.total / self.count if (self.average and self.count) else fallback.copy()


def _positions(n: int, order: ReplayOrder | np.ndarray, rng, with_replacement: bool) -> np.ndarray:
    if isinstance(order, np.ndarray):
        return order.astype(np.int64)
    if ReplayOrder(order) is ReplayOrder.RANDOM and with_replacement:
        if rng is None:
            raise ConfigurationError("random replay order needs an rng")
        return sample_with_replacement(n, rng)
    return iteration_order(n, order, rng)


def _pass(w_start, target_w, arr: _Arrays, positions, eta, gamma, limit, track_avg, acc: _Accumulator | None):
    w = np.array(w_start, dtype=float, copy=True)
    buf_sum = np.zeros_like(w) if track_avg else np.zeros(0)
    if acc is None:
        acc = _Accumulator(0, average=False)
    extras = (acc.total, acc.average, acc.lo, acc.hi, acc.envelope)
    order0 = np.ascontiguousarray(positions - 1, dtype=np.int64)
    if target_w is not None:
        y = arr.r + gamma * bootstrap_values(np.asarray(target_w, dtype=float), arr)
        done = _kernels.frozen_pass(w, arr.idx, arr.val, y, order0, float(eta), float(limit),
                                    buf_sum, track_avg, *extras)
    else:
        done = _kernels.live_pass(w, arr.idx, arr.val, arr.r, arr.nidx, arr.nval, arr.nterm, float(gamma),
                                  order0, float(eta), float(limit), buf_sum, track_avg, *extras)
    acc.count += done
    w_avg = buf_sum / done if (track_avg and done) else w.copy()
    return w, w_avg, done


def inner_buffer_pass(
    w_start: np.ndarray,
    target_w: np.ndarray | None,
    buf: Buffer | Trajectory,
    eta: float,
    gamma: float,
    order: ReplayOrder | str | np.ndarray,
    fm: FeatureMap,
    rng: np.random.Generator | None = None,
    *,
    with_replacement: bool = False,
    divergence_limit: float = 1e12,
    track_average: bool = True,
    _acc: _Accumulator | None = None,
) -> tuple[np.ndarray, np.ndarray, PassLog]:
    """One replay pass over the ``B`` usable transitions of a buffer.

    With ``target_w`` given, every update bootstraps from it (online target);
    with ``target_w=None`` the bootstrap uses the evolving iterate.  Returns the
    last iterate, the mean of the post-update iterates (the last iterate again
    when ``track_average`` is off), and a :class:`PassLog`.
    """
    transitions = buf.transitions if isinstance(buf, Buffer) else buf
    w_start = np.asarray(w_start, dtype=float)
    if w_start.shape != (fm.dim,):
        raise ConfigurationError(f"w has shape {w_start.shape}, feature dimension is {fm.dim}")
    n = len(transitions)
    if isinstance(order, np.ndarray):
        positions = order.astype(np.int64)
    else:
        order = ReplayOrder(order)
        positions = _positions(n, order, rng, with_replacement)
    if n == 0:
        w = w_start.copy()
        return w, w.copy(), PassLog(positions, 0, False, target_w)
    arr = _materialize(transitions, fm)
    w_end, w_avg, done = _pass(w_start, target_w, arr, positions, eta, gamma, divergence_limit, track_average, _acc)
    log = PassLog(positions, done, done < len(positions), None if target_w is None else np.array(target_w))
    return w_end, w_avg, log


def combine_iterates(option: Combine | str, outputs: Sequence[np.ndarray]) -> np.ndarray:
    """Option I keeps the last buffer output, Option II averages them."""
    if len(outputs) == 0:
        raise ConfigurationError("combine_iterates needs at least one buffer output")
    if Combine(option) is Combine.OPTION_I:
        return np.array(outputs[-1], dtype=float)
    return np.mean(np.asarray(outputs, dtype=float), axis=0)


# ---------------------------------------------------------------------------
# shared loops


class _Tracer:
    def __init__(self, cfg: AlgoConfig, evaluate: Evaluator | None, x_unit: str, dim: int):
        self.cfg = cfg
        self.evaluate = evaluate
        self.trace = RunTrace([], np.zeros(dim), x_unit=x_unit)
        self.acc = _Accumulator(dim, cfg.average_iterates, cfg.track_envelope)
        self.samples = 0
        self.episodes = 0
        self._next = cfg.checkpoint_every

    def due(self, position: int) -> bool:
        if self.cfg.checkpoint_every == 0:
            return True
        if position >= self._next:
            while self._next <= position:
                self._next += self.cfg.checkpoint_every
            return True
        return False

    def checkpoint(self, w: np.ndarray, extra: dict | None = None) -> None:
        w_avg = self.acc.mean(w)
        metrics = dict(self.evaluate(w, w_avg)) if self.evaluate else {}
        if extra:
            metrics.update(extra)
        self.trace.checkpoints.append(Checkpoint(self.samples, w.copy(), w_avg, metrics, self.episodes))

    def finish(self, w: np.ndarray, last_extra: dict | None = None) -> RunTrace:
        cps = self.trace.checkpoints
        if not cps or not np.array_equal(cps[-1].w, w) or cps[-1].samples != self.samples:
            self.checkpoint(w, last_extra)
        self.trace.final_w = w.copy()
        self.trace.samples_consumed = self.samples
        self.trace.updates = self.acc.count
        if self.acc.envelope:
            self.trace.envelope = (self.acc.lo.copy(), self.acc.hi.copy())
        return self.trace


def _buffered_loop(cfg: AlgoConfig, fm: FeatureMap, next_buffer: Callable[[int, int], Buffer],
                   rng, evaluate: Evaluator | None) -> RunTrace:
    tracer = _Tracer(cfg, evaluate, "samples", fm.dim)
    trace = tracer.trace
    w = cfg.initial_weights(fm.dim)
    frozen = cfg.target_mode is TargetMode.FROZEN
    for k in range(1, cfg.K + 1):
        entry = w.copy()
        target = entry if frozen else None
        outputs = []
        record = LoopRecord(k, entry, []) if cfg.record else None
        for j in range(1, cfg.N + 1):
            buf = next_buffer(k, j)
            tracer.samples += len(buf.samples)
            w_end, w_avg, log = inner_buffer_pass(
                w, target, buf, cfg.eta, cfg.gamma, cfg.replay_order, fm, rng,
                with_replacement=cfg.with_replacement, divergence_limit=cfg.divergence_limit,
                track_average=cfg.combine is Combine.OPTION_II, _acc=tracer.acc,
            )
            if record is not None:
                record.buffers.append(BufferRecord(buf.transitions, w.copy(), w_end.copy(), log))
            if log.diverged:
                trace.diverged = True
                w = w_end
                break
            w = w_end if cfg.combine is Combine.OPTION_I else w_avg
            outputs.append(w)
            if j < cfg.N and tracer.due(tracer.samples):
                tracer.checkpoint(w)
        if trace.diverged:
            if record is not None:
                trace.loops.append(record)
            break
        w = combine_iterates(cfg.combine, outputs)
        if record is not None:
            record.w_next = w.copy()
            trace.loops.append(record)
        if tracer.due(tracer.samples):
            tracer.checkpoint(w)
    return tracer.finish(w)


def _fresh_buffers(cfg: AlgoConfig, env: Environment, policy: BehaviorPolicy, rng):
    state = {"s": None}

    def next_buffer(k: int, j: int) -> Buffer:
        traj = env.rollout(policy, cfg.S, rng, start=state["s"])
        state["s"] = traj.last_state
        return Buffer(traj, cfg.B, (k, j))

    return next_buffer


def _stream_loop(cfg: AlgoConfig, env: Environment, policy: BehaviorPolicy, rng, evaluate) -> RunTrace:
    """Single-sample updates along one long trajectory, in chunks between checkpoints."""
    fm = env.features
    tracer = _Tracer(cfg, evaluate, "samples", fm.dim)
    w = cfg.initial_weights(fm.dim)
    every = cfg.checkpoint_every or 100
    total = cfg.budget
    s = None
    while tracer.samples < total:
        n = min(every - tracer.samples % every, total - tracer.samples)
        traj = env.rollout(policy, n, rng, start=s)
        s = traj.last_state
        arr = _materialize(traj, fm)
        w, _, done = _pass(w, None, arr, np.arange(1, n + 1), cfg.eta, cfg.gamma,
                           cfg.divergence_limit, False, tracer.acc)
        tracer.samples += n
        if done < n:
            tracer.trace.diverged = True
            break
        if tracer.samples % every == 0 or tracer.samples == total:
            tracer.checkpoint(w)
    return tracer.finish(w)


def _episodic_loop(cfg: AlgoConfig, env: Environment, control: ControlMode, policy: BehaviorPolicy,
                   rng, evaluate) -> RunTrace:
    """One buffer per episode; the target refreshes every ``N`` episodes."""
    fm = env.features
    tracer = _Tracer(cfg, evaluate, "episodes", fm.dim)
    trace = tracer.trace
    w = cfg.initial_weights(fm.dim)
    frozen = cfg.target_mode is TargetMode.FROZEN
    last_len = 0
    for k in range(1, cfg.K + 1):
        entry = w.copy()
        target = entry if frozen else None
        record = LoopRecord(k, entry, []) if cfg.record else None
        for j in range(1, cfg.N + 1):
            behaviour = BehaviorPolicy.greedy(w) if control is ControlMode.GREEDY else policy
            ep = env.episode(behaviour, cfg.episode_cap, rng)
            tracer.samples += len(ep)
            tracer.episodes += 1
            last_len = len(ep)
            trace.episode_lengths.append(last_len)
            trace.truncated_episodes += int(ep.truncated)
            if len(ep) == 0:
                trace.skipped_episodes += 1
                continue
            w_end, w_avg, log = inner_buffer_pass(
                w, target, Buffer(ep, len(ep), (k, j)), cfg.eta, cfg.gamma, cfg.replay_order, fm, rng,
                with_replacement=cfg.with_replacement, divergence_limit=cfg.divergence_limit,
                track_average=cfg.combine is Combine.OPTION_II, _acc=tracer.acc,
            )
            if record is not None:
                record.buffers.append(BufferRecord(ep, w.copy(), w_end.copy(), log))
            if log.diverged:
                trace.diverged = True
                w = w_end
                break
            w = w_end if cfg.combine is Combine.OPTION_I else w_avg
            if tracer.due(tracer.episodes):
                tracer.checkpoint(w, {"episode_length": float(last_len)})
        if record is not None:
            record.w_next = w.copy()
            trace.loops.append(record)
        if trace.diverged:
            break
    return tracer.finish(w, {"episode_length": float(last_len)})


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigurationError(msg)


# ---------------------------------------------------------------------------
# public runners


def buffered_run(cfg: AlgoConfig, env: Environment, policy: BehaviorPolicy, rng: np.random.Generator,
                 evaluate: Evaluator | None = None, control: ControlMode | str = ControlMode.FIXED) -> RunTrace:
    """Any buffered learner on fresh data; episodic environments use one episode per buffer."""
    if env.episodic:
        return _episodic_loop(cfg, env, ControlMode(control), policy, rng, evaluate)
    return _buffered_loop(cfg, env.features, _fresh_buffers(cfg, env, policy, rng), rng, evaluate)


def qrex_run(cfg: AlgoConfig, env: Environment, policy: BehaviorPolicy, rng: np.random.Generator,
             evaluate: Evaluator | None = None) -> RunTrace:
    """Online-target Q-learning with reverse experience replay on one trajectory.

    Consumes exactly ``K N (B + u)`` samples; the last ``u`` of every buffer
    are skipped.
    """
    _check(cfg.target_mode is TargetMode.FROZEN, "qrex requires target_mode=frozen")
    _check(cfg.data_mode is DataMode.FRESH, "qrex requires data_mode=fresh")
    _check(cfg.replay_order is ReplayOrder.REVERSE, "qrex requires replay_order=reverse")
    _check(not env.episodic, "qrex needs a continuing environment; use epiqrex_run for episodes")
    return _buffered_loop(cfg, env.features, _fresh_buffers(cfg, env, policy, rng), rng, evaluate)


def qrexdare_run(cfg: AlgoConfig, dataset: Trajectory, features: FeatureMap,
                 rng: np.random.Generator | None = None, evaluate: Evaluator | None = None) -> RunTrace:
    """Q-Rex that replays the first ``N (B + u)`` samples of ``dataset`` in every outer loop."""
    _check(cfg.data_mode is DataMode.REUSE, "qrexdare requires data_mode=reuse")
    need = cfg.N * cfg.S
    if len(dataset) < need:
        raise ConfigurationError(f"dataset has {len(dataset)} samples, need N*(B+u) = {need}")

    def next_buffer(k: int, j: int) -> Buffer:
        start = cfg.S * (j - 1)
        return Buffer(dataset[start:start + cfg.S], cfg.B, (k, j))

    trace = _buffered_loop(cfg, features, next_buffer, rng, evaluate)
    # checkpoints count replayed samples; only the dataset itself is fresh
    trace.samples_consumed = need
    return trace


def epiqrex_run(cfg: AlgoConfig, env: Environment, control: ControlMode | str, rng: np.random.Generator,
                policy: BehaviorPolicy | None = None, evaluate: Evaluator | None = None) -> RunTrace:
    """Episodic Q-Rex: each buffer is a full episode, replayed in reverse; ``u`` is ignored.

    ``control="greedy"`` generates each episode with the greedy policy of the
    weights left by the previous one; ``"fixed"`` uses ``policy`` throughout.
    """
    _check(env.episodic, "epiqrex requires an episodic environment")
    _check(cfg.target_mode is TargetMode.FROZEN, "epiqrex requires target_mode=frozen")
    _check(cfg.replay_order is ReplayOrder.REVERSE, "epiqrex requires replay_order=reverse")
    return _episodic_loop(cfg, env, ControlMode(control), policy or BehaviorPolicy.uniform(), rng, evaluate)


def vanilla_q_run(cfg: AlgoConfig, env: Environment, policy: BehaviorPolicy, rng: np.random.Generator,
                  evaluate: Evaluator | None = None, control: ControlMode | str = ControlMode.FIXED) -> RunTrace:
    """Streaming Q-learning bootstrapping from the current iterate.

    Continuing environments run ``cfg.budget`` steps; episodic ones run
    ``K N`` episodes, each updated forward as it is observed.
    """
    _check(cfg.target_mode is TargetMode.LIVE, "vanilla Q-learning requires target_mode=live")
    if env.episodic:
        cfg = replace(cfg, replay_order=ReplayOrder.FORWARD)
        return _episodic_loop(cfg, env, ControlMode(control), policy, rng, evaluate)
    return _stream_loop(cfg, env, policy, rng, evaluate)


def otl_replay_q_run(cfg: AlgoConfig, env: Environment, policy: BehaviorPolicy, rng: np.random.Generator,
                     evaluate: Evaluator | None = None, control: ControlMode | str = ControlMode.FIXED) -> RunTrace:
    """Experience replay in random order, with (OTL+ER+Q) or without (ER+Q) a frozen target."""
    _check(cfg.replay_order is ReplayOrder.RANDOM, "otl/er replay requires replay_order=random")
    if env.episodic:
        return _episodic_loop(cfg, env, ControlMode(control), policy, rng, evaluate)
    return _buffered_loop(cfg, env.features, _fresh_buffers(cfg, env, policy, rng), rng, evaluate)
