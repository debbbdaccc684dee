"""Randomised numerical checks of the structural lemmas, run with a fixed master seed."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from qrex.algorithms import AlgoConfig, otl_replay_q_run, qrex_run, qrexdare_run, vanilla_q_run
from qrex.mdp import BehaviorPolicy, TabularEnv, TabularModel, sample_trajectory
from qrex.oracle import (
    bellman_apply,
    bias_variance_residual,
    hypercontract_fixed_point,
    noiseless_q_iteration,
    tabular_bias_factor,
    value_iteration,
)

MASTER_SEED = 20_211_015

SCALES = {
    "quick": dict(bv_mdps=20, contraction_mdps=10, contraction_pairs=100, bound_mdps=10, bound_updates=100_000,
                  iteration_mdps=10, hyper_trials=1000),
    "full": dict(bv_mdps=100, contraction_mdps=20, contraction_pairs=1000, bound_mdps=10, bound_updates=100_000,
                 iteration_mdps=50, hyper_trials=100_000),
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    residual: float
    tolerance: float
    detail: str
    seconds: float


def _random_mdp(rng: np.random.Generator, gamma: float, max_states: int = 5, max_actions: int = 3) -> TabularModel:
    S = int(rng.integers(2, max_states + 1))
    A = int(rng.integers(1, max_actions + 1))
    return TabularModel.random(S, A, gamma, rng)


def recorded_qrex_loops(n_mdps: int, rng: np.random.Generator, K: int = 2, N: int = 3, B: int = 5,
                        eta: float = 0.05, gamma: float = 0.9):
    """``(model, loop_record)`` pairs from Option I Q-Rex runs on random small MDPs."""
    out = []
    for _ in range(n_mdps):
        model = _random_mdp(rng, gamma)
        cfg = AlgoConfig(eta=eta, gamma=gamma, K=K, N=N, B=B, u=0, combine="I", record=True)
        trace = qrex_run(cfg, TabularEnv(model), BehaviorPolicy.uniform(), rng)
        out.extend((model, rec) for rec in trace.loops)
    return out


def check_bias_variance(loops, eta: float = 0.05) -> CheckResult:
    t = time.perf_counter()
    worst = max(bias_variance_residual(rec, model, eta) for model, rec in loops)
    return CheckResult("bias_variance_identity", worst <= 1e-10, worst, 1e-10,
                       f"{len(loops)} outer loops", time.perf_counter() - t)


def check_tabular_bias(loops, rng: np.random.Generator, eta: float = 0.05) -> CheckResult:
    t = time.perf_counter()
    worst = 0.0
    pairs = 0
    for model, rec in loops:
        g = rng.standard_normal(model.num_states * model.num_actions)
        for s in range(model.num_states):
            for a in range(model.num_actions):
                lhs, rhs = tabular_bias_factor(rec, g, s, a, model, eta)
                worst = max(worst, abs(lhs - rhs))
                pairs += 1
    return CheckResult("tabular_bias_factor", worst <= 1e-12, worst, 1e-12,
                       f"{pairs} state-action pairs", time.perf_counter() - t)


def check_contraction(rng: np.random.Generator, n_mdps: int, n_pairs: int) -> CheckResult:
    """``||T Q1 - T Q2||_inf <= gamma ||Q1 - Q2||_inf``; reports the largest ratio over gamma."""
    t = time.perf_counter()
    violations = 0
    worst = 0.0
    for _ in range(n_mdps):
        gamma = float(rng.uniform(0.1, 0.99))
        model = _random_mdp(rng, gamma)
        shape = (model.num_states, model.num_actions)
        for _ in range(n_pairs):
            q1 = rng.normal(scale=10.0, size=shape)
            q2 = rng.normal(scale=10.0, size=shape)
            lhs = np.max(np.abs(bellman_apply(model, q1) - bellman_apply(model, q2)))
            rhs = gamma * np.max(np.abs(q1 - q2))
            violations += int(lhs > rhs * (1 + 1e-12))
            worst = max(worst, lhs / rhs)
    return CheckResult("bellman_contraction", violations == 0, float(violations), 0.0,
                       f"{n_mdps * n_pairs} pairs, max ratio/gamma-scaled {worst:.6f}", time.perf_counter() - t)


def check_value_iteration(rng: np.random.Generator, n_mdps: int) -> CheckResult:
    t = time.perf_counter()
    worst = 0.0
    bound_ok = True
    for _ in range(n_mdps):
        gamma = float(rng.choice([0.5, 0.9, 0.99]))
        model = _random_mdp(rng, gamma)
        q = value_iteration(model, tol=1e-10)
        worst = max(worst, float(np.max(np.abs(bellman_apply(model, q) - q))))
        bound_ok &= bool(np.max(np.abs(q)) <= 1.0 / (1.0 - gamma))
    return CheckResult("value_iteration", worst <= 1e-10 and bound_ok, worst, 1e-10,
                       f"{n_mdps} MDPs, ||Q*|| <= 1/(1-gamma): {bound_ok}", time.perf_counter() - t)


def check_noiseless_iteration(rng: np.random.Generator, n_mdps: int, k: int = 50) -> CheckResult:
    """``||w_t - Q*||_inf <= gamma^(t-1) ||Q*||_inf`` for the iterates of exact Q-iteration from 0."""
    t = time.perf_counter()
    worst = -np.inf
    for _ in range(n_mdps):
        gamma = float(rng.choice([0.5, 0.9]))
        model = _random_mdp(rng, gamma)
        q_star = value_iteration(model, tol=1e-13)
        norm = np.max(np.abs(q_star))
        for i, w in enumerate(noiseless_q_iteration(model, k), start=1):
            worst = max(worst, float(np.max(np.abs(w - q_star)) - gamma ** (i - 1) * norm))
    return CheckResult("noiseless_q_iteration", worst <= 1e-12, worst, 1e-12,
                       f"{n_mdps} MDPs, k <= {k} (largest excess over the bound)", time.perf_counter() - t)


def _bound_runners() -> list[tuple[str, Callable]]:
    pol = BehaviorPolicy.uniform()

    def qrex(cfg, env, rng, combine):
        return qrex_run(AlgoConfig(**cfg, combine=combine), env, pol, rng)

    def dare(cfg, env, rng):
        c = AlgoConfig(**cfg, data_mode="reuse")
        data = sample_trajectory(env, pol, c.N * c.S, rng)
        return qrexdare_run(c, data, env.features, rng)

    def vanilla(cfg, env, rng):
        return vanilla_q_run(AlgoConfig(**cfg, target_mode="live"), env, pol, rng)

    def otl(cfg, env, rng):
        return otl_replay_q_run(AlgoConfig(**cfg, replay_order="random"), env, pol, rng)

    def er(cfg, env, rng):
        return otl_replay_q_run(AlgoConfig(**cfg, replay_order="random", target_mode="live"), env, pol, rng)

    return [
        ("qrex_I", lambda c, e, r: qrex(c, e, r, "I")),
        ("qrex_II", lambda c, e, r: qrex(c, e, r, "II")),
        ("qrexdare", dare),
        ("vanilla", vanilla),
        ("otl_er_q", otl),
        ("er_q", er),
    ]


def check_iterate_bound(rng: np.random.Generator, n_mdps: int, updates: int) -> CheckResult:
    """Every post-update tabular iterate stays in ``[0, 1/(1-gamma)]`` when rewards lie in ``[0, 1]``."""
    t = time.perf_counter()
    worst = 0.0
    runs = 0
    B, N = 500, 2
    K = max(1, updates // (B * N))
    for gamma in (0.5, 0.9):
        for _ in range(n_mdps):
            model = _random_mdp(rng, gamma)
            env = TabularEnv(model)
            cfg = dict(eta=float(rng.uniform(0.01, 1.0)), gamma=gamma, K=K, N=N, B=B, u=1,
                       track_envelope=True, checkpoint_every=10**9)
            hi_bound = 1.0 / (1.0 - gamma)
            for _, run in _bound_runners():
                trace = run(cfg, env, rng)
                lo, hi = trace.envelope
                visited = np.isfinite(lo)
                if visited.any():
                    worst = max(worst, float(-lo[visited].min()), float(hi[visited].max() - hi_bound))
                runs += 1
    return CheckResult("tabular_iterate_bound", worst <= 0.0, worst, 0.0,
                       f"{runs} runs, largest excursion outside [0, 1/(1-gamma)]", time.perf_counter() - t)


def check_target_freshness(loops) -> CheckResult:
    t = time.perf_counter()
    bad = 0
    for _, rec in loops:
        for br in rec.buffers:
            bad += int(br.log.target is None or not np.array_equal(br.log.target, rec.w_entry))
    return CheckResult("frozen_target", bad == 0, float(bad), 0.0,
                       f"{sum(len(r.buffers) for _, r in loops)} buffer passes", time.perf_counter() - t)


def check_hypercontract(rng: np.random.Generator, trials: int) -> CheckResult:
    t = time.perf_counter()
    ab = rng.uniform(0.0, 10.0, size=(trials, 2))
    worst = 0.0
    for alpha, beta in ab:
        u = hypercontract_fixed_point(alpha, beta)
        worst = max(worst, abs(u - (alpha + beta * np.sqrt(u))))
    return CheckResult("hypercontract_fixed_point", worst <= 1e-12, worst, 1e-12, f"{trials} (alpha, beta) draws",
                       time.perf_counter() - t)


def verify_suite(scale: str = "quick", seed: int = MASTER_SEED) -> list[CheckResult]:
    """All checks at the given scale; each check draws from its own child of the master seed."""
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {sorted(SCALES)}")
    p = SCALES[scale]
    children = np.random.SeedSequence(seed).spawn(8)
    rngs = [np.random.default_rng(c) for c in children]
    loops = recorded_qrex_loops(p["bv_mdps"], rngs[0])
    return [
        check_bias_variance(loops),
        check_tabular_bias(loops, rngs[1]),
        check_target_freshness(loops),
        check_contraction(rngs[2], p["contraction_mdps"], p["contraction_pairs"]),
        check_value_iteration(rngs[3], p["iteration_mdps"]),
        check_noiseless_iteration(rngs[4], p["iteration_mdps"]),
        check_iterate_bound(rngs[5], p["bound_mdps"], p["bound_updates"]),
        check_hypercontract(rngs[6], p["hyper_trials"]),
    ]


def format_report(results: list[CheckResult]) -> str:
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{status}  {r.name:<28} residual={r.residual:.3e} tol={r.tolerance:.0e}  "
                     f"({r.detail}; {r.seconds:.2f}s)")
    return "\n".join(lines)
