"""Exact ground truth for tabular and linear problems, and checkers for the structural lemmas.

The lemma checkers work on recorded runs (see ``AlgoConfig.record``) rather
than on seeds, so they never depend on reproducing a random stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

import numpy as np

from qrex.errors import ConfigurationError, OracleError
from qrex.mdp import BehaviorPolicy, FeatureMap, TabularFeatures, TabularModel

if TYPE_CHECKING:
    from qrex.algorithms import LoopRecord


def _as_table(model: TabularModel, Q: np.ndarray) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    shape = (model.num_states, model.num_actions)
    if Q.shape == shape:
        return Q
    if Q.shape == (model.num_states * model.num_actions,):
        return Q.reshape(shape)
    raise ConfigurationError(f"Q must have shape {shape} (or be its flattening), got {Q.shape}")


def bellman_apply(model: TabularModel, Q: np.ndarray) -> np.ndarray:
    """``R(s,a) + gamma * sum_s' P(s'|s,a) max_a' Q(s',a')``, same shape as ``Q``."""
    table = _as_table(model, Q)
    out = model.R + model.gamma * model.P @ table.max(axis=1)
    return out.reshape(np.shape(Q))


def value_iteration(model: TabularModel, tol: float = 1e-10, max_iters: int = 1_000_000) -> np.ndarray:
    """Iterate the Bellman operator from zero until ``||T(Q) - Q||_inf <= tol``."""
    if tol <= 0:
        raise ConfigurationError("tol must be positive")
    Q = np.zeros((model.num_states, model.num_actions))
    residual = np.inf
    for _ in range(max_iters):
        TQ = bellman_apply(model, Q)
        residual = np.max(np.abs(TQ - Q))
        Q = TQ
        if residual <= tol:
            # Q is now T(previous); report the residual of the returned table
            if np.max(np.abs(bellman_apply(model, Q) - Q)) <= tol:
                return Q
    raise OracleError(f"value iteration did not reach tol={tol} in {max_iters} iterations (residual {residual:.3e})")


def noiseless_q_iteration(model: TabularModel, k: int) -> list[np.ndarray]:
    """``[w_1, ..., w_k]`` with ``w_1 = 0`` and ``w_{t+1} = T(w_t)``."""
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    out = [np.zeros((model.num_states, model.num_actions))]
    for _ in range(k - 1):
        out.append(bellman_apply(model, out[-1]))
    return out


def _pairs(eval_pairs: Any) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(eval_pairs, tuple) and len(eval_pairs) == 2 and isinstance(eval_pairs[0], np.ndarray):
        return eval_pairs
    pairs = list(eval_pairs)
    return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs], dtype=np.int64)


def phi_sup_norm(x: np.ndarray, fm: FeatureMap, eval_pairs: Any) -> float:
    """``max |<phi(s, a), x>|`` over the given ``(state, action)`` pairs."""
    states, actions = _pairs(eval_pairs)
    if len(actions) == 0:
        raise ConfigurationError("phi_sup_norm needs a non-empty evaluation set")
    idx, val = fm.sparse(states, actions)
    return float(np.max(np.abs((np.asarray(x, dtype=float)[idx] * val).sum(axis=1))))


@dataclass(frozen=True)
class OracleDiagnostics:
    mu: np.ndarray  # shape (S, A)
    mu_min: float
    kappa: float
    iterations: int


def state_action_kernel(model: TabularModel, policy: BehaviorPolicy | np.ndarray) -> np.ndarray:
    """Markov kernel of ``(s_t, a_t)`` under the behaviour policy, shape ``(SA, SA)``."""
    S, A = model.num_states, model.num_actions
    pi = policy.state_table(S, TabularFeatures(S, A)) if isinstance(policy, BehaviorPolicy) else np.asarray(policy)
    return (model.P[:, :, :, None] * pi[None, None, :, :]).reshape(S * A, S * A)


def stationary_distribution(model: TabularModel, policy: BehaviorPolicy | np.ndarray,
                            tol: float = 1e-12, max_iters: int = 1_000_000) -> OracleDiagnostics:
    """Power iteration for the stationary law ``mu`` of ``(s, a)`` under ``policy``."""
    K = state_action_kernel(model, policy)
    n = K.shape[0]
    mu = np.full(n, 1.0 / n)
    for it in range(1, max_iters + 1):
        nxt = mu @ K
        nxt /= nxt.sum()
        if np.abs(nxt - mu).sum() <= tol:
            mu = nxt
            mu_min = float(mu.min())
            kappa = np.inf if mu_min == 0 else 1.0 / mu_min
            return OracleDiagnostics(mu.reshape(model.num_states, model.num_actions), mu_min, kappa, it)
        mu = nxt
    raise OracleError("power iteration did not converge; the behaviour chain may be periodic or reducible")


def lds_closed_form(A: np.ndarray, theta: np.ndarray, gamma: float) -> np.ndarray:
    """``w* = (I - gamma A^T)^{-1} theta``."""
    A = np.asarray(A, dtype=float)
    theta = np.asarray(theta, dtype=float)
    d = A.shape[0]
    if A.shape != (d, d) or theta.shape != (d,):
        raise ConfigurationError("A must be square and theta must match its size")
    if np.max(np.abs(np.linalg.eigvals(gamma * A))) >= 1:
        raise OracleError("spectral radius of gamma*A must be < 1")
    M = np.eye(d) - gamma * A.T
    if np.linalg.cond(M) > 1e12:
        raise OracleError("I - gamma A^T is ill-conditioned")
    return np.linalg.solve(M, theta)


def hypercontract_fixed_point(alpha: float, beta: float) -> float:
    """Unique non-negative fixed point of ``u -> alpha + beta * sqrt(u)``."""
    if alpha < 0 or beta < 0:
        raise ConfigurationError("alpha and beta must be non-negative")
    return ((beta + np.sqrt(beta * beta + 4.0 * alpha)) / 2.0) ** 2


# ---------------------------------------------------------------------------
# bias-variance identity for recorded Option I tabular loops


def _phi_rows(transitions, fm: TabularFeatures) -> np.ndarray:
    d = fm.dim
    rows = np.zeros((len(transitions), d))
    rows[np.arange(len(transitions)), fm.sparse(transitions.states, transitions.actions)[0][:, 0]] = 1.0
    return rows


def contraction_product(phis: np.ndarray, eta: float, a: int, b: int) -> np.ndarray:
    """``prod_{i=a}^{b} (I - eta phi_i phi_i^T)`` with ``i = a`` leftmost; identity when ``a > b`` (1-based)."""
    d = phis.shape[1]
    M = np.eye(d)
    for i in range(a, b + 1):
        p = phis[i - 1]
        M = M - eta * np.outer(M @ p, p)
    return M


def _check_record(record: LoopRecord) -> None:
    if record.w_next is None or not record.buffers:
        raise OracleError("loop record is incomplete")
    for br in record.buffers:
        B = len(br.transitions)
        if br.log.target is None:
            raise OracleError("identity needs a frozen target")
        if not np.array_equal(br.log.target, record.w_entry):
            raise OracleError("recorded target differs from the loop-entry weights")
        if br.log.steps != B or not np.array_equal(br.log.positions, np.arange(B, 0, -1)):
            raise OracleError("identity needs complete reverse-order passes")
        if np.any(br.transitions.next_terminal):
            raise OracleError("identity is stated for continuing data")


def bias_variance_terms(record: LoopRecord, model: TabularModel, eta: float) -> dict[str, np.ndarray]:
    """Both sides of ``eps_k = bias + variance`` for one recorded outer loop.

    ``eps_k = w^{k+1} - T(w^k)``; the bias is the product of the per-buffer
    contraction matrices applied to ``w^k - T(w^k)``, and the variance sums
    each buffer's noise term ``L^j`` pushed through the later buffers.
    """
    _check_record(record)
    fm = TabularFeatures(model.num_states, model.num_actions)
    w0 = np.asarray(record.w_entry, dtype=float)
    w_star = bellman_apply(model, w0.reshape(model.num_states, model.num_actions)).ravel()
    v_target = w0.reshape(model.num_states, model.num_actions).max(axis=1)
    expected_next = model.P @ v_target  # (S, A)

    Hs, Ls = [], []
    for br in record.buffers:
        tr = br.transitions
        phis = _phi_rows(tr, fm)
        s, a = tr.states.astype(int), tr.actions.astype(int)
        eps = (tr.rewards - model.R[s, a]
               + model.gamma * v_target[tr.next_states.astype(int)]
               - model.gamma * expected_next[s, a])
        B = len(tr)
        L = np.zeros(fm.dim)
        for i in range(1, B + 1):
            L += eps[i - 1] * (contraction_product(phis, eta, 1, i - 1) @ phis[i - 1])
        Hs.append(contraction_product(phis, eta, 1, B))
        Ls.append(eta * L)

    N = len(Hs)
    bias = w0 - w_star
    for H in Hs:  # H_N ... H_1 applied right to left
        bias = H @ bias
    variance = np.zeros(fm.dim)
    for j in range(N):
        v = Ls[j]
        for l in range(j + 1, N):
            v = Hs[l] @ v
        variance += v
    lhs = np.asarray(record.w_next, dtype=float) - w_star
    return {"lhs": lhs, "bias": bias, "variance": variance, "rhs": bias + variance}


def bias_variance_residual(record: LoopRecord, model: TabularModel, eta: float) -> float:
    """``||eps_k - (bias + variance)||_inf`` for one recorded Option I tabular loop."""
    t = bias_variance_terms(record, model, eta)
    return float(np.max(np.abs(t["lhs"] - t["rhs"])))


def visit_counts(record: LoopRecord, model: TabularModel) -> np.ndarray:
    """Occurrences of every ``(s, a)`` among the replayed transitions of the loop, shape ``(S, A)``."""
    counts = np.zeros((model.num_states, model.num_actions), dtype=np.int64)
    for br in record.buffers:
        np.add.at(counts, (br.transitions.states.astype(int), br.transitions.actions.astype(int)), 1)
    return counts


def tabular_bias_factor(record: LoopRecord, g: np.ndarray, s: int, a: int, model: TabularModel,
                        eta: float) -> tuple[float, float]:
    """``<e_sa, H_N ... H_1 g>`` and ``(1 - eta)^{N_k(s,a)} g(s,a)``."""
    fm = TabularFeatures(model.num_states, model.num_actions)
    v = np.asarray(g, dtype=float).ravel().copy()
    for br in record.buffers:
        phis = _phi_rows(br.transitions, fm)
        v = contraction_product(phis, eta, 1, len(phis)) @ v
    i = fm.index(s, a)
    n = visit_counts(record, model)[s, a]
    return float(v[i]), float((1.0 - eta) ** n * np.asarray(g, dtype=float).ravel()[i])
