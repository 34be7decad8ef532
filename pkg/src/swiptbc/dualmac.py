"""Weighted sum-rate maximization under one covariance constraint, by duality.

Solves max sum_i alpha_i r_i over PSD downlink covariances {S_i} subject to
sum_i Tr(A S_i) <= P_A, with dirty-paper coding rates. The constraint
matrix A may be rank deficient: the problem is first reduced onto the
range of A (the null-space component of the covariances is free and is set
to zero here), then solved through the dual multiple-access channel whose
noise covariance is the reduced constraint matrix, and finally mapped back
to downlink covariances that achieve the same per-user rates.

Inputs are unit-noise channels (h / sigma); the caller owns that
normalization, and rates are invariant under it.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    ContractViolationError,
    InternalInconsistencyError,
    RankToleranceError,
)
from .linalg import DEFAULT_RANK_RTOL, RangeNullSplit, check_hermitian, herm, range_null_split

LN2 = np.log(2.0)
MAX_CONDITION = 1e12


@dataclass(frozen=True)
class ReducedProblem:
    """Full-rank reduced instance: noise covariance a_hat, channels h_hat.

    Rows of h_hat and entries of weights are sorted by descending weight;
    ``order`` maps sorted position -> original user index.
    """

    a_hat: np.ndarray
    h_hat: np.ndarray
    weights: np.ndarray
    budget: float
    order: np.ndarray

    def __post_init__(self):
        a = check_hermitian(self.a_hat, rtol=1e-10)
        w = np.linalg.eigvalsh(a)
        if w[0] <= 0 or w[-1] / w[0] > MAX_CONDITION:
            raise RankToleranceError(
                f"reduced constraint matrix is numerically singular (cond {w[-1] / max(w[0], 1e-300):.2e}); "
                "re-split with a coarser rank tolerance"
            )
        alphas = np.asarray(self.weights, dtype=float)
        if np.any(np.diff(alphas) > 0):
            raise ContractViolationError("weights must be sorted descending")
        if self.budget < 0:
            raise ContractViolationError("budget must be nonnegative")

    @property
    def n_users(self) -> int:
        return self.h_hat.shape[0]

    @property
    def dim(self) -> int:
        return self.a_hat.shape[0]


def reduce_problem(split: RangeNullSplit, a: np.ndarray, channels, weights, budget: float) -> ReducedProblem:
    """Project the constraint matrix and channels onto the range of A.

    ``channels`` rows are unit-noise h_i. Users are sorted by descending
    weight (stable in the original index), which fixes the decoding order
    of the dual multiple-access channel.
    """
    h = np.atleast_2d(np.asarray(channels, dtype=complex))
    alphas = np.asarray(weights, dtype=float)
    order = np.argsort(-alphas, kind="stable")
    a_hat = herm(split.u1) @ np.asarray(a, dtype=complex) @ split.u1
    a_hat = (a_hat + herm(a_hat)) / 2.0
    h_hat = h[order] @ np.conj(split.u1)
    return ReducedProblem(a_hat=a_hat, h_hat=h_hat, weights=alphas[order], budget=float(budget), order=order)


def _cumulative_grams(rp: ReducedProblem, p: np.ndarray):
    """M_i = a_hat + sum_{k<=i} p_k h_k h_k^H for i = 0..K (M_0 = a_hat)."""
    mats = [rp.a_hat]
    m = rp.a_hat
    for k in range(rp.n_users):
        m = m + p[k] * np.outer(rp.h_hat[k], np.conj(rp.h_hat[k]))
        mats.append(m)
    return mats


def mac_objective(rp: ReducedProblem, p) -> float:
    """Weighted sum of uplink rates at power vector p, in bits.

    Telescoped form: sum_i (alpha_i - alpha_{i+1}) log2 det M_i minus
    alpha_1 log2 det M_0, which equals sum_i alpha_i r_i^(mac) identically.
    """
    p = np.asarray(p, dtype=float)
    mats = _cumulative_grams(rp, p)
    logdets = np.array([np.linalg.slogdet(m)[1] for m in mats])
    # beta_i = alpha_i - alpha_{i+1} with alpha_{K+1} = 0
    beta = rp.weights - np.append(rp.weights[1:], 0.0)
    val = float(beta @ logdets[1:]) - float(rp.weights[0] * logdets[0])
    return val / LN2


def mac_rates(rp: ReducedProblem, p) -> np.ndarray:
    """Per-user uplink rates log2 det(M_i) - log2 det(M_{i-1}), sorted order."""
    mats = _cumulative_grams(rp, np.asarray(p, dtype=float))
    logdets = np.array([np.linalg.slogdet(m)[1] for m in mats]) / LN2
    return np.maximum(np.diff(logdets), 0.0)


def _mac_gradient(rp: ReducedProblem, p: np.ndarray) -> np.ndarray:
    beta = rp.weights - np.append(rp.weights[1:], 0.0)
    mats = _cumulative_grams(rp, p)
    k = rp.n_users
    grad = np.zeros(k)
    suffix = np.zeros((k, k))  # suffix[i, j] = h_j^H M_i^{-1} h_j for j <= i
    for i in range(k):
        sol = np.linalg.solve(mats[i + 1], rp.h_hat[: i + 1].T)  # columns M_i^{-1} h_j
        suffix[i, : i + 1] = np.real(np.einsum("ja,aj->j", np.conj(rp.h_hat[: i + 1]), sol))
    for j in range(k):
        grad[j] = float(beta[j:] @ suffix[j:, j]) / LN2
    return grad


def _mac_hessian(rp: ReducedProblem, p: np.ndarray) -> np.ndarray:
    beta = rp.weights - np.append(rp.weights[1:], 0.0)
    mats = _cumulative_grams(rp, p)
    k = rp.n_users
    hess = np.zeros((k, k))
    for i in range(k):
        if beta[i] == 0.0:
            continue
        sol = np.linalg.solve(mats[i + 1], rp.h_hat[: i + 1].T)  # columns M_i^{-1} h_l
        cross = np.abs(np.conj(rp.h_hat[: i + 1]) @ sol) ** 2  # |h_j^H M_i^{-1} h_l|^2
        hess[: i + 1, : i + 1] -= beta[i] * cross
    return hess / LN2


def _project_budget(v: np.ndarray, budget: float) -> np.ndarray:
    """Euclidean projection onto {p >= 0, sum p <= budget}."""
    clipped = np.maximum(v, 0.0)
    if clipped.sum() <= budget:
        return clipped
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - budget
    idx = np.arange(1, len(v) + 1)
    valid = u - css / idx > 0
    rho = int(np.max(np.nonzero(valid)[0])) + 1
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def solve_mac_wsr(rp: ReducedProblem, tol: float | None = None, max_iter: int = 4000):
    """Maximize the weighted sum of uplink rates over the power simplex.

    Projected gradient ascent with Barzilai-Borwein steps and backtracking,
    followed by an active-set Newton polish. Returns (p, rates) with the
    projected-gradient stationarity residual below tol
    (default 1e-9 * max(1, budget)).
    """
    if tol is None:
        tol = 1e-9 * max(1.0, rp.budget)
    k = rp.n_users
    if rp.budget <= 0.0:
        return np.zeros(k), np.zeros(k)
    if k == 1:
        p = np.array([rp.budget])
        return p, mac_rates(rp, p)

    p = np.full(k, rp.budget / k)
    f = mac_objective(rp, p)
    g = _mac_gradient(rp, p)
    step = 1.0 / max(np.linalg.norm(g), 1e-12)
    for _ in range(max_iter):
        resid = np.linalg.norm(p - _project_budget(p + g, rp.budget), np.inf)
        if resid <= max(tol, 1e-12):
            break
        trial_step = step
        for _ in range(60):
            cand = _project_budget(p + trial_step * g, rp.budget)
            delta = cand - p
            fc = mac_objective(rp, cand)
            if fc >= f + 1e-4 * float(g @ delta) or np.linalg.norm(delta) < 1e-16:
                break
            trial_step *= 0.5
        g_new = _mac_gradient(rp, cand)
        dp, dg = cand - p, g_new - g
        denom = float(dp @ dg)
        step = abs(float(dp @ dp) / denom) if abs(denom) > 1e-300 else trial_step * 2.0
        step = float(np.clip(step, 1e-14, 1e14))
        p, f, g = cand, fc, g_new
        if resid <= 1e-6 * max(1.0, rp.budget):
            p_new = _newton_polish(rp, p, tol)
            if p_new is not None:
                f_new = mac_objective(rp, p_new)
                if f_new >= f - 1e-12 * (1 + abs(f)):
                    p, f, g = p_new, f_new, _mac_gradient(rp, p_new)
    resid = np.linalg.norm(p - _project_budget(p + _mac_gradient(rp, p), rp.budget), np.inf)
    if resid > max(tol, 1e-12) * 10:
        raise InternalInconsistencyError(
            f"uplink power optimization stalled at stationarity residual {resid:.2e}"
        )
    return p, mac_rates(rp, p)


def _newton_polish(rp: ReducedProblem, p: np.ndarray, tol: float, rounds: int = 30):
    """Active-set Newton refinement; returns an improved p or None."""
    k = rp.n_users
    p = p.copy()
    eps_act = 1e-12 * max(1.0, rp.budget)
    for _ in range(rounds):
        g = _mac_gradient(rp, p)
        resid = np.linalg.norm(p - _project_budget(p + g, rp.budget), np.inf)
        if resid <= tol * 0.1:
            return p
        free = p > eps_act
        # allow a zero coordinate to re-enter if its gradient pushes inward
        lam = 0.0
        budget_active = p.sum() >= rp.budget - eps_act
        if budget_active:
            lam = np.max(g[free]) if np.any(free) else 0.0
        free = free | (g > lam + tol)
        if not np.any(free):
            return p
        idx = np.nonzero(free)[0]
        h = _mac_hessian(rp, p)[np.ix_(idx, idx)]
        gf = g[idx]
        try:
            if budget_active:
                nfree = len(idx)
                kkt = np.zeros((nfree + 1, nfree + 1))
                kkt[:nfree, :nfree] = h
                kkt[:nfree, nfree] = -1.0
                kkt[nfree, :nfree] = 1.0
                rhs = np.concatenate([-gf, [rp.budget - p.sum()]])
                sol = np.linalg.solve(kkt, rhs)
                dp_free = sol[:nfree]
            else:
                dp_free = np.linalg.solve(h - 1e-14 * np.eye(len(idx)), -gf)
        except np.linalg.LinAlgError:
            return None
        direction = np.zeros(k)
        direction[idx] = dp_free
        f0 = mac_objective(rp, p)
        t = 1.0
        improved = None
        for _ in range(40):
            cand = _project_budget(p + t * direction, rp.budget)
            if mac_objective(rp, cand) >= f0 - 1e-13 * (1 + abs(f0)):
                improved = cand
                break
            t *= 0.5
        if improved is None or np.linalg.norm(improved - p, np.inf) < 1e-17:
            return p
        p = improved
    return p


def mmse_receivers(rp: ReducedProblem, p) -> np.ndarray:
    """Unit-norm uplink receive vectors v_i, rows of the returned array.

    v_i is the normalized solution of (a_hat + sum_{k<i} p_k h_k h_k^H) v = h_i.
    """
    p = np.asarray(p, dtype=float)
    if np.any(p < -1e-12):
        raise ContractViolationError("uplink powers must be nonnegative")
    mats = _cumulative_grams(rp, p)
    v = np.zeros_like(rp.h_hat)
    for i in range(rp.n_users):
        vi = np.linalg.solve(mats[i], rp.h_hat[i])
        norm = np.linalg.norm(vi)
        if norm == 0:
            raise InternalInconsistencyError("MMSE receiver collapsed to zero")
        v[i] = vi / norm
    return v


def mac_to_bc(rp: ReducedProblem, rates, receivers) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map uplink rates and receivers to downlink powers and covariances.

    Back-substitutes the per-user downlink powers q_i from the last-encoded
    user upward so each downlink rate equals its uplink counterpart, then
    forms beamformers w_i = sqrt(q_i) v_i and covariances w_i w_i^H.
    Returns (q, w, covariances) in sorted-user order.
    """
    rates = np.asarray(rates, dtype=float)
    v = np.asarray(receivers, dtype=complex)
    k = rp.n_users
    cross = np.abs(rp.h_hat @ herm(v)) ** 2  # cross[i, k] = |h_i^H v_k|^2
    q = np.zeros(k)
    for i in range(k - 1, -1, -1):
        if rates[i] <= 0.0:
            q[i] = 0.0
            continue
        gain = cross[i, i]
        if gain <= 0.0:
            raise InternalInconsistencyError(
                "downlink mapping needs |h_i^H v_i| > 0 for a user with positive rate"
            )
        interference = float(cross[i, i + 1 :] @ q[i + 1 :]) + 1.0
        q[i] = (2.0 ** rates[i] - 1.0) / gain * interference
    w = np.sqrt(q)[:, None] * v
    covs = np.einsum("ia,ib->iab", w, np.conj(w))
    return q, w, covs


@dataclass(frozen=True)
class ReducedBcSolution:
    """Downlink solution of the single-constraint weighted sum-rate problem."""

    covariances: np.ndarray     # (K_I, N, N), original user order
    rates: np.ndarray           # (K_I,), original user order
    wsr: float
    encoding_order: tuple       # original indices, first encoded first
    mac_powers: np.ndarray      # sorted order
    downlink_powers: np.ndarray # sorted order
    split: RangeNullSplit


def solve_reduced_bc(
    a: np.ndarray,
    channels,
    weights,
    budget: float,
    tol: float | None = None,
    rank_rtol: float = DEFAULT_RANK_RTOL,
) -> ReducedBcSolution:
    """Solve the downlink problem max sum alpha_i r_i, sum Tr(A S_i) <= P_A.

    ``channels`` rows are unit-noise h_i. The null-space component of every
    covariance is set to zero (the representative optimizer); rates and the
    objective are unaffected by that choice when the null space of A is
    orthogonal to all channels.
    """
    h = np.atleast_2d(np.asarray(channels, dtype=complex))
    alphas = np.asarray(weights, dtype=float)
    if np.any(alphas <= 0):
        raise ContractViolationError("weights must be positive")
    n = h.shape[1]
    split = range_null_split(a, rank_rtol)
    if split.rank == 0:
        raise RankToleranceError("constraint matrix is numerically zero")
    rp = reduce_problem(split, a, h, alphas, budget)
    k = rp.n_users
    if budget <= 0.0:
        covs = np.zeros((k, n, n), dtype=complex)
        return ReducedBcSolution(
            covariances=covs,
            rates=np.zeros(k),
            wsr=0.0,
            encoding_order=tuple(int(i) for i in rp.order),
            mac_powers=np.zeros(k),
            downlink_powers=np.zeros(k),
            split=split,
        )
    p, rates_sorted = solve_mac_wsr(rp, tol=tol)
    v = mmse_receivers(rp, p)
    q, _, covs_reduced = mac_to_bc(rp, rates_sorted, v)
    covs = np.zeros((k, n, n), dtype=complex)
    rates = np.zeros(k)
    for pos, user in enumerate(rp.order):
        lifted = split.u1 @ covs_reduced[pos] @ herm(split.u1)
        covs[user] = (lifted + herm(lifted)) / 2.0
        rates[user] = rates_sorted[pos]
    wsr = float(alphas @ rates)
    return ReducedBcSolution(
        covariances=covs,
        rates=rates,
        wsr=wsr,
        encoding_order=tuple(int(i) for i in rp.order),
        mac_powers=p,
        downlink_powers=q,
        split=split,
    )
