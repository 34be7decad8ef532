"""Top-level solvers: the optimal algorithm and two separate-design baselines.

solve_optimal runs the dual ellipsoid search, reconstructs a primal
solution from the dual-optimal point (expanding the covariances through a
semidefinite program when the dual constraint matrix is rank deficient),
and certifies the result with the dual upper bound. solve_idsied bisects a
power split between an information-first design and a feasibility check
for the energy signal; solve_ehsied spends the minimum power on the energy
signal first. Region sweeps, a solution classifier, and a brute-force grid
oracle for tiny instances round out the module.
"""

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import sdp
from .dualmac import solve_reduced_bc
from .ellipsoid import evaluate_dual, make_context, minimize_g
from .errors import ContractViolationError, InfeasibleError, RankToleranceError
from .linalg import herm, range_null_split
from .model import (
    CovarianceSolution,
    Scenario,
    VerificationReport,
    dpc_rates,
    harvested_powers,
    verify_solution,
)

HARVEST_RTOL = 1e-8       # accepted relative harvest shortfall after an expansion
REP_HARVEST_RTOL = 2e-7   # accepted relative harvest shortfall of a representative solution
POWER_RTOL = 1e-8         # accepted relative power overrun before rescaling
EXPANSION_RTOL_LADDER = (1e-7, 1e-6, 1e-5, 1e-4)


@dataclass
class SolveReport:
    """One solver run: the solution plus certificates and diagnostics."""

    solution: CovarianceSolution
    algorithm: str
    case: str
    converged: bool
    wall_time: float
    verification: VerificationReport
    iterations: dict = field(default_factory=dict)
    dual_point: np.ndarray | None = None
    dual_bound: float | None = None
    duality_gap: float | None = None
    orthogonality: float = 0.0
    expansion_used: bool = False
    info_power: float | None = None      # P_I* (idsied)
    energy_power: float | None = None    # Tr(S_E') (ehsied)
    pre_expansion: CovarianceSolution | None = None  # representative before expansion
    split: object | None = None          # RangeNullSplit of the dual constraint matrix


@dataclass
class RegionPoint:
    t: float
    weights: tuple
    algorithm: str
    rates: np.ndarray
    wsr: float
    case: str
    failed: str | None = None


@dataclass
class OracleResult:
    wsr: float | None
    info_beam: np.ndarray | None = None
    info_power: float | None = None
    energy_beam: np.ndarray | None = None


def require_feasible(scenario: Scenario, tol: float = 1e-9):
    """Feasibility gate shared by all three solvers (energy signal alone)."""
    margin, sol = sdp.feasibility_margin(scenario)
    scale = float(np.max(scenario.harvest_targets))
    if margin < -tol * max(scale, 1e-12):
        raise InfeasibleError(
            f"harvest targets are infeasible: best uniform margin {margin:.3e} W",
            certificate={"margin_w": margin, "dual_multipliers": sol.dual_multipliers},
        )
    return margin


def classify_solution(scenario: Scenario, solution: CovarianceSolution, tol: float = 1e-6):
    """Label a solution and report how far the energy signal leaks into ID channels.

    Returns (label, orthogonality) with label one of info-zero (no
    information power), energy-zero (no dedicated energy signal), or
    both-active; orthogonality is max_i h_i^H S_E h_i / (|h_i|^2 Tr S_E).
    """
    p_info = float(np.real(np.trace(solution.info_covariances.sum(axis=0))))
    p_energy = float(np.real(np.trace(solution.energy_covariance)))
    budget = scenario.sum_power
    ortho = 0.0
    if p_energy > 0.0:
        for h in scenario.id_channels:
            leak = float(np.real(np.conj(h) @ solution.energy_covariance @ h))
            ortho = max(ortho, leak / (np.linalg.norm(h) ** 2 * p_energy))
    if p_info <= tol * budget:
        return "info-zero", ortho
    if p_energy <= tol * budget:
        return "energy-zero", ortho
    return "both-active", ortho


def _wsr_of(scenario: Scenario, covs, s_e, order):
    rates = dpc_rates(scenario, covs, order)
    return rates, float(scenario.weights @ rates)


def solve_optimal(
    scenario: Scenario,
    *,
    dual_tol: float = 1e-6,
    dual_max_iter: int | None = None,
    sdp_tol: float = 1e-9,
    keep_trace: bool = False,
) -> SolveReport:
    """Globally optimal weighted sum rate under harvest constraints.

    Minimizes the dual bound with the ellipsoid method, takes the
    representative inner solution at the best multiplier point, and, when
    the constraint matrix is rank deficient and that solution misses a
    harvest target, expands the covariances through the rank-minimizing
    semidefinite program. The gap between the achieved rate and the dual
    bound is reported.
    """
    t0 = time.perf_counter()
    require_feasible(scenario)

    n_dim = scenario.n_eh + 1
    base_iter = dual_max_iter if dual_max_iter is not None else 500 * n_dim**2
    attempts = [
        dict(tol=dual_tol, max_iter=base_iter),
        # precision rerun: disable the subgradient-norm and stall stops and
        # resolve the multiplier ray to a 1e-7 relative ellipsoid radius
        dict(tol=0.0, max_iter=2 * base_iter, stall_window=10**9, loc_rtol=3e-8),
    ]
    dual = None
    recon = None
    best_bound = np.inf
    for params in attempts:
        dual = minimize_g(scenario, keep_trace=keep_trace, **params)
        best_bound = min(best_bound, dual.g_value)
        recon = _reconstruct_primal(scenario, dual, sdp_tol)
        if recon["ok"]:
            break
    covs, s_e, order = recon["covs"], recon["s_e"], recon["order"]
    expansion_used = recon["expansion_used"]
    expansion_margin = recon["margin"]
    converged = dual.converged and recon["ok"]

    pre_expansion = None
    if expansion_used:
        pre_rates, pre_wsr = _wsr_of(scenario, recon["pre_covs"], np.zeros_like(s_e), order)
        pre_expansion = CovarianceSolution(
            info_covariances=recon["pre_covs"],
            energy_covariance=np.zeros_like(s_e),
            encoding_order=order,
            rates=pre_rates,
            wsr=pre_wsr,
        )

    rates, wsr = _wsr_of(scenario, covs, s_e, order)
    solution = CovarianceSolution(
        info_covariances=covs,
        energy_covariance=s_e,
        encoding_order=order,
        rates=rates,
        wsr=wsr,
    )
    case, ortho = classify_solution(scenario, solution)
    verification = verify_solution(scenario, solution)
    gap = best_bound - wsr
    return SolveReport(
        solution=solution,
        algorithm="optimal",
        case=case,
        converged=converged and not verification.violations,
        wall_time=time.perf_counter() - t0,
        verification=verification,
        iterations={
            "ellipsoid": dual.iterations,
            "inner_evaluations": dual.evaluations,
            "dual_status": dual.status,
            "expansion_margin": expansion_margin,
        },
        dual_point=dual.point.vector,
        dual_bound=best_bound,
        duality_gap=gap,
        orthogonality=ortho,
        expansion_used=expansion_used,
        pre_expansion=pre_expansion,
        split=recon["split"],
    )


def _reconstruct_primal(scenario: Scenario, dual, sdp_tol: float) -> dict:
    """Primal covariances from a dual point; expansion when rank deficient.

    Returns a dict with covs, s_e, order, expansion_used, margin, and ok
    (harvest shortfall within HARVEST_RTOL and power within budget).
    """
    n = scenario.n_tx
    covs = np.array(dual.solution.covariances)
    s_e = np.zeros((n, n), dtype=complex)
    order = dual.solution.encoding_order
    split = dual.solution.split
    targets = scenario.harvest_targets

    def ok_for(c, e, rtol=REP_HARVEST_RTOL):
        q = harvested_powers(scenario, c, e)
        shortfall = float(np.max((targets - q) / targets))
        total = float(np.real(np.trace(c.sum(axis=0) + e)))
        return shortfall <= rtol and total <= scenario.sum_power * (1.0 + POWER_RTOL)

    total = float(np.real(np.trace(covs.sum(axis=0))))
    if total > scenario.sum_power:
        scaled = covs * (scenario.sum_power / total)
        if ok_for(scaled, s_e):
            return {"covs": scaled, "s_e": s_e, "order": order, "split": split,
                    "expansion_used": False, "margin": None, "ok": True}
    if ok_for(covs, s_e):
        return {"covs": covs, "s_e": s_e, "order": order, "split": split,
                "expansion_used": False, "margin": None, "ok": True}

    # dedicated energy and coupling blocks live in the null space of the
    # dual constraint matrix; coarsen the split if round-off hid it
    ctx = make_context(scenario)
    a_mat = dual.point.constraint_matrix(ctx.grams)
    budget = max(dual.point.budget(scenario.sum_power, ctx.targets_eff), 0.0)
    for rtol in EXPANSION_RTOL_LADDER:
        if split.rank < n:
            break
        try:
            candidate = solve_reduced_bc(
                a_mat, ctx.channels_unit, scenario.weights, budget, rank_rtol=rtol
            )
        except RankToleranceError:
            continue
        if candidate.split.rank < n:
            covs = np.array(candidate.covariances)
            order = candidate.encoding_order
            split = candidate.split
    if split.rank == n:
        return {"covs": covs, "s_e": s_e, "order": order, "split": split,
                "expansion_used": False, "margin": None, "ok": False}

    b_stars = [herm(split.u1) @ c @ split.u1 for c in covs]
    covs2, s_e2, margin, _ = sdp.solve_expansion(scenario, split, b_stars, tol=sdp_tol)
    return {"covs": covs2, "s_e": s_e2, "order": order, "split": split,
            "expansion_used": True, "margin": margin, "pre_covs": covs,
            "ok": ok_for(covs2, s_e2, rtol=HARVEST_RTOL)}


def _unconstrained_wsrmax(scenario: Scenario, budget: float, weights=None):
    """Plain weighted sum-rate maximization under the sum-power budget."""
    n = scenario.n_tx
    w = scenario.weights if weights is None else np.asarray(weights, dtype=float)
    h_unit = scenario.id_channels / np.sqrt(scenario.noise_power)
    return solve_reduced_bc(np.eye(n, dtype=complex), h_unit, w, budget)


def solve_idsied(
    scenario: Scenario,
    *,
    delta: float | None = None,
    sdp_tol: float = 1e-9,
) -> SolveReport:
    """Information-first separate design with a bisected power split.

    The information covariances take P_I of the budget through plain
    weighted sum-rate maximization; the rest must cover the harvest
    shortfalls with a dedicated energy covariance, checked by a
    feasibility program. Bisection finds the largest admissible P_I; the
    returned solution is re-solved at that split.
    """
    t0 = time.perf_counter()
    require_feasible(scenario)
    p_sum = scenario.sum_power
    if delta is None:
        delta = 1e-4 * p_sum
    margin_floor = -1e-7 * float(np.max(scenario.harvest_targets))

    def try_split(p_info):
        inner = _unconstrained_wsrmax(scenario, p_info)
        prob = sdp.separate_energy_problem(scenario, inner.covariances, p_sum - p_info)
        sol = sdp.solve_sdp(prob, tol=sdp_tol)
        feasible = sol.status == sdp.STATUS_OPTIMAL and sol.objective >= margin_floor
        return feasible, inner, sol

    trace = []
    feasible_top, inner_top, sdp_top = try_split(p_sum)
    trace.append((p_sum, feasible_top))
    if feasible_top:
        p_star, inner, energy_sol = p_sum, inner_top, sdp_top
    else:
        lo, hi = 0.0, p_sum
        inner, energy_sol = None, None
        while hi - lo >= delta:
            mid = 0.5 * (lo + hi)
            feasible, inner_mid, sdp_mid = try_split(mid)
            trace.append((mid, feasible))
            if feasible:
                lo, inner, energy_sol = mid, inner_mid, sdp_mid
            else:
                hi = mid
        p_star = lo
        if inner is None:
            feasible, inner, energy_sol = try_split(p_star)
            trace.append((p_star, feasible))

    covs = np.array(inner.covariances)
    s_e = energy_sol.blocks[0]
    rates, wsr = _wsr_of(scenario, covs, s_e, inner.encoding_order)
    solution = CovarianceSolution(
        info_covariances=covs,
        energy_covariance=s_e,
        encoding_order=inner.encoding_order,
        rates=rates,
        wsr=wsr,
    )
    case, ortho = classify_solution(scenario, solution)
    verification = verify_solution(scenario, solution)
    return SolveReport(
        solution=solution,
        algorithm="idsied",
        case=case,
        converged=not verification.violations,
        wall_time=time.perf_counter() - t0,
        verification=verification,
        iterations={"bisection_steps": len(trace), "trace": trace},
        orthogonality=ortho,
        info_power=p_star,
    )


def solve_ehsied(scenario: Scenario, *, sdp_tol: float = 1e-9) -> SolveReport:
    """Energy-first separate design: minimum-power energy signal, rest to data."""
    t0 = time.perf_counter()
    require_feasible(scenario)
    sol = sdp.solve_sdp(sdp.min_power_energy_problem(scenario), tol=sdp_tol)
    if sol.status != sdp.STATUS_OPTIMAL:
        raise InfeasibleError(f"minimum-power energy program failed: {sol.status}")
    s_e = sol.blocks[0]
    p_energy = float(np.real(np.trace(s_e)))
    budget = max(scenario.sum_power - p_energy, 0.0)
    inner = _unconstrained_wsrmax(scenario, budget)
    covs = np.array(inner.covariances)
    rates, wsr = _wsr_of(scenario, covs, s_e, inner.encoding_order)
    solution = CovarianceSolution(
        info_covariances=covs,
        energy_covariance=s_e,
        encoding_order=inner.encoding_order,
        rates=rates,
        wsr=wsr,
    )
    case, ortho = classify_solution(scenario, solution)
    verification = verify_solution(scenario, solution)
    return SolveReport(
        solution=solution,
        algorithm="ehsied",
        case=case,
        converged=not verification.violations,
        wall_time=time.perf_counter() - t0,
        verification=verification,
        orthogonality=ortho,
        energy_power=p_energy,
    )


ALGORITHMS = {
    "optimal": solve_optimal,
    "idsied": solve_idsied,
    "ehsied": solve_ehsied,
}


def _max_workers() -> int:
    env = os.environ.get("SWIPT_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def _region_point(scenario: Scenario, t: float, weights, algorithm: str) -> RegionPoint:
    weights = np.asarray(weights, dtype=float)
    try:
        if algorithm == "unconstrained":
            active = weights > 0.0
            rates = np.zeros(len(weights))
            sub = Scenario(
                id_channels=scenario.id_channels[active],
                eh_channels=scenario.eh_channels,
                noise_power=scenario.noise_power,
                sum_power=scenario.sum_power,
                harvest_targets=scenario.harvest_targets,
                weights=weights[active],
                harvest_efficiency=scenario.harvest_efficiency,
            )
            inner = _unconstrained_wsrmax(sub, scenario.sum_power)
            rates[active] = inner.rates
            return RegionPoint(
                t=t, weights=tuple(weights), algorithm=algorithm,
                rates=rates, wsr=float(weights @ rates), case="energy-zero",
            )
        active = weights > 0.0
        if not np.all(active):
            sub = Scenario(
                id_channels=scenario.id_channels[active],
                eh_channels=scenario.eh_channels,
                noise_power=scenario.noise_power,
                sum_power=scenario.sum_power,
                harvest_targets=scenario.harvest_targets,
                weights=weights[active],
                harvest_efficiency=scenario.harvest_efficiency,
            )
            report = ALGORITHMS[algorithm](sub)
            rates = np.zeros(len(weights))
            rates[active] = report.solution.rates
            return RegionPoint(
                t=t, weights=tuple(weights), algorithm=algorithm,
                rates=rates, wsr=float(weights @ rates), case=report.case,
            )
        report = ALGORITHMS[algorithm](scenario.with_weights(weights))
        return RegionPoint(
            t=t, weights=tuple(weights), algorithm=algorithm,
            rates=np.array(report.solution.rates), wsr=report.solution.wsr, case=report.case,
        )
    except Exception as err:  # per-point failures are recorded, sweep continues
        return RegionPoint(
            t=t, weights=tuple(weights), algorithm=algorithm,
            rates=np.full(len(weights), np.nan), wsr=np.nan, case="failed", failed=str(err),
        )


def capacity_region(
    scenario: Scenario,
    weight_grid=None,
    algorithms=("optimal",),
    include_baseline: bool = False,
) -> list:
    """Rate-region sweep over weight vectors (t, 1-t) for two ID receivers.

    ``weight_grid`` is either an integer grid size (default 41 values of t
    in [0, 1]), an iterable of t values (two ID receivers), or an explicit
    list of weight vectors for general K_I. Zero-weight receivers are
    excluded from the solve and deterministically assigned zero covariance.
    Points run independently (SWIPT_THREADS caps the worker count) and are
    returned in grid-major order.
    """
    if weight_grid is None:
        weight_grid = 41
    if isinstance(weight_grid, int):
        if scenario.n_id != 2:
            raise ContractViolationError("the default t-grid needs exactly two ID receivers")
        ts = np.linspace(0.0, 1.0, weight_grid)
        weight_list = [(float(t), np.array([t, 1.0 - t])) for t in ts]
    else:
        weight_grid = list(weight_grid)
        if weight_grid and np.isscalar(weight_grid[0]):
            if scenario.n_id != 2:
                raise ContractViolationError("t values need exactly two ID receivers")
            weight_list = [(float(t), np.array([t, 1.0 - t])) for t in weight_grid]
        else:
            weight_list = [
                (float(i), np.asarray(w, dtype=float)) for i, w in enumerate(weight_grid)
            ]

    algos = list(algorithms) + (["unconstrained"] if include_baseline else [])
    tasks = [(t, w, algo) for (t, w) in weight_list for algo in algos]
    workers = min(_max_workers(), max(len(tasks), 1))
    if workers == 1:
        return [_region_point(scenario, t, w, algo) for (t, w, algo) in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda args: _region_point(scenario, *args), tasks))


def brute_force_oracle(scenario: Scenario, grid_resolution: int = 48) -> OracleResult:
    """Certified lower bound on the optimal weighted sum rate of a tiny instance.

    Exhaustive grid over rank-one information beams (cos t, sin t e^{i phi}),
    an information/energy power split, and rank-one energy beams from the
    same gridded family. Guarded to two antennas, one ID receiver, and at
    most two EH receivers.
    """
    if scenario.n_tx != 2 or scenario.n_id != 1 or scenario.n_eh > 2:
        raise ContractViolationError("oracle guard: needs N=2, K_I=1, K_E<=2")
    res = int(grid_resolution)
    ts = np.linspace(0.0, np.pi / 2.0, res)
    phis = np.linspace(0.0, 2.0 * np.pi, 2 * res, endpoint=False)
    tt, pp = np.meshgrid(ts, phis, indexing="ij")
    beams = np.stack(
        [np.cos(tt).ravel(), (np.sin(tt) * np.exp(1j * pp)).ravel()],
        axis=1,
    )
    h = scenario.id_channels[0]
    zeta = scenario.harvest_efficiency
    p_sum = scenario.sum_power
    powers = np.linspace(0.0, p_sum, 2 * res + 1)

    gain_h = np.abs(beams @ np.conj(h)) ** 2                       # (nb,)
    gain_g = np.abs(beams @ np.conj(scenario.eh_channels.T)) ** 2  # (nb, K_E)
    alpha = float(scenario.weights[0])
    rate = alpha * np.log2(1.0 + np.outer(gain_h, powers) / scenario.noise_power)

    # shortfall each EH receiver needs from the energy beam, per (beam, power)
    need = (
        scenario.harvest_targets[None, None, :] / zeta
        - gain_g[:, None, :] * powers[None, :, None]
    )
    need = np.maximum(need, 0.0)
    p_e = (p_sum - powers)[None, :, None]

    if scenario.n_eh == 1:
        top = float(np.max(gain_g[:, 0]))
        feasible = need[:, :, 0] <= p_e[:, :, 0] * top + 1e-18
    else:
        x, yv = gain_g[:, 0], gain_g[:, 1]
        idx = np.argsort(-x)
        xs, ys = x[idx], yv[idx]
        suffix_y = np.maximum.accumulate(ys)  # best y among beams with x >= xs[k]
        with np.errstate(divide="ignore", invalid="ignore"):
            cx = np.where(p_e[:, :, 0] > 0, need[:, :, 0] / p_e[:, :, 0], np.inf)
            cy = np.where(p_e[:, :, 0] > 0, need[:, :, 1] / p_e[:, :, 0], np.inf)
        cx = np.where(need[:, :, 0] <= 0, 0.0, cx)
        cy = np.where(need[:, :, 1] <= 0, 0.0, cy)
        # first sorted index whose x-gain reaches cx (xs descending)
        pos = np.searchsorted(-xs, -cx.ravel(), side="right") - 1
        ok = pos >= 0
        best_y = np.where(ok, suffix_y[np.clip(pos, 0, len(xs) - 1)], -np.inf)
        feasible = (best_y.reshape(cx.shape) >= cy) | ((cx <= 0) & (cy <= 0))

    rate = np.where(feasible, rate, -np.inf)
    if not np.any(np.isfinite(rate)):
        return OracleResult(wsr=None)
    flat = int(np.argmax(rate))
    bi, pi = np.unravel_index(flat, rate.shape)
    return OracleResult(
        wsr=float(rate[bi, pi]),
        info_beam=beams[bi],
        info_power=float(powers[pi]),
    )
