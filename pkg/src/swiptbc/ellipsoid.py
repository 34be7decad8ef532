"""Dual minimization by the ellipsoid method.

The weighted sum-rate problem with harvest constraints is bounded above by
an auxiliary value g(lambda): the sum-rate maximum under the single
combined constraint sum_i Tr(A S_i) + Tr(A S_E) <= P_A, where
A = lam0 I - sum_j lam_j G_j and P_A = lam0 P_sum - sum_j lam_j E_j.
Minimizing g over lambda >= 0 closes the gap. g is finite only when A is
PSD, the null space of A sits inside the null space of H = sum h_i h_i^H,
and P_A >= 0; each condition yields a separating cut, and at interior
points the inner solution's constraint slacks form the objective cut.

g is invariant to positive scaling of lambda, so the search lives in a
ball around the unit box.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dualmac import ReducedBcSolution, solve_reduced_bc
from .errors import ContractViolationError, InternalInconsistencyError, RankToleranceError
from .linalg import DEFAULT_RANK_RTOL, hermitian_eig, range_null_split
from .model import Scenario

NULLSPACE_MARGIN = 1e-9  # strict inequality backoff on the unit-box scale
RANK_RTOL_LADDER = (DEFAULT_RANK_RTOL, 1e-7, 1e-6, 1e-5, 1e-4)
STALL_WINDOW = 50
STALL_RTOL = 1e-5


@dataclass(frozen=True)
class DualPoint:
    """Nonnegative multipliers (lam0 for power, lam_j per harvest target)."""

    lam0: float
    lam: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lam", np.asarray(self.lam, dtype=float))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([[self.lam0], self.lam])

    def constraint_matrix(self, grams: np.ndarray) -> np.ndarray:
        n = grams.shape[1]
        return self.lam0 * np.eye(n, dtype=complex) - np.tensordot(self.lam, grams, axes=1)

    def budget(self, sum_power: float, targets: np.ndarray) -> float:
        return self.lam0 * sum_power - float(self.lam @ targets)


@dataclass
class Cut:
    """One separating half-space: eliminate direction . (lam - center) > 0."""

    kind: str  # nonnegativity | nullspace | psd | budget | objective
    direction: np.ndarray
    index: int | None = None
    eigvector: np.ndarray | None = None
    g_value: float | None = None
    solution: ReducedBcSolution | None = None

    def __post_init__(self):
        if self.kind not in ("nonnegativity", "nullspace", "psd", "budget", "objective"):
            raise ContractViolationError(f"unknown cut kind {self.kind!r}")
        if not np.any(self.direction != 0.0) and self.kind != "objective":
            raise ContractViolationError("cut direction must be nonzero")


@dataclass
class EllipsoidState:
    center: np.ndarray
    shape: np.ndarray
    iteration: int = 0


@dataclass
class TraceRecord:
    iteration: int
    lam: tuple
    kind: str
    g_value: float | None


@dataclass
class DualContext:
    """Precomputed scenario quantities shared by every oracle call."""

    scenario: Scenario
    grams: np.ndarray            # (K_E, N, N) outer products g_j g_j^H
    channels_unit: np.ndarray    # (K_I, N) rows h_i / sigma
    targets_eff: np.ndarray      # E_j / zeta: effective targets at unit efficiency
    range_vectors: np.ndarray    # (t, N) top singular vectors of H
    nullspace_coeffs: np.ndarray # (t, K_E) entries |v_l^H g_j|^2


def make_context(scenario: Scenario) -> DualContext:
    h = scenario.id_channels
    hh = np.einsum("ia,ib->ab", h, np.conj(h))
    w, v = hermitian_eig(hh)
    top = float(w[0]) if w.size else 0.0
    t = int(np.sum(w > 1e-12 * max(top, 1e-300)))
    vecs = v[:, :t].T  # rows v_l
    coeffs = np.abs(np.conj(vecs) @ scenario.eh_channels.T) ** 2
    return DualContext(
        scenario=scenario,
        grams=scenario.gram_eh(),
        channels_unit=h / np.sqrt(scenario.noise_power),
        targets_eff=scenario.harvest_targets / scenario.harvest_efficiency,
        range_vectors=vecs,
        nullspace_coeffs=coeffs,
    )


def evaluate_dual(ctx: DualContext, lam_vector, tol: float | None = None):
    """Inner solve at a feasible multiplier point.

    Returns (g_value, ReducedBcSolution, objective_cut_direction). The cut
    direction stacks the power slack and the harvest surpluses of the inner
    solution's total information covariance.
    """
    lam_vector = np.asarray(lam_vector, dtype=float)
    point = DualPoint(lam0=float(lam_vector[0]), lam=lam_vector[1:])
    a = point.constraint_matrix(ctx.grams)
    budget = point.budget(ctx.scenario.sum_power, ctx.targets_eff)
    last_err = None
    for rtol in RANK_RTOL_LADDER:
        try:
            sol = solve_reduced_bc(
                a,
                ctx.channels_unit,
                ctx.scenario.weights,
                max(budget, 0.0),
                tol=tol,
                rank_rtol=rtol,
            )
            break
        except RankToleranceError as err:
            last_err = err
    else:
        raise last_err
    s_total = sol.covariances.sum(axis=0)
    power_slack = ctx.scenario.sum_power - float(np.real(np.trace(s_total)))
    harvest_surplus = (
        np.real(np.einsum("jab,ba->j", ctx.grams, s_total)) - ctx.targets_eff
    )
    direction = np.concatenate([[power_slack], harvest_surplus])
    return sol.wsr, sol, direction


def oracle_cut(ctx: DualContext, lam_vector, inner_tol: float | None = None) -> Cut:
    """Constraint or objective cut at a query point, checked in the paper's order.

    Nonnegativity first, then the strict null-space inequalities
    f_l = -lam0 + sum_j lam_j |v_l^H g_j|^2 <= -margin, then positive
    semidefiniteness of the combined constraint matrix via its dominant
    eigenvector, then the budget P_A >= 0; at a point passing all four the
    inner problem is solved and its slack vector is the objective cut.
    """
    lam_vector = np.asarray(lam_vector, dtype=float)
    k_e = len(ctx.targets_eff)
    n_dim = k_e + 1

    if np.any(lam_vector < 0.0):
        j = int(np.argmin(lam_vector))
        direction = np.zeros(n_dim)
        direction[j] = -1.0
        return Cut(kind="nonnegativity", direction=direction, index=j)

    lam0, lam = lam_vector[0], lam_vector[1:]
    f_vals = ctx.nullspace_coeffs @ lam - lam0
    if f_vals.size and float(np.max(f_vals)) >= -NULLSPACE_MARGIN:
        l_star = int(np.argmax(f_vals))
        direction = np.concatenate([[-1.0], ctx.nullspace_coeffs[l_star]])
        return Cut(kind="nullspace", direction=direction, index=l_star)

    point = DualPoint(lam0=lam0, lam=lam)
    f_mat = -point.constraint_matrix(ctx.grams)
    w, v = hermitian_eig(f_mat)
    scale = max(lam0, float(np.max(np.abs(w))) if w.size else 0.0, 1e-300)
    if float(w[0]) > 1e-13 * scale:
        z = v[:, 0]
        zg = np.real(np.einsum("a,jab,b->j", np.conj(z), ctx.grams, z))
        direction = np.concatenate([[-1.0], zg])
        return Cut(kind="psd", direction=direction, eigvector=z)

    budget = point.budget(ctx.scenario.sum_power, ctx.targets_eff)
    if budget < 0.0:
        direction = np.concatenate([[-ctx.scenario.sum_power], ctx.targets_eff])
        return Cut(kind="budget", direction=direction)

    g_value, sol, direction = evaluate_dual(ctx, lam_vector, tol=inner_tol)
    return Cut(kind="objective", direction=direction, g_value=g_value, solution=sol)


def initial_state(n_dim: int) -> EllipsoidState:
    """Ball containing the unit box, where some optimal ray must pass.

    g is positively homogeneous of degree zero in lambda (both sides of the
    combined constraint scale together), so any nonzero optimum can be
    rescaled into the box [0, 1]^n.
    """
    center = np.full(n_dim, 0.5)
    radius = 1.01 * np.sqrt(n_dim) / 2.0
    return EllipsoidState(center=center, shape=radius**2 * np.eye(n_dim))


def _slice_lambda(mu: np.ndarray) -> np.ndarray:
    """Multipliers on the normalization slice lam0 + sum lam_j = 1."""
    return np.concatenate([[1.0 - float(np.sum(mu))], mu])


def _slice_direction(a: np.ndarray) -> np.ndarray:
    """Cut direction mapped onto the slice coordinates (lam_1..lam_KE)."""
    return a[1:] - a[0]


def ellipsoid_update(state: EllipsoidState, cut: Cut) -> EllipsoidState:
    """Central-cut update: shrink to cover the kept half-ellipsoid."""
    a = np.asarray(cut.direction, dtype=float)
    n = len(state.center)
    if n < 2:
        raise ContractViolationError("ellipsoid update needs dimension >= 2")
    pa = state.shape @ a
    quad = float(a @ pa)
    if quad <= 0.0:
        raise InternalInconsistencyError("ellipsoid degenerated: cut has nonpositive norm")
    atil = pa / np.sqrt(quad)
    center = state.center - atil / (n + 1.0)
    shape = (n**2 / (n**2 - 1.0)) * (state.shape - (2.0 / (n + 1.0)) * np.outer(atil, atil))
    shape = (shape + shape.T) / 2.0
    return EllipsoidState(center=center, shape=shape, iteration=state.iteration + 1)


@dataclass
class DualResult:
    point: DualPoint
    g_value: float
    solution: ReducedBcSolution
    converged: bool
    status: str
    iterations: int
    evaluations: int
    trace: list = field(default_factory=list)


def minimize_g(
    scenario: Scenario,
    tol: float = 1e-6,
    max_iter: int | None = None,
    inner_tol: float | None = None,
    keep_trace: bool = True,
    stall_window: int = STALL_WINDOW,
    stall_rtol: float = STALL_RTOL,
    loc_rtol: float | None = None,
) -> DualResult:
    """Minimize g over nonnegative multipliers with the ellipsoid method.

    g is invariant to positive scaling of the multipliers, so the search
    runs on the normalization slice lam0 + sum_j lam_j = 1 in the slice
    coordinates (lam_1 .. lam_KE); cut directions map onto the slice by the
    chain rule, and for a single harvest constraint the one-dimensional
    search degenerates into plain bisection. Without the normalization the
    never-cut scale direction keeps the ellipsoid fat and ill conditioned.

    Stops when the objective cut's ellipsoid norm sqrt(d^T P d) falls below
    tol * (1 + |g_best|), when the incumbent stalls (relative improvement
    below stall_rtol over stall_window consecutive evaluations), on an
    exactly zero objective cut, or at max_iter (default 500 (K_E+1)^2,
    flagged non-converged). ``loc_rtol``, when set, adds a localization
    stop once the slice ellipsoid radius falls below it; the
    subgradient-norm stop alone can trigger while the multipliers are still
    poorly resolved, because the subgradient itself vanishes at an interior
    optimum. The incumbent g is nonincreasing and upper-bounds the
    problem's optimal weighted sum rate.
    """
    ctx = make_context(scenario)
    dim = scenario.n_eh
    if max_iter is None:
        max_iter = 500 * (dim + 1) ** 2

    if dim >= 2:
        center = np.full(dim, 0.5)
        radius = 1.01 * np.sqrt(dim) / 2.0
        state = EllipsoidState(center=center, shape=radius**2 * np.eye(dim))
        lo = hi = None
    else:
        lo, hi = -0.005, 1.005  # interval covering the slice segment [0, 1]
        state = None

    best_g = np.inf
    best_point = None
    best_solution = None
    stall = 0
    evaluations = 0
    trace: list = []
    status = "max-iter"
    converged = False

    it = 0
    while it < max_iter:
        it += 1
        mu = state.center.copy() if dim >= 2 else np.array([(lo + hi) / 2.0])
        lam = _slice_lambda(mu)
        cut = oracle_cut(ctx, lam, inner_tol=inner_tol)
        g_here = cut.g_value
        if keep_trace:
            trace.append(TraceRecord(iteration=it, lam=tuple(lam), kind=cut.kind, g_value=g_here))

        direction = _slice_direction(np.asarray(cut.direction, dtype=float))
        if cut.kind == "objective":
            evaluations += 1
            if not np.isfinite(best_g) or g_here < best_g - stall_rtol * (1.0 + abs(best_g)):
                stall = 0
            else:
                stall += 1
            if g_here < best_g:
                best_g = g_here
                best_point = lam
                best_solution = cut.solution
            if not np.any(cut.direction != 0.0) or not np.any(direction != 0.0):
                status = "zero-subgradient"
                converged = True
                break
            if dim >= 2:
                dpd = float(direction @ state.shape @ direction)
            else:
                dpd = (direction[0] * (hi - lo) / 2.0) ** 2
            if tol > 0.0 and np.sqrt(max(dpd, 0.0)) <= tol * (1.0 + abs(best_g)):
                status = "cut-norm"
                converged = True
                break
            if stall >= stall_window:
                status = "stalled"
                converged = True
                break
        elif not np.any(direction != 0.0):
            raise InternalInconsistencyError(
                f"{cut.kind} cut is normal to the scaling direction and cannot separate"
            )

        if dim >= 2:
            try:
                state = ellipsoid_update(state, Cut(kind=cut.kind, direction=direction))
            except InternalInconsistencyError:
                status = "degenerate"
                converged = best_point is not None
                break
            radius = np.sqrt(max(float(np.max(np.linalg.eigvalsh(state.shape))), 0.0))
        else:
            if direction[0] > 0:
                hi = float(mu[0])
            else:
                lo = float(mu[0])
            radius = (hi - lo) / 2.0
        if loc_rtol is not None and best_point is not None and radius <= loc_rtol:
            status = "localized"
            converged = True
            break

    if best_point is None:
        raise InternalInconsistencyError(
            "ellipsoid never found a point with finite g; is the scenario feasible?"
        )
    return DualResult(
        point=DualPoint(lam0=float(best_point[0]), lam=best_point[1:]),
        g_value=float(best_g),
        solution=best_solution,
        converged=converged,
        status=status,
        iterations=it,
        evaluations=evaluations,
        trace=trace,
    )
