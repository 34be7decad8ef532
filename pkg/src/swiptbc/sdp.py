"""Small dense semidefinite programs and their interior-point backend.

Problems are stated over complex Hermitian matrix blocks with linear
functionals Re Tr(C X) and <=, >=, == relations. The backend is a
homogeneous self-dual primal-dual path-following method with Mehrotra
predictor-corrector steps, run in real arithmetic on the symmetric
embedding of every block. Problems here are tiny (total dimension tens),
so everything is dense and deterministic.

Builders cover the four programs the solvers need: the harvest
feasibility check, the largest common harvest target, the minimum-power
energy covariance, and the covariance expansion that restores primal
feasibility when the dual-optimal constraint matrix is rank deficient.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ContractViolationError, InternalInconsistencyError
from .linalg import (
    check_hermitian,
    complex_to_real_embedding,
    herm,
    hermitian_eig,
    real_embedding_to_complex,
)

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_MAX_ITER = "max-iter"


@dataclass
class SdpConstraint:
    """sum over terms (block, coeff) of Re Tr(coeff @ X_block)  <relation>  bound."""

    terms: list
    relation: str
    bound: float

    def __post_init__(self):
        if self.relation not in ("<=", ">=", "=="):
            raise ContractViolationError(f"unknown relation {self.relation!r}")


@dataclass
class SdpProblem:
    """Linear objective and constraints over Hermitian PSD blocks."""

    block_dims: list
    objective_terms: list
    constraints: list = field(default_factory=list)
    sense: str = "min"

    def __post_init__(self):
        if self.sense not in ("min", "max"):
            raise ContractViolationError(f"unknown sense {self.sense!r}")
        for b, c in self.objective_terms:
            self._check_term(b, c)
        for con in self.constraints:
            for b, c in con.terms:
                self._check_term(b, c)

    def _check_term(self, b, c):
        if not (0 <= b < len(self.block_dims)):
            raise ContractViolationError(f"term references unknown block {b}")
        c = np.asarray(c)
        d = self.block_dims[b]
        if c.shape != (d, d):
            raise ContractViolationError(f"coefficient for block {b} has shape {c.shape}, expected {(d, d)}")
        check_hermitian(c, rtol=1e-10)


@dataclass
class SdpSolution:
    status: str
    blocks: list
    objective: float
    dual_objective: float
    max_residual: float
    min_eigenvalue: float
    iterations: int
    dual_multipliers: np.ndarray
    certificate: dict | None = None


def _embed_coeff(c: np.ndarray) -> np.ndarray:
    # Re Tr(C X) = Tr(embed(C)/2 @ embed(X)) for Hermitian C, X.
    return complex_to_real_embedding(c) / 2.0


class _StandardForm:
    """min <C,X> s.t. <A_k,X> = b_k, X >= 0 over real symmetric blocks.

    Original complex blocks become their 2d x 2d real embeddings; each
    inequality gains a trailing 1x1 slack block. Rows are scaled to unit
    coefficient norm for conditioning; bookkeeping maps the solution and
    the dual multipliers back to the original statement.
    """

    def __init__(self, problem: SdpProblem):
        self.problem = problem
        self.dims = [2 * d for d in problem.block_dims]
        self.n_orig_blocks = len(problem.block_dims)
        m = len(problem.constraints)

        slack_sign = []
        for con in problem.constraints:
            if con.relation == "<=":
                slack_sign.append(1.0)
                self.dims.append(1)
            elif con.relation == ">=":
                slack_sign.append(-1.0)
                self.dims.append(1)
            else:
                slack_sign.append(0.0)

        self.c_blocks = [np.zeros((d, d)) for d in self.dims]
        sign = 1.0 if problem.sense == "min" else -1.0
        for b, c in problem.objective_terms:
            self.c_blocks[b] += sign * _embed_coeff(c)
        self.obj_sign = sign

        self.a_rows = []  # list per constraint: list of (block, real coeff)
        self.b = np.zeros(m)
        self.row_scale = np.ones(m)
        slack_idx = self.n_orig_blocks
        for k, con in enumerate(problem.constraints):
            row = {}
            for b, c in con.terms:
                rc = _embed_coeff(c)
                row[b] = row.get(b, 0.0) + rc
            coeff_norm = np.sqrt(sum(np.linalg.norm(rc) ** 2 for rc in row.values())) if row else 0.0
            scale = max(coeff_norm, abs(con.bound), 1e-12)
            self.row_scale[k] = scale
            entries = [(b, rc / scale) for b, rc in row.items()]
            if slack_sign[k] != 0.0:
                entries.append((slack_idx, np.array([[slack_sign[k]]])))
                slack_idx += 1
            self.a_rows.append(entries)
            self.b[k] = con.bound / scale
        self.m = m

    def apply_a(self, x_blocks):
        out = np.zeros(self.m)
        for k, entries in enumerate(self.a_rows):
            out[k] = sum(np.tensordot(rc, x_blocks[b]) for b, rc in entries)
        return out

    def apply_at(self, y):
        out = [np.zeros((d, d)) for d in self.dims]
        for k, entries in enumerate(self.a_rows):
            if y[k] != 0.0:
                for b, rc in entries:
                    out[b] += y[k] * rc
        return out

    def inner_c(self, x_blocks):
        return sum(np.tensordot(self.c_blocks[b], x_blocks[b]) for b in range(len(self.dims)))


def _sym(m):
    return (m + m.T) / 2.0


def _max_step(x_blocks, dx_blocks, tau, dtau, kappa, dkappa):
    """Largest alpha keeping all blocks PSD and tau, kappa nonnegative."""
    alpha = np.inf
    for x, dx in zip(x_blocks, dx_blocks):
        try:
            ell = np.linalg.cholesky(x)
        except np.linalg.LinAlgError:
            return 0.0
        w = scipy.linalg.solve_triangular(ell, dx, lower=True)
        w = scipy.linalg.solve_triangular(ell, w.T, lower=True)
        lam_min = float(np.min(np.linalg.eigvalsh(_sym(w))))
        if lam_min < 0:
            alpha = min(alpha, -1.0 / lam_min)
    for v, dv in ((tau, dtau), (kappa, dkappa)):
        if dv < 0:
            alpha = min(alpha, -v / dv)
    return alpha


def solve_sdp(problem: SdpProblem, tol: float = 1e-8, max_iter: int = 100) -> SdpSolution:
    """Solve a small dense SDP.

    Returns an SdpSolution whose status is ``optimal`` (residuals and the
    duality gap are below tol relative to the data scale), ``infeasible``
    (with a separating dual certificate: multipliers y with b^T y > 0 whose
    aggregate constraint matrix is negative semidefinite on the cone), or
    ``max-iter``.
    """
    sf = _StandardForm(problem)
    dims = sf.dims
    m = sf.m
    nu = sum(dims)

    x = [np.eye(d) for d in dims]
    z = [np.eye(d) for d in dims]
    y = np.zeros(m)
    tau, kappa = 1.0, 1.0

    c_norm = 1.0 + max((np.linalg.norm(cb) for cb in sf.c_blocks), default=0.0)
    b_norm = 1.0 + (np.linalg.norm(sf.b, np.inf) if m else 0.0)

    best = None
    status = STATUS_MAX_ITER
    it = 0
    for it in range(1, max_iter + 1):
        mu = (sum(np.tensordot(xb, zb) for xb, zb in zip(x, z)) + tau * kappa) / (nu + 1)

        ax = sf.apply_a(x)
        aty = sf.apply_at(y)
        res_p = ax - sf.b * tau
        res_d = [sf.c_blocks[b] * tau - aty[b] - z[b] for b in range(len(dims))]
        cx = sf.inner_c(x)
        by = float(sf.b @ y) if m else 0.0
        res_g = by - cx - kappa

        # convergence checks on the de-homogenized iterate
        pinf = np.linalg.norm(res_p / tau, np.inf) / b_norm if m else 0.0
        dinf = max(np.linalg.norm(rd / tau) for rd in res_d) / c_norm
        gap_abs = abs(cx / tau - by / tau)
        gap = gap_abs / (1.0 + abs(cx / tau) + abs(by / tau))
        if pinf <= tol and dinf <= tol and gap <= tol:
            status = STATUS_OPTIMAL
            break

        # infeasibility: tau collapses while kappa stays away from zero
        if tau < 1e-12 * max(1.0, kappa) or (mu < 1e-14 and tau < 1e-8 * kappa):
            if by > 1e-10:
                status = STATUS_INFEASIBLE
            break

        zinv = []
        for zb in z:
            try:
                ell = np.linalg.cholesky(zb)
            except np.linalg.LinAlgError:
                ell = np.linalg.cholesky(_sym(zb) + 1e-14 * np.eye(zb.shape[0]))
            zinv.append(scipy.linalg.cho_solve((ell, True), np.eye(zb.shape[0])))

        # Schur complement pieces shared by predictor and corrector
        hs_xaz = []  # per constraint: blocks Hsym(X A_l Zinv)
        for entries in sf.a_rows:
            hs_xaz.append([(b, _sym(x[b] @ rc @ zinv[b])) for b, rc in entries])
        big_m = np.zeros((m, m))
        for k, entries in enumerate(sf.a_rows):
            for b, rc in entries:
                for l in range(m):
                    for bb, pm in hs_xaz[l]:
                        if bb == b:
                            big_m[k, l] += np.tensordot(rc, pm)
        hs_xcz = [_sym(x[b] @ sf.c_blocks[b] @ zinv[b]) for b in range(len(dims))]
        v_vec = np.array([
            sum(np.tensordot(rc, hs_xcz[b]) for b, rc in entries) for entries in sf.a_rows
        ]) if m else np.zeros(0)
        c_tt = sum(np.tensordot(sf.c_blocks[b], hs_xcz[b]) for b in range(len(dims))) + kappa / tau

        def solve_direction(sigma, eta, w_extra, cor_tk):
            # W = sigma*mu*Zinv - X - Hsym(w_extra Zinv)
            w_blocks = []
            for b in range(len(dims)):
                wb = sigma * mu * zinv[b] - x[b]
                if w_extra is not None:
                    wb = wb - _sym(w_extra[b] @ zinv[b])
                w_blocks.append(wb)
            hs_xrz = [_sym(x[b] @ res_d[b] @ zinv[b]) for b in range(len(dims))]
            r1 = (
                -eta * res_p
                - sf.apply_a(w_blocks)
                + eta * sf.apply_a(hs_xrz)
            ) if m else np.zeros(0)
            r2 = (
                -eta * res_g
                + sf.inner_c(w_blocks)
                - eta * sf.inner_c(hs_xrz)
                + (sigma * mu - tau * kappa - cor_tk) / tau
            )
            kkt = np.zeros((m + 1, m + 1))
            kkt[:m, :m] = big_m
            kkt[:m, m] = -(v_vec + sf.b)
            kkt[m, :m] = sf.b - v_vec
            kkt[m, m] = c_tt
            rhs = np.concatenate([r1, [r2]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                reg = 1e-12 * (1.0 + np.abs(np.diag(kkt)).max())
                sol = np.linalg.solve(kkt + reg * np.eye(m + 1), rhs)
            dy, dtau = sol[:m], float(sol[m])
            aty_dy = sf.apply_at(dy)
            dz = [sf.c_blocks[b] * dtau - aty_dy[b] + eta * res_d[b] for b in range(len(dims))]
            dx = [_sym(w_blocks[b] - _sym(x[b] @ dz[b] @ zinv[b])) for b in range(len(dims))]
            dkappa = (sigma * mu - tau * kappa - cor_tk - kappa * dtau) / tau
            return dx, dy, dz, dtau, dkappa

        # predictor
        dxa, dya, dza, dtaua, dkappaa = solve_direction(0.0, 1.0, None, 0.0)
        alpha_aff = min(1.0, 0.98 * _max_step(x, dxa, tau, dtaua, kappa, dkappaa),
                        0.98 * _max_step(z, dza, tau, dtaua, kappa, dkappaa))
        mu_aff = (
            sum(np.tensordot(x[b] + alpha_aff * dxa[b], z[b] + alpha_aff * dza[b]) for b in range(len(dims)))
            + (tau + alpha_aff * dtaua) * (kappa + alpha_aff * dkappaa)
        ) / (nu + 1)
        sigma = min(0.99, max(1e-8, (max(mu_aff, 0.0) / mu) ** 3))

        # corrector
        w_extra = [dxa[b] @ dza[b] for b in range(len(dims))]
        dx, dy, dz, dtau, dkappa = solve_direction(sigma, 1.0 - sigma, w_extra, dtaua * dkappaa)
        alpha = min(1.0, 0.98 * _max_step(x, dx, tau, dtau, kappa, dkappa),
                    0.98 * _max_step(z, dz, tau, dtau, kappa, dkappa))
        if alpha <= 1e-12:
            break

        x = [_sym(x[b] + alpha * dx[b]) for b in range(len(dims))]
        z = [_sym(z[b] + alpha * dz[b]) for b in range(len(dims))]
        y = y + alpha * dy
        tau += alpha * dtau
        kappa += alpha * dkappa

    # map back
    y_orig = y / tau if tau > 0 else y.copy()
    y_orig = y_orig / sf.row_scale if m else y_orig
    if status == STATUS_INFEASIBLE:
        y_cert = y / sf.row_scale if m else y
        return SdpSolution(
            status=STATUS_INFEASIBLE,
            blocks=[np.zeros((d, d), dtype=complex) for d in problem.block_dims],
            objective=np.nan,
            dual_objective=np.nan,
            max_residual=np.inf,
            min_eigenvalue=0.0,
            iterations=it,
            dual_multipliers=y_cert,
            certificate={"b_dot_y": float(sf.b @ y) if m else 0.0, "y": y_cert},
        )

    blocks = []
    min_eig = np.inf
    for b in range(sf.n_orig_blocks):
        xb = real_embedding_to_complex(x[b] / tau)
        blocks.append(xb)
        w = np.linalg.eigvalsh(xb)
        min_eig = min(min_eig, float(w[0]) if w.size else 0.0)

    # residuals of the original statement
    max_resid = 0.0
    for con in problem.constraints:
        val = sum(float(np.real(np.trace(np.asarray(c) @ blocks[bi]))) for bi, c in con.terms)
        scale = 1.0 + abs(con.bound)
        if con.relation == "<=":
            r = max(0.0, val - con.bound)
        elif con.relation == ">=":
            r = max(0.0, con.bound - val)
        else:
            r = abs(val - con.bound)
        max_resid = max(max_resid, r / scale)

    obj = sum(float(np.real(np.trace(np.asarray(c) @ blocks[bi]))) for bi, c in problem.objective_terms)
    dual_obj = float(sf.b @ (y / tau)) / 1.0 if m else 0.0
    dual_obj = sf.obj_sign * dual_obj
    return SdpSolution(
        status=status,
        blocks=blocks,
        objective=obj,
        dual_objective=dual_obj,
        max_residual=max_resid,
        min_eigenvalue=min_eig,
        iterations=it,
        dual_multipliers=y_orig,
    )


# ---------------------------------------------------------------------------
# Problem builders
# ---------------------------------------------------------------------------


def feasibility_problem(scenario) -> SdpProblem:
    """Maximum uniform harvest slack achievable with an energy signal alone.

    maximize t  s.t.  zeta * Tr(S_E G_j) - t >= E_j for all j,
                      Tr(S_E) <= P_sum,  S_E >= 0,  t free.

    The instance is feasible exactly when the optimum t* is >= 0; t* is the
    margin in Watts. The free slack is split into two nonnegative scalars.
    """
    n = scenario.n_tx
    zeta = scenario.harvest_efficiency
    eye = np.eye(n, dtype=complex)
    one = np.array([[1.0 + 0j]])
    cons = []
    for j, gj in enumerate(scenario.gram_eh()):
        cons.append(
            SdpConstraint(
                terms=[(0, zeta * gj), (1, -one), (2, one)],
                relation=">=",
                bound=float(scenario.harvest_targets[j]),
            )
        )
    cons.append(SdpConstraint(terms=[(0, eye)], relation="<=", bound=float(scenario.sum_power)))
    return SdpProblem(
        block_dims=[n, 1, 1],
        objective_terms=[(1, one), (2, -one)],
        constraints=cons,
        sense="max",
    )


def feasibility_margin(scenario, tol: float = 1e-8, max_iter: int = 100):
    """Solve the feasibility program; returns (margin_in_watts, SdpSolution)."""
    sol = solve_sdp(feasibility_problem(scenario), tol=tol, max_iter=max_iter)
    if sol.status != STATUS_OPTIMAL:
        raise InternalInconsistencyError(
            f"feasibility program should always solve, got status {sol.status}"
        )
    return float(sol.objective), sol


def emax_problem(scenario) -> SdpProblem:
    """Largest common harvest target supportable by the power budget.

    maximize E  s.t.  Tr(S_E G_j) >= E for all j, Tr(S_E) <= P_sum.
    The harvest efficiency is applied by the caller when reporting.
    """
    n = scenario.n_tx
    eye = np.eye(n, dtype=complex)
    one = np.array([[1.0 + 0j]])
    cons = [
        SdpConstraint(terms=[(0, gj), (1, -one)], relation=">=", bound=0.0)
        for gj in scenario.gram_eh()
    ]
    cons.append(SdpConstraint(terms=[(0, eye)], relation="<=", bound=float(scenario.sum_power)))
    return SdpProblem(block_dims=[n, 1], objective_terms=[(1, one)], constraints=cons, sense="max")


def solve_emax(scenario, tol: float = 1e-9, max_iter: int = 100):
    """Returns (E_max in Watts with efficiency applied, achieving S_E)."""
    sol = solve_sdp(emax_problem(scenario), tol=tol, max_iter=max_iter)
    if sol.status != STATUS_OPTIMAL:
        raise InternalInconsistencyError(f"E_max program did not solve: {sol.status}")
    return scenario.harvest_efficiency * float(sol.objective), sol.blocks[0]


def separate_energy_problem(scenario, info_covariances, energy_budget: float) -> SdpProblem:
    """Max uniform slack for an energy signal on top of fixed information signals.

    maximize t  s.t.  zeta * Tr((S_I + S_E) G_j) - t >= E_j,
                      Tr(S_E) <= energy_budget, S_E >= 0, t free.
    """
    n = scenario.n_tx
    zeta = scenario.harvest_efficiency
    s_i = np.sum(np.asarray(info_covariances, dtype=complex), axis=0)
    eye = np.eye(n, dtype=complex)
    one = np.array([[1.0 + 0j]])
    cons = []
    for j, gj in enumerate(scenario.gram_eh()):
        harvested = zeta * float(np.real(np.trace(s_i @ gj)))
        cons.append(
            SdpConstraint(
                terms=[(0, zeta * gj), (1, -one), (2, one)],
                relation=">=",
                bound=float(scenario.harvest_targets[j]) - harvested,
            )
        )
    cons.append(SdpConstraint(terms=[(0, eye)], relation="<=", bound=float(max(energy_budget, 0.0))))
    return SdpProblem(
        block_dims=[n, 1, 1],
        objective_terms=[(1, one), (2, -one)],
        constraints=cons,
        sense="max",
    )


def min_power_energy_problem(scenario) -> SdpProblem:
    """Minimum-power energy covariance meeting every harvest target alone.

    minimize Tr(S_E)  s.t.  zeta * Tr(S_E G_j) >= E_j, S_E >= 0.
    """
    n = scenario.n_tx
    zeta = scenario.harvest_efficiency
    cons = [
        SdpConstraint(terms=[(0, zeta * gj)], relation=">=", bound=float(ej))
        for gj, ej in zip(scenario.gram_eh(), scenario.harvest_targets)
    ]
    return SdpProblem(
        block_dims=[n],
        objective_terms=[(0, np.eye(n, dtype=complex))],
        constraints=cons,
        sense="min",
    )


@dataclass
class _ExpansionLayout:
    bases: list        # per kept user: V_i = [U1 W_i, U2], orthonormal columns
    kept: list         # original info indices with nonzero pinned block
    ranks: list        # rank r_i of each pinned block
    pinned: list       # eigenvalues Lambda_i of each pinned block
    n_null: int


def _expansion_layout(split, b_stars) -> _ExpansionLayout:
    bases, kept, ranks, pinned = [], [], [], []
    u1, u2 = split.u1, split.u2
    for i, b_star in enumerate(b_stars):
        w, vec = hermitian_eig(b_star)
        top = float(w[0]) if w.size else 0.0
        r = int(np.sum(w > 1e-12 * max(top, 1e-300)))
        if r == 0:
            continue
        wcols = vec[:, :r]
        bases.append(np.concatenate([u1 @ wcols, u2], axis=1))
        kept.append(i)
        ranks.append(r)
        pinned.append(np.clip(w[:r], 0.0, None))
    return _ExpansionLayout(bases=bases, kept=kept, ranks=ranks, pinned=pinned, n_null=u2.shape[1])


def expansion_problem(
    scenario, split, b_stars, *, relative_slack: bool = False, target_shift: float = 0.0
) -> tuple[SdpProblem, _ExpansionLayout]:
    """Covariance expansion restoring harvest feasibility at fixed rates.

    Each information covariance is forced to reproduce its dual-optimal
    range-space block while gaining coupling and null-space blocks; a
    dedicated energy covariance lives in the null space of the dual
    constraint matrix. Ranks are minimized through the trace surrogate.
    Working in the pinned block's own eigenbasis keeps the pinned corner
    nonsingular, which the interior-point backend needs.

    With ``relative_slack`` the objective becomes the largest uniform
    relative harvest margin t (harvest >= E_j * (1 + t)); otherwise the
    objective is the total information power, with harvest targets shifted
    to E_j * (1 + target_shift).
    """
    layout = _expansion_layout(split, b_stars)
    n_null = layout.n_null
    if n_null <= 0:
        raise ContractViolationError("expansion requires a rank-deficient constraint matrix")
    zeta = scenario.harvest_efficiency

    block_dims = [r + n_null for r in layout.ranks] + [n_null]
    e_block = len(layout.ranks)
    slack_blocks = []
    if relative_slack:
        block_dims += [1, 1]
        slack_blocks = [e_block + 1, e_block + 2]

    cons = []
    one = np.array([[1.0 + 0j]])
    # pin the range-space corner of every kept block to its dual-optimal value
    for bi, (r, lam) in enumerate(zip(layout.ranks, layout.pinned)):
        d = r + n_null
        for k in range(r):
            for l in range(k, r):
                e_kl = np.zeros((d, d), dtype=complex)
                if k == l:
                    e_kl[k, k] = 1.0
                    cons.append(SdpConstraint([(bi, e_kl)], "==", float(lam[k])))
                else:
                    e_kl[k, l] = 0.5
                    e_kl[l, k] = 0.5
                    cons.append(SdpConstraint([(bi, e_kl)], "==", 0.0))
                    e_im = np.zeros((d, d), dtype=complex)
                    e_im[k, l] = -0.5j
                    e_im[l, k] = 0.5j
                    cons.append(SdpConstraint([(bi, e_im)], "==", 0.0))

    grams = scenario.gram_eh()
    u2 = split.u2
    for j, gj in enumerate(grams):
        terms = []
        for bi, v in enumerate(layout.bases):
            terms.append((bi, zeta * herm(v) @ gj @ v))
        terms.append((e_block, zeta * herm(u2) @ gj @ u2))
        target = float(scenario.harvest_targets[j])
        if relative_slack:
            terms.append((slack_blocks[0], -target * one))
            terms.append((slack_blocks[1], target * one))
            cons.append(SdpConstraint(terms, ">=", target))
        else:
            cons.append(SdpConstraint(terms, ">=", target * (1.0 + target_shift)))

    power_terms = [(bi, np.eye(r + n_null, dtype=complex)) for bi, r in enumerate(layout.ranks)]
    power_terms.append((e_block, np.eye(n_null, dtype=complex)))
    cons.append(SdpConstraint(power_terms, "<=", float(scenario.sum_power)))

    if relative_slack:
        objective = [(slack_blocks[0], one), (slack_blocks[1], -one)]
        sense = "max"
    else:
        objective = [(bi, np.eye(r + n_null, dtype=complex)) for bi, r in enumerate(layout.ranks)]
        sense = "min"
    problem = SdpProblem(block_dims=block_dims, objective_terms=objective, constraints=cons, sense=sense)
    return problem, layout


def assemble_expansion(scenario, split, b_stars, layout: _ExpansionLayout, blocks):
    """Rebuild full-size (info_covariances, energy_covariance) from solved blocks."""
    n = scenario.n_tx
    covs = np.zeros((len(b_stars), n, n), dtype=complex)
    for pos, i in enumerate(layout.kept):
        v = layout.bases[pos]
        t = blocks[pos]
        covs[i] = v @ t @ herm(v)
        covs[i] = (covs[i] + herm(covs[i])) / 2.0
    e_block = blocks[len(layout.ranks)]
    s_e = split.u2 @ e_block @ herm(split.u2)
    s_e = (s_e + herm(s_e)) / 2.0
    return covs, s_e


def solve_expansion(scenario, split, b_stars, tol: float = 1e-9, max_iter: int = 120):
    """Two-phase expansion solve: best uniform margin, then minimum info power.

    Returns (info_covariances, energy_covariance, margin, phase2_solution).
    ``margin`` is the best achievable uniform relative harvest slack; when
    it is negative the phase-2 targets are backed off to that margin so a
    solution is still produced (the caller decides whether the shortfall is
    acceptable).
    """
    prob1, layout = expansion_problem(scenario, split, b_stars, relative_slack=True)
    sol1 = solve_sdp(prob1, tol=tol, max_iter=max_iter)
    if sol1.status != STATUS_OPTIMAL:
        raise InternalInconsistencyError(f"expansion slack phase did not solve: {sol1.status}")
    margin = float(sol1.objective)

    shift = min(0.0, margin)
    if shift < 0.0:
        shift = shift * (1.0 + 1e-6) - 1e-12
    prob2, layout = expansion_problem(scenario, split, b_stars, target_shift=shift)
    sol2 = solve_sdp(prob2, tol=tol, max_iter=max_iter)
    if sol2.status != STATUS_OPTIMAL:
        # fall back to the slack-phase covariances, which satisfy the shifted
        # targets but do not minimize information power
        covs, s_e = assemble_expansion(scenario, split, b_stars, layout, sol1.blocks)
        return covs, s_e, margin, sol1
    covs, s_e = assemble_expansion(scenario, split, b_stars, layout, sol2.blocks)
    return covs, s_e, margin, sol2
