"""Problem instances, rate and harvested-power evaluation, channel generation.

A :class:`Scenario` is one complete problem: a multi-antenna transmitter,
information-decoding (ID) receivers with channels ``h_i``, energy-harvesting
(EH) receivers with channels ``g_j``, a sum-power budget, per-EH minimum
harvest targets, and positive rate weights. All core quantities are in
Watts; dB conversions live at the CLI boundary.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConstructionError, ContractViolationError
from .linalg import herm

DEFAULT_SUM_POWER_W = 5.0
DEFAULT_NOISE_POWER_W = 1e-8  # -50 dBm


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Scenario:
    """One broadcast-channel instance with harvest constraints.

    id_channels: (K_I, N) complex rows h_i.
    eh_channels: (K_E, N) complex rows g_j.
    noise_power: receiver noise sigma^2 in Watts.
    sum_power: transmit budget P_sum in Watts.
    harvest_targets: (K_E,) minimum harvested powers E_j in Watts.
    weights: (K_I,) positive rate weights alpha_i.
    harvest_efficiency: zeta in (0, 1].
    """

    id_channels: np.ndarray
    eh_channels: np.ndarray
    noise_power: float
    sum_power: float
    harvest_targets: np.ndarray
    weights: np.ndarray
    harvest_efficiency: float = 1.0

    def __post_init__(self):
        h = np.atleast_2d(np.asarray(self.id_channels, dtype=complex))
        g = np.atleast_2d(np.asarray(self.eh_channels, dtype=complex))
        e = np.atleast_1d(np.asarray(self.harvest_targets, dtype=float))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if h.shape[0] < 1 or g.shape[0] < 1 or h.shape[1] < 1:
            raise ContractViolationError("need at least one ID receiver, one EH receiver, one antenna")
        if g.shape[1] != h.shape[1]:
            raise ContractViolationError(
                f"antenna count mismatch: id channels have {h.shape[1]}, eh channels {g.shape[1]}"
            )
        if e.shape != (g.shape[0],):
            raise ContractViolationError("harvest_targets length must match number of EH receivers")
        if w.shape != (h.shape[0],):
            raise ContractViolationError("weights length must match number of ID receivers")
        if not (np.all(np.isfinite(h.view(float))) and np.all(np.isfinite(g.view(float)))):
            raise ContractViolationError("channels must be finite")
        if not (self.sum_power > 0 and self.noise_power > 0):
            raise ContractViolationError("sum_power and noise_power must be positive")
        if not np.all(e > 0):
            raise ContractViolationError("harvest targets must be positive")
        if not np.all(w > 0):
            raise ContractViolationError("weights must be positive")
        if not (0.0 < self.harvest_efficiency <= 1.0):
            raise ContractViolationError("harvest_efficiency must lie in (0, 1]")
        object.__setattr__(self, "id_channels", _readonly(h))
        object.__setattr__(self, "eh_channels", _readonly(g))
        object.__setattr__(self, "harvest_targets", _readonly(e))
        object.__setattr__(self, "weights", _readonly(w))

    @property
    def n_tx(self) -> int:
        return self.id_channels.shape[1]

    @property
    def n_id(self) -> int:
        return self.id_channels.shape[0]

    @property
    def n_eh(self) -> int:
        return self.eh_channels.shape[0]

    def gram_eh(self) -> np.ndarray:
        """Stack of outer products G_j = g_j g_j^H, shape (K_E, N, N)."""
        g = self.eh_channels
        return np.einsum("ja,jb->jab", g, np.conj(g))

    def with_targets(self, harvest_targets) -> "Scenario":
        return replace(self, harvest_targets=np.asarray(harvest_targets, dtype=float))

    def with_weights(self, weights) -> "Scenario":
        return replace(self, weights=np.asarray(weights, dtype=float))


@dataclass(frozen=True)
class CovarianceSolution:
    """Transmit covariances and the rates they achieve.

    info_covariances: (K_I, N, N) Hermitian PSD, Watts.
    energy_covariance: (N, N) Hermitian PSD, Watts.
    encoding_order: tuple, user encoding_order[0] is encoded first.
    rates: (K_I,) bits/s/Hz, indexed by user (not by encoding position).
    wsr: weighted sum rate, bits/s/Hz.
    """

    info_covariances: np.ndarray
    energy_covariance: np.ndarray
    encoding_order: tuple
    rates: np.ndarray
    wsr: float

    def __post_init__(self):
        s = np.asarray(self.info_covariances, dtype=complex)
        se = np.asarray(self.energy_covariance, dtype=complex)
        r = np.asarray(self.rates, dtype=float)
        if s.ndim != 3 or s.shape[1] != s.shape[2] or se.shape != s.shape[1:]:
            raise ContractViolationError("covariance shapes are inconsistent")
        if sorted(self.encoding_order) != list(range(s.shape[0])):
            raise ContractViolationError("encoding_order is not a permutation of the ID receivers")
        if r.shape != (s.shape[0],):
            raise ContractViolationError("rates length must match number of ID receivers")
        object.__setattr__(self, "info_covariances", _readonly(s))
        object.__setattr__(self, "energy_covariance", _readonly(se))
        object.__setattr__(self, "rates", _readonly(r))
        object.__setattr__(self, "encoding_order", tuple(int(i) for i in self.encoding_order))

    def total_power(self) -> float:
        return float(np.real(np.trace(self.info_covariances.sum(axis=0) + self.energy_covariance)))


@dataclass(frozen=True)
class GeneratorConfig:
    """Random-channel generator settings.

    Path losses are in dB (amplitude scale 10^(-pl/20)). EH receivers sit
    close to the transmitter, so their channels default to Rician fading
    with a line-of-sight component; the K-factor of the reference model is
    not standardized, so it is a documented, configurable default.
    """

    seed: int = 0
    pathloss_id_db: float = 70.0
    pathloss_eh_db: float = 30.0
    rician_k_db: float = 5.0
    id_fading: str = "rayleigh"
    eh_fading: str = "rician"

    def __post_init__(self):
        if self.pathloss_id_db < 0 or self.pathloss_eh_db < 0:
            raise ContractViolationError("path losses must be nonnegative")
        if self.id_fading not in ("rayleigh",):
            raise ContractViolationError(f"unknown id_fading {self.id_fading!r}")
        if self.eh_fading not in ("rician", "rayleigh"):
            raise ContractViolationError(f"unknown eh_fading {self.eh_fading!r}")


def dpc_rates(scenario: Scenario, covariances, order) -> np.ndarray:
    """Per-user rates under dirty-paper coding with the given encoding order.

    User order[i] sees interference only from users encoded after it:
    r = log2((sigma^2 + h^H (sum_{k>=i} S_{order[k]}) h) /
             (sigma^2 + h^H (sum_{k>i} S_{order[k]}) h)).
    """
    covs = np.asarray(covariances, dtype=complex)
    k_i, n = scenario.n_id, scenario.n_tx
    if covs.shape != (k_i, n, n):
        raise ContractViolationError(f"expected covariances of shape {(k_i, n, n)}, got {covs.shape}")
    order = [int(i) for i in order]
    if sorted(order) != list(range(k_i)):
        raise ContractViolationError("order is not a permutation of the ID receivers")
    sigma2 = scenario.noise_power
    rates = np.zeros(k_i)
    tail = np.zeros((n, n), dtype=complex)
    for pos in range(k_i - 1, -1, -1):
        u = order[pos]
        h = scenario.id_channels[u]
        den = sigma2 + float(np.real(np.conj(h) @ tail @ h))
        tail = tail + covs[u]
        num = sigma2 + float(np.real(np.conj(h) @ tail @ h))
        rates[u] = max(0.0, np.log2(num / den))
    return rates


def harvested_powers(scenario: Scenario, covariances, energy_covariance) -> np.ndarray:
    """Harvested power Q_j = zeta * g_j^H (sum_i S_i + S_E) g_j at each EH receiver."""
    covs = np.asarray(covariances, dtype=complex)
    se = np.asarray(energy_covariance, dtype=complex)
    n = scenario.n_tx
    if covs.ndim != 3 or covs.shape[1:] != (n, n) or se.shape != (n, n):
        raise ContractViolationError("covariance dimensions do not match the scenario")
    total = covs.sum(axis=0) + se
    g = scenario.eh_channels
    q = np.real(np.einsum("ja,ab,jb->j", np.conj(g), total, g))
    return scenario.harvest_efficiency * np.maximum(q, 0.0)


def channel_correlation(h: np.ndarray, g: np.ndarray) -> float:
    """|h^H g| / (||h|| ||g||), invariant to nonzero complex scaling."""
    h = np.asarray(h, dtype=complex).ravel()
    g = np.asarray(g, dtype=complex).ravel()
    nh, ng = np.linalg.norm(h), np.linalg.norm(g)
    if nh == 0 or ng == 0:
        raise ContractViolationError("channel_correlation requires nonzero vectors")
    return float(np.abs(np.vdot(h, g)) / (nh * ng))


def correlation_matrix(scenario: Scenario) -> np.ndarray:
    """All pairwise ID/EH correlations, shape (K_I, K_E)."""
    return np.array(
        [
            [channel_correlation(h, g) for g in scenario.eh_channels]
            for h in scenario.id_channels
        ]
    )


def generate_channels(
    config: GeneratorConfig, n_tx: int, n_id: int, n_eh: int, seed=None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw (id_channels, eh_channels, eh_los) for one seed.

    ID channels are i.i.d. circular Gaussian scaled by 10^(-pathloss/20).
    EH channels mix a unit-modulus array-response line-of-sight term with a
    scattered Gaussian term according to the Rician K-factor. The returned
    ``eh_los`` is the deterministic LOS part of each EH channel (the
    K -> infinity limit), at the same scale as ``eh_channels``.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    amp_id = 10.0 ** (-config.pathloss_id_db / 20.0)
    amp_eh = 10.0 ** (-config.pathloss_eh_db / 20.0)

    h = amp_id * (rng.standard_normal((n_id, n_tx)) + 1j * rng.standard_normal((n_id, n_tx))) / np.sqrt(2.0)

    g = np.zeros((n_eh, n_tx), dtype=complex)
    g_los = np.zeros((n_eh, n_tx), dtype=complex)
    kfac = 10.0 ** (config.rician_k_db / 10.0)
    for j in range(n_eh):
        aoa = rng.uniform(-np.pi / 2, np.pi / 2)
        los = np.exp(1j * np.pi * np.sin(aoa) * np.arange(n_tx))
        scatter = (rng.standard_normal(n_tx) + 1j * rng.standard_normal(n_tx)) / np.sqrt(2.0)
        if config.eh_fading == "rayleigh":
            g[j] = amp_eh * scatter
            g_los[j] = 0.0
        else:
            g_los[j] = amp_eh * np.sqrt(kfac / (1.0 + kfac)) * los
            g[j] = g_los[j] + amp_eh * np.sqrt(1.0 / (1.0 + kfac)) * scatter
    return h, g, g_los


def generate_scenario(
    config: GeneratorConfig,
    n_tx: int,
    n_id: int,
    n_eh: int,
    *,
    sum_power: float = DEFAULT_SUM_POWER_W,
    noise_power: float = DEFAULT_NOISE_POWER_W,
    harvest_targets=None,
    weights=None,
    harvest_efficiency: float = 1.0,
    seed=None,
) -> Scenario:
    """Random scenario, deterministic per (config, seed).

    ``harvest_targets=None`` installs a vanishing placeholder (1e-12 W per
    receiver) meant to be replaced via :meth:`Scenario.with_targets` once a
    feasible target level (for example a fraction of the achievable
    maximum) is known.
    """
    h, g, _ = generate_channels(config, n_tx, n_id, n_eh, seed=seed)
    if harvest_targets is None:
        harvest_targets = np.full(n_eh, 1e-12)
    if weights is None:
        weights = np.ones(n_id)
    return Scenario(
        id_channels=h,
        eh_channels=g,
        noise_power=noise_power,
        sum_power=sum_power,
        harvest_targets=harvest_targets,
        weights=weights,
        harvest_efficiency=harvest_efficiency,
    )


def _seeded_unitary(rng: np.random.Generator, n: int) -> np.ndarray:
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def build_correlated_scenario(
    rho_target,
    *,
    n_tx: int,
    seed: int = 0,
    id_norms=None,
    eh_norms=None,
    sum_power: float = DEFAULT_SUM_POWER_W,
    noise_power: float = DEFAULT_NOISE_POWER_W,
    harvest_targets=None,
    weights=None,
    harvest_efficiency: float = 1.0,
) -> Scenario:
    """Construct channels whose pairwise ID/EH correlations hit ``rho_target``.

    Entries of rho_target must lie in [0, 1]. Two constructions are used:

    - no entry equals 1: ID directions are taken orthonormal and each EH
      direction is the target combination of them plus a seeded random
      component in their orthogonal complement; requires every column of
      rho^2 to sum to at most 1 and n_tx >= K_I + 1 (K_I when a column sums
      to exactly 1).
    - one row contains entries equal to 1 (that ID channel is parallel to
      the corresponding EH channels): the EH directions are laid out first
      with the inter-EH correlations that row forces, and the remaining ID
      directions are matched to their target rows by least squares inside
      the EH span plus a fresh orthogonal direction.

    Infeasible targets (rank obstructions, not enough antennas) raise
    ConstructionError. Norm defaults follow the 70 dB / 30 dB path losses.
    """
    rho = np.atleast_2d(np.asarray(rho_target, dtype=float))
    k_i, k_e = rho.shape
    if np.any(rho < 0) or np.any(rho > 1 + 1e-12):
        raise ConstructionError("correlation targets must lie in [0, 1]")
    rho = np.clip(rho, 0.0, 1.0)
    rng = np.random.default_rng(seed)

    pinned_rows = np.where(np.any(rho >= 1.0 - 1e-12, axis=1))[0]
    if pinned_rows.size == 0:
        hd, gd = _correlated_directions_free(rho, n_tx, rng)
    elif pinned_rows.size == 1:
        hd, gd = _correlated_directions_pinned(rho, n_tx, int(pinned_rows[0]))
    else:
        raise ConstructionError("at most one ID receiver may be fully correlated (rho = 1) with EH receivers")

    q = _seeded_unitary(rng, n_tx)
    hd = hd @ q.T
    gd = gd @ q.T

    if id_norms is None:
        id_norms = np.sqrt(n_tx * 10.0 ** (-70.0 / 10.0))
    if eh_norms is None:
        eh_norms = np.sqrt(n_tx * 10.0 ** (-30.0 / 10.0))
    h = hd * np.broadcast_to(np.asarray(id_norms, dtype=float), (k_i,))[:, None]
    g = gd * np.broadcast_to(np.asarray(eh_norms, dtype=float), (k_e,))[:, None]

    achieved = np.array([[channel_correlation(hi, gj) for gj in g] for hi in h])
    if np.max(np.abs(achieved - rho)) > 1e-6:
        raise ConstructionError(
            f"constructed correlations miss the target by {np.max(np.abs(achieved - rho)):.2e}"
        )

    if harvest_targets is None:
        harvest_targets = np.full(k_e, 1e-12)
    if weights is None:
        weights = np.ones(k_i)
    return Scenario(
        id_channels=h,
        eh_channels=g,
        noise_power=noise_power,
        sum_power=sum_power,
        harvest_targets=harvest_targets,
        weights=weights,
        harvest_efficiency=harvest_efficiency,
    )


def _correlated_directions_free(rho: np.ndarray, n_tx: int, rng) -> tuple[np.ndarray, np.ndarray]:
    k_i, k_e = rho.shape
    col_energy = np.sum(rho**2, axis=0)
    if np.any(col_energy > 1.0 + 1e-12):
        raise ConstructionError(
            "infeasible targets: some EH receiver would need correlation energy above 1 "
            "across orthogonal ID channels"
        )
    needs_fresh = bool(np.any(col_energy < 1.0 - 1e-12))
    if n_tx < k_i + (1 if needs_fresh else 0):
        raise ConstructionError(f"n_tx={n_tx} too small for {k_i} ID receivers plus an EH remainder")
    hd = np.zeros((k_i, n_tx), dtype=complex)
    hd[:, :k_i] = np.eye(k_i)
    gd = np.zeros((k_e, n_tx), dtype=complex)
    free = n_tx - k_i
    for j in range(k_e):
        gd[j, :k_i] = rho[:, j]
        resid = max(0.0, 1.0 - col_energy[j])
        if resid > 0:
            d = rng.standard_normal(free) + 1j * rng.standard_normal(free)
            gd[j, k_i:] = np.sqrt(resid) * d / np.linalg.norm(d)
    return hd, gd


def _correlated_directions_pinned(rho: np.ndarray, n_tx: int, i_star: int) -> tuple[np.ndarray, np.ndarray]:
    k_i, k_e = rho.shape
    row = rho[i_star]
    free_cols = [j for j in range(k_e) if row[j] < 1.0 - 1e-12]
    dims = 1 + len(free_cols) + (k_i - 1)
    if n_tx < dims:
        raise ConstructionError(f"n_tx={n_tx} too small for the pinned construction (needs {dims})")
    gd = np.zeros((k_e, n_tx), dtype=complex)
    next_dim = 1
    for j in range(k_e):
        if row[j] >= 1.0 - 1e-12:
            gd[j, 0] = 1.0
        else:
            gd[j, 0] = row[j]
            gd[j, next_dim] = np.sqrt(max(0.0, 1.0 - row[j] ** 2))
            next_dim += 1
    hd = np.zeros((k_i, n_tx), dtype=complex)
    hd[i_star, 0] = 1.0
    for i in range(k_i):
        if i == i_star:
            continue
        gmat_h = np.conj(gd)  # rows g_j^H restricted to full space
        a, *_ = np.linalg.lstsq(gmat_h, rho[i], rcond=None)
        if np.linalg.norm(gmat_h @ a - rho[i]) > 1e-9:
            raise ConstructionError(f"row {i} of the correlation target is inconsistent with the pinned row")
        na2 = float(np.real(np.vdot(a, a)))
        if na2 > 1.0 + 1e-12:
            raise ConstructionError(f"row {i} of the correlation target needs correlation energy above 1")
        hd[i] = a
        hd[i, next_dim] = np.sqrt(max(0.0, 1.0 - na2))
        next_dim += 1
    return hd, gd


@dataclass(frozen=True)
class VerificationReport:
    """Constraint audit of a solution against its scenario. Report-only."""

    psd_violation: float
    power_slack: float
    harvest_slack: np.ndarray
    rate_error: float
    wsr_error: float
    violations: list = field(default_factory=list)
    duality_gap: float | None = None

    @property
    def clean(self) -> bool:
        return not self.violations


def verify_solution(scenario: Scenario, solution: CovarianceSolution, tol: float = 1e-6) -> VerificationReport:
    """Audit PSD-ness, power, harvest targets, and stored rates of a solution."""
    violations = []

    psd_viol = 0.0
    mats = list(solution.info_covariances) + [solution.energy_covariance]
    for idx, m in enumerate(mats):
        w = np.linalg.eigvalsh((m + herm(m)) / 2.0)
        scale = 1.0 + (abs(float(w[-1])) if w.size else 0.0)
        neg = max(0.0, -float(w[0])) / scale
        psd_viol = max(psd_viol, neg)
        if neg > tol:
            name = "S_E" if idx == len(mats) - 1 else f"S_{idx}"
            violations.append(f"{name} is not PSD (relative violation {neg:.3e})")

    power_slack = scenario.sum_power - solution.total_power()
    if power_slack < -tol * scenario.sum_power:
        violations.append(f"sum power exceeds the budget by {-power_slack:.3e} W")

    q = harvested_powers(scenario, solution.info_covariances, solution.energy_covariance)
    harvest_slack = q - scenario.harvest_targets
    for j, (slack, target) in enumerate(zip(harvest_slack, scenario.harvest_targets)):
        if slack < -tol * target:
            violations.append(f"EH receiver {j} harvests {slack:.3e} W below target")

    recomputed = dpc_rates(scenario, solution.info_covariances, solution.encoding_order)
    rate_error = float(np.max(np.abs(recomputed - solution.rates)))
    if rate_error > tol * (1.0 + float(np.max(recomputed))):
        violations.append(f"stored rates disagree with recomputation by {rate_error:.3e}")

    wsr_error = abs(float(scenario.weights @ recomputed) - solution.wsr)
    if wsr_error > tol * (1.0 + abs(solution.wsr)):
        violations.append(f"stored weighted sum rate disagrees by {wsr_error:.3e}")

    return VerificationReport(
        psd_violation=psd_viol,
        power_slack=float(power_slack),
        harvest_slack=harvest_slack,
        rate_error=rate_error,
        wsr_error=wsr_error,
        violations=violations,
    )
