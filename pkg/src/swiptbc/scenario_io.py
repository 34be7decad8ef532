"""Scenario files, result records, and CSV emission.

Scenario files are JSON: human-editable key-value with nested lists,
complex entries as [re, im] pairs. Powers are Watts when bare numbers and
may be tagged {"w": x} or {"dbm": x}; harvest targets may additionally be
tagged {"fraction_of_emax": f}, resolved against the instance's largest
common achievable target. Exactly one channel source is allowed:
"channels" (explicit), "generator" (ray seeded random), or "correlation"
(target correlation matrix construction).

All numeric output uses 17 significant digits so files round-trip floats
exactly and repeated runs are byte-identical.
"""

import hashlib
import json

import numpy as np

from .errors import ContractViolationError
from .model import (
    DEFAULT_NOISE_POWER_W,
    DEFAULT_SUM_POWER_W,
    GeneratorConfig,
    Scenario,
    build_correlated_scenario,
    generate_scenario,
)
from .sdp import solve_emax

FLOAT_FMT = "%.17g"
MASK64 = (1 << 64) - 1


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    if watts <= 0.0:
        return -np.inf
    return 10.0 * np.log10(watts) + 30.0


def format_power(watts: float) -> str:
    return f"{watts:.9g} W ({watts_to_dbm(watts):.4f} dBm)"


def _parse_power(value, name: str) -> float:
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, dict):
        if set(value) == {"w"}:
            return float(value["w"])
        if set(value) == {"dbm"}:
            return dbm_to_watts(float(value["dbm"]))
    raise ContractViolationError(f"{name}: expected Watts, {{'w': x}} or {{'dbm': x}}, got {value!r}")


def _parse_complex_vector(entries, name: str) -> np.ndarray:
    try:
        out = np.array([complex(re, im) for re, im in entries])
    except (TypeError, ValueError) as err:
        raise ContractViolationError(f"{name}: complex entries must be [re, im] pairs: {err}")
    return out


def splitmix64(state: int) -> tuple[int, int]:
    """One step of the splitmix64 sequence: returns (next_state, output)."""
    state = (state + 0x9E3779B97F4A7B15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, (z ^ (z >> 31)) & MASK64


def trial_seeds(master_seed: int, count: int) -> list:
    """Deterministic per-trial seeds derived from one master seed."""
    state = master_seed & MASK64
    seeds = []
    for _ in range(count):
        state, out = splitmix64(state)
        seeds.append(out)
    return seeds


def load_scenario(path: str):
    """Read and resolve a scenario file; returns (Scenario, metadata dict)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return resolve_scenario(doc)


def resolve_scenario(doc: dict):
    """Resolve a parsed scenario document into a Scenario.

    Returns (scenario, meta); meta records the resolved E_max when targets
    were given as a fraction of it, plus the effective generator seed.
    """
    if not isinstance(doc, dict):
        raise ContractViolationError("scenario file must hold a JSON object")
    sources = [k for k in ("channels", "generator", "correlation") if k in doc]
    if len(sources) != 1:
        raise ContractViolationError(
            f"exactly one channel source required (channels | generator | correlation), found {sources}"
        )

    noise = _parse_power(doc.get("noise_power", DEFAULT_NOISE_POWER_W), "noise_power")
    sum_power = _parse_power(doc.get("sum_power", DEFAULT_SUM_POWER_W), "sum_power")
    zeta = float(doc.get("harvest_efficiency", 1.0))
    meta = {}

    src = sources[0]
    if src == "channels":
        spec = doc["channels"]
        h = np.array([_parse_complex_vector(row, "id channel") for row in spec["id"]])
        g = np.array([_parse_complex_vector(row, "eh channel") for row in spec["eh"]])
        n_id, n_eh = h.shape[0], g.shape[0]
        base = dict(id_channels=h, eh_channels=g)
    elif src == "generator":
        spec = dict(doc["generator"])
        n_tx = int(spec.pop("n_tx"))
        n_id = int(spec.pop("n_id"))
        n_eh = int(spec.pop("n_eh"))
        seed = int(spec.pop("seed", 0))
        config = GeneratorConfig(seed=seed, **spec)
        meta["seed"] = seed
        sc = generate_scenario(
            config, n_tx, n_id, n_eh, sum_power=sum_power, noise_power=noise,
            harvest_efficiency=zeta,
        )
        base = dict(id_channels=sc.id_channels, eh_channels=sc.eh_channels)
    else:
        spec = dict(doc["correlation"])
        rho = np.array(spec.pop("rho"), dtype=float)
        n_tx = int(spec.pop("n_tx"))
        seed = int(spec.pop("seed", 0))
        meta["seed"] = seed
        sc = build_correlated_scenario(
            rho, n_tx=n_tx, seed=seed, sum_power=sum_power, noise_power=noise,
            harvest_efficiency=zeta, **spec,
        )
        n_id, n_eh = sc.n_id, sc.n_eh
        base = dict(id_channels=sc.id_channels, eh_channels=sc.eh_channels)
        meta["correlation_target"] = rho.tolist()

    weights = np.asarray(doc.get("weights", np.ones(base["id_channels"].shape[0])), dtype=float)

    targets_doc = doc.get("harvest_targets", 1e-12)
    n_eh = base["eh_channels"].shape[0]
    fraction = None
    if isinstance(targets_doc, dict) and "fraction_of_emax" in targets_doc:
        fraction = float(targets_doc["fraction_of_emax"])
        targets = np.full(n_eh, 1e-12)
    elif isinstance(targets_doc, dict):
        vals = targets_doc.get("w") or targets_doc.get("dbm")
        if vals is None:
            raise ContractViolationError("harvest_targets dict needs w, dbm, or fraction_of_emax")
        vals = np.atleast_1d(np.asarray(vals, dtype=float))
        targets = vals if "w" in targets_doc else np.array([dbm_to_watts(v) for v in vals])
        if targets.size == 1:
            targets = np.full(n_eh, float(targets[0]))
    else:
        targets = np.atleast_1d(np.asarray(targets_doc, dtype=float))
        if targets.size == 1:
            targets = np.full(n_eh, float(targets[0]))

    scenario = Scenario(
        noise_power=noise,
        sum_power=sum_power,
        harvest_targets=targets,
        weights=weights,
        harvest_efficiency=zeta,
        **base,
    )
    if fraction is not None:
        emax_w, _ = solve_emax(scenario)
        meta["emax_w"] = emax_w
        meta["e_fraction"] = fraction
        scenario = scenario.with_targets(np.full(n_eh, fraction * emax_w))
    return scenario, meta


def _complex_matrix_to_pairs(m: np.ndarray):
    return [[[float(np.real(z)), float(np.imag(z))] for z in row] for row in np.asarray(m)]


def scenario_to_doc(scenario: Scenario) -> dict:
    """Fully resolved scenario as a plain document (explicit channels, Watts)."""
    return {
        "channels": {
            "id": _complex_matrix_to_pairs(scenario.id_channels),
            "eh": _complex_matrix_to_pairs(scenario.eh_channels),
        },
        "noise_power": float(scenario.noise_power),
        "sum_power": float(scenario.sum_power),
        "harvest_targets": [float(e) for e in scenario.harvest_targets],
        "weights": [float(w) for w in scenario.weights],
        "harvest_efficiency": float(scenario.harvest_efficiency),
    }


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def scenario_digest(scenario: Scenario) -> str:
    """Stable hash of the resolved scenario content."""
    return hashlib.sha256(canonical_json(scenario_to_doc(scenario)).encode()).hexdigest()


def report_record(scenario: Scenario, report, meta=None) -> dict:
    """Deterministic result record for one solve.

    Wall-clock time is intentionally excluded so repeated runs produce
    byte-identical files; deterministic work counters stand in for it.
    """
    q = np.asarray(
        scenario.harvest_efficiency
        * np.real(
            np.einsum(
                "ja,ab,jb->j",
                np.conj(scenario.eh_channels),
                report.solution.info_covariances.sum(axis=0) + report.solution.energy_covariance,
                scenario.eh_channels,
            )
        )
    )
    iterations = {
        k: v for k, v in report.iterations.items() if isinstance(v, (int, str, float)) or v is None
    }
    record = {
        "scenario_digest": scenario_digest(scenario),
        "algorithm": report.algorithm,
        "wsr_bits": float(report.solution.wsr),
        "rates_bits": [float(r) for r in report.solution.rates],
        "encoding_order": list(report.solution.encoding_order),
        "harvested_w": [float(v) for v in q],
        "harvest_targets_w": [float(e) for e in scenario.harvest_targets],
        "case": report.case,
        "converged": bool(report.converged),
        "duality_gap_bits": None if report.duality_gap is None else float(report.duality_gap),
        "dual_bound_bits": None if report.dual_bound is None else float(report.dual_bound),
        "info_power_w": None if report.info_power is None else float(report.info_power),
        "energy_power_w": None if report.energy_power is None else float(report.energy_power),
        "expansion_used": bool(report.expansion_used),
        "work": iterations,
        "meta": meta or {},
    }
    if report.pre_expansion is not None:
        q_pre = scenario.harvest_efficiency * np.real(
            np.einsum(
                "ja,ab,jb->j",
                np.conj(scenario.eh_channels),
                report.pre_expansion.info_covariances.sum(axis=0),
                scenario.eh_channels,
            )
        )
        record["pre_expansion_harvested_w"] = [float(v) for v in q_pre]
    return record


def write_record(path: str, record: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, sort_keys=True, indent=2)
        fh.write("\n")


def format_csv_value(v) -> str:
    if isinstance(v, float):
        if np.isnan(v):
            return "nan"
        return FLOAT_FMT % v
    return str(v)


def write_csv(path: str, header: list, rows: list):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_csv_value(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
