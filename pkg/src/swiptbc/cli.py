"""Command-line front end.

Subcommands: feasibility, emax, solve, region, montecarlo. Scenario files
are JSON (see scenario_io); outputs are deterministic JSON records or CSV.
Exit codes: 0 success, 1 usage or parse error, 2 infeasible problem,
3 solver non-convergence. SWIPT_THREADS caps worker parallelism.
"""

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import scenario_io as sio
from .algorithms import ALGORITHMS, _max_workers, capacity_region, require_feasible, solve_optimal
from .errors import ContractViolationError, InfeasibleError, SwiptError
from .model import GeneratorConfig, generate_scenario, harvested_powers
from .sdp import feasibility_margin, solve_emax

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_NONCONVERGED = 3


def _load(path: str):
    try:
        return sio.load_scenario(path)
    except FileNotFoundError as err:
        raise ContractViolationError(f"cannot read scenario file: {err}")
    except json.JSONDecodeError as err:
        raise ContractViolationError(
            f"parse error in {path} at line {err.lineno}, column {err.colno}: {err.msg}"
        )


def cmd_feasibility(args) -> int:
    scenario, _ = _load(args.scenario)
    margin, _sol = feasibility_margin(scenario)
    scale = float(np.max(scenario.harvest_targets))
    feasible = margin >= -1e-9 * max(scale, 1e-12)
    print(f"harvest targets: {', '.join(sio.format_power(e) for e in scenario.harvest_targets)}")
    print(f"uniform harvest margin: {margin:.9g} W")
    print("feasible" if feasible else "infeasible")
    return EXIT_OK if feasible else EXIT_INFEASIBLE


def cmd_emax(args) -> int:
    scenario, _ = _load(args.scenario)
    emax_w, s_e = solve_emax(scenario)
    print(f"E_max: {sio.format_power(emax_w)}")
    q = harvested_powers(scenario, np.zeros((1,) + s_e.shape, dtype=complex), s_e)
    eigs = np.linalg.eigvalsh(s_e)
    print(f"achieving energy covariance: trace {np.real(np.trace(s_e)):.9g} W, "
          f"rank {int(np.sum(eigs > 1e-9 * max(eigs[-1], 1e-300)))}")
    for j, qj in enumerate(q):
        print(f"  EH receiver {j}: harvested {sio.format_power(float(qj))}")
    return EXIT_OK


def cmd_solve(args) -> int:
    scenario, meta = _load(args.scenario)
    algorithm = args.algorithm
    if algorithm not in ALGORITHMS:
        raise ContractViolationError(f"unknown algorithm {algorithm!r}")
    t0 = time.perf_counter()
    report = ALGORITHMS[algorithm](scenario)
    wall = time.perf_counter() - t0

    print(f"algorithm: {algorithm}   case: {report.case}   wall time: {wall:.3f} s")
    print(f"weighted sum rate: {report.solution.wsr:.12g} bits/s/Hz")
    for i, r in enumerate(report.solution.rates):
        print(f"  ID receiver {i}: rate {r:.12g} bits/s/Hz (weight {scenario.weights[i]:g})")
    q = harvested_powers(scenario, report.solution.info_covariances, report.solution.energy_covariance)
    q_pre = None
    if report.pre_expansion is not None:
        q_pre = harvested_powers(
            scenario, report.pre_expansion.info_covariances, report.pre_expansion.energy_covariance
        )
    for j, (qj, ej) in enumerate(zip(q, scenario.harvest_targets)):
        mark = "ok" if qj >= ej * (1 - 1e-6) else "SHORT"
        pre = "" if q_pre is None else f" (pre-expansion {sio.format_power(float(q_pre[j]))})"
        print(f"  EH receiver {j}: harvested {sio.format_power(float(qj))} vs target {sio.format_power(float(ej))} [{mark}]{pre}")
    if report.duality_gap is not None:
        print(f"duality gap: {report.duality_gap:.3e} bits/s/Hz (dual bound {report.dual_bound:.12g})")
    if report.info_power is not None:
        print(f"information power split P_I*: {sio.format_power(report.info_power)}")
    if report.energy_power is not None:
        print(f"energy signal power: {sio.format_power(report.energy_power)}")
    if report.verification.violations:
        print("constraint audit flagged:")
        for v in report.verification.violations:
            print(f"  - {v}")

    if args.out:
        sio.write_record(args.out, sio.report_record(scenario, report, meta))
        print(f"record written to {args.out}")
    return EXIT_OK if report.converged else EXIT_NONCONVERGED


def cmd_region(args) -> int:
    scenario, meta = _load(args.scenario)
    if scenario.n_id != 2:
        raise ContractViolationError("region sweeps need exactly two ID receivers")
    algorithms = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    for a in algorithms:
        if a not in ALGORITHMS:
            raise ContractViolationError(f"unknown algorithm {a!r}")
    points = capacity_region(
        scenario,
        weight_grid=args.grid,
        algorithms=algorithms,
        include_baseline=args.baseline,
    )
    header = ["t", "alpha1", "alpha2", "algorithm", "r1", "r2", "wsr", "case"]
    rows = []
    failures = 0
    for pt in points:
        if pt.failed:
            failures += 1
            print(f"point t={pt.t:g} algorithm={pt.algorithm} failed: {pt.failed}", file=sys.stderr)
        rows.append([
            float(pt.t), float(pt.weights[0]), float(pt.weights[1]), pt.algorithm,
            float(pt.rates[0]), float(pt.rates[1]), float(pt.wsr),
            "failed" if pt.failed else pt.case,
        ])
    sio.write_csv(args.out, header, rows)
    print(f"{len(rows)} region points written to {args.out} ({failures} failed)")
    return EXIT_OK


def _montecarlo_trial(gen_doc, seed, fractions, algorithms):
    config = GeneratorConfig(seed=0, **gen_doc.get("generator_options", {}))
    scenario = generate_scenario(
        config,
        int(gen_doc["n_tx"]), int(gen_doc["n_id"]), int(gen_doc["n_eh"]),
        sum_power=float(gen_doc.get("sum_power", 5.0)),
        noise_power=float(gen_doc.get("noise_power", 1e-8)),
        harvest_efficiency=float(gen_doc.get("harvest_efficiency", 1.0)),
        seed=seed,
    )
    emax_w, _ = solve_emax(scenario)
    out = {}
    for frac in fractions:
        sc = scenario.with_targets(np.full(scenario.n_eh, max(frac, 1e-12) * emax_w))
        for algo in algorithms:
            try:
                require_feasible(sc)
                report = ALGORITHMS[algo](sc)
                out[(frac, algo)] = float(report.solution.wsr)
            except InfeasibleError:
                out[(frac, algo)] = None
            except SwiptError as err:
                out[(frac, algo)] = None
                print(f"trial seed {seed} {algo} at fraction {frac} failed: {err}", file=sys.stderr)
    return out


def cmd_montecarlo(args) -> int:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            gen_doc = json.load(fh)
    except FileNotFoundError as err:
        raise ContractViolationError(f"cannot read generator config: {err}")
    except json.JSONDecodeError as err:
        raise ContractViolationError(
            f"parse error in {args.config} at line {err.lineno}, column {err.colno}: {err.msg}"
        )
    fractions = [float(x) for x in args.evalues.split(",") if x.strip() != ""]
    algorithms = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    for a in algorithms:
        if a not in ALGORITHMS:
            raise ContractViolationError(f"unknown algorithm {a!r}")
    master = args.master_seed if args.master_seed is not None else int(gen_doc.get("master_seed", 0))
    seeds = sio.trial_seeds(master, args.trials)

    workers = min(_max_workers(), max(args.trials, 1))
    if workers == 1:
        results = [_montecarlo_trial(gen_doc, s, fractions, algorithms) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(lambda s: _montecarlo_trial(gen_doc, s, fractions, algorithms), seeds)
            )

    header = [
        "e_fraction", "algorithm", "trials", "used", "infeasible",
        "mean_sum_rate", "stderr_sum_rate",
    ]
    rows = []
    for frac in fractions:
        for algo in algorithms:
            vals = [r[(frac, algo)] for r in results]
            used = [v for v in vals if v is not None]
            n_inf = sum(1 for v in vals if v is None)
            mean = float(np.mean(used)) if used else np.nan
            stderr = float(np.std(used, ddof=1) / np.sqrt(len(used))) if len(used) > 1 else 0.0
            rows.append([float(frac), algo, len(vals), len(used), n_inf, mean, stderr])
    sio.write_csv(args.out, header, rows)
    print(f"{len(rows)} aggregate rows written to {args.out} (master seed {master})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swiptbc",
        description="Capacity-region solver for broadcast channels with simultaneous "
                    "information and power transfer",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("feasibility", help="check whether the harvest targets are achievable")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_feasibility)

    p = sub.add_parser("emax", help="largest common harvest target under the power budget")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_emax)

    p = sub.add_parser("solve", help="run one solver on a scenario")
    p.add_argument("scenario")
    p.add_argument("--algorithm", default="optimal", choices=sorted(ALGORITHMS))
    p.add_argument("--out", default=None, help="write a JSON result record here")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("region", help="sweep rate-region weights for two ID receivers")
    p.add_argument("scenario")
    p.add_argument("--grid", type=int, default=41)
    p.add_argument("--algorithms", default="optimal")
    p.add_argument("--baseline", action="store_true",
                   help="add the series without harvest constraints")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_region)

    p = sub.add_parser("montecarlo", help="average sum rate over random channels")
    p.add_argument("config", help="generator config JSON (counts, powers, master_seed)")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--evalues", default="0,0.25,0.5,0.75,0.9",
                   help="comma-separated harvest fractions of E_max")
    p.add_argument("--algorithms", default="optimal,idsied,ehsied")
    p.add_argument("--master-seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_montecarlo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_USAGE if err.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ContractViolationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleError as err:
        print(f"infeasible: {err}", file=sys.stderr)
        if err.certificate is not None and "margin_w" in err.certificate:
            print(f"best uniform harvest margin: {err.certificate['margin_w']:.9g} W", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SwiptError as err:
        print(f"solver error: {err}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
