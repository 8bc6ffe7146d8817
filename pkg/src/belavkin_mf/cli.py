"""Command line interface: config ingestion, subcommand dispatch, result
persistence.

Exit codes: 0 success, 2 config error, 3 numerical abort, 4 property-check
failure.  Errors also emit one machine-readable JSON object on stderr.
Artifacts are written atomically (temp file + rename) under
<output.directory>/<run-id>/, where the run id derives from the config hash
and seed, so identical (config, seed) runs land in the same place with
identical bytes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from . import config as cfg
from .harness import (
    DELTA_HEADER,
    H1_HEADER,
    INDICATORS_HEADER,
    NORM_DRIFT_HEADER,
    RESIDUALS_HEADER,
    precompute_xi,
    run_convergence,
    run_delta_sweep,
    write_atomic,
    write_csv,
)
from .meanfield import NumericalAbortError, PicardNonConvergenceError
from .nbody import NBodyIntegrator, tensor_power
from .operator_lab import run_property_suite
from .streams import DOMAIN_EXPERIMENT, BrownianDriver, StreamAuditError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_PROPERTY = 4


def _emit_error(kind: str, message: str, pointer: str = ""):
    payload = {"error": {"kind": kind, "message": message}}
    if pointer:
        payload["error"]["pointer"] = pointer
    print(json.dumps(payload), file=sys.stderr)


def _json_dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _run_dir(config: dict, seed: int) -> str:
    run_id = f"{cfg.config_hash(config)[:12]}-s{seed}"
    return os.path.join(config["output"]["directory"], run_id)


def _effective(args) -> tuple:
    config = cfg.load_config(args.config)
    if args.out is not None:
        config["output"]["directory"] = args.out
    seed = int(args.seed) if args.seed is not None else int(config["mc"]["master_seed"])
    config["mc"]["master_seed"] = seed
    return config, seed


def _manifest_extras(config):
    return {"version": __version__, "config_hash": cfg.config_hash(config)}


def cmd_simulate_mf(args) -> int:
    config, seed = _effective(args)
    out = _run_dir(config, seed)
    xi, mf_result = precompute_xi(config, seed)
    stride = int(config["output"]["sample_stride"])
    K = xi.times.size - 1
    samples = list(range(0, K + 1, stride))
    if samples[-1] != K:
        samples.append(K)

    drift_rows = []
    for rep, traj in enumerate(mf_result.trajectories):
        for k in samples:
            drift_rows.append((float(traj.times[k]), 1, rep, float(traj.norm_drift[k])))
    write_csv(os.path.join(out, "norm_drift.csv"), NORM_DRIFT_HEADER, drift_rows)

    from .meanfield import h1_moment_series

    series = h1_moment_series(mf_result.trajectories, p=4)
    h1_rows = [(float(xi.times[k]), float(series[k])) for k in samples]
    write_csv(os.path.join(out, "h1_moments.csv"), H1_HEADER, h1_rows)

    residuals = list(getattr(mf_result, "residuals", []))
    if config["meanfield"]["mode"] == "picard":
        rows = [(i + 1, float(r)) for i, r in enumerate(residuals)]
        write_csv(os.path.join(out, "picard_residuals.csv"), RESIDUALS_HEADER, rows)

    manifest = {
        "experiment": "simulate-mf",
        "config": config,
        "master_seed": seed,
        "picard_residuals": residuals,
        **_manifest_extras(config),
    }
    write_atomic(os.path.join(out, "manifest.json"), _json_dump(manifest))
    print(out)
    return EXIT_OK


def cmd_simulate_nbody(args) -> int:
    config, seed = _effective(args)
    out = _run_dir(config, seed)
    grid = cfg.build_grid(config)
    L = cfg.build_coupling(grid, config)
    V = cfg.build_potential(grid, config)
    u0 = cfg.build_initial(grid, config)
    params = cfg.build_params(config)
    K = int(round(float(config["time"]["T"]) / params.dt))
    stride = int(config["output"]["sample_stride"])
    samples = set(range(0, K + 1, stride)) | {K}
    budget = float(config["nbody"]["memory_budget_mb"])

    drift_rows = []
    for n_particles in sorted(int(n) for n in config["nbody"]["N_list"]):
        integ = NBodyIntegrator(grid, n_particles, params, L, V, budget_mb=budget)
        for rep in range(int(config["mc"]["repetitions"])):
            driver = BrownianDriver(seed, params.dt, domain=DOMAIN_EXPERIMENT)
            dWs = np.stack(
                [driver.increments(rep, j, K) for j in range(n_particles)]
            )
            Psi = tensor_power(u0, n_particles, budget_mb=budget)
            for k in range(K + 1):
                if k in samples:
                    drift_rows.append(
                        (k * params.dt, n_particles, rep, float(Psi.l2_norm() - 1.0))
                    )
                if k < K:
                    Psi = integ.step(Psi, dWs[:, k])
    write_csv(os.path.join(out, "norm_drift.csv"), NORM_DRIFT_HEADER, drift_rows)
    manifest = {
        "experiment": "simulate-nbody",
        "config": config,
        "master_seed": seed,
        **_manifest_extras(config),
    }
    write_atomic(os.path.join(out, "manifest.json"), _json_dump(manifest))
    print(out)
    return EXIT_OK


def cmd_converge(args) -> int:
    config, seed = _effective(args)
    out = _run_dir(config, seed)
    result = run_convergence(config, threads=args.threads, master_seed=seed)
    write_csv(os.path.join(out, "indicators.csv"), INDICATORS_HEADER,
              result.indicator_rows)
    write_csv(os.path.join(out, "norm_drift.csv"), NORM_DRIFT_HEADER,
              result.norm_drift_rows)
    write_atomic(os.path.join(out, "manifest.json"), _json_dump(result.manifest))
    print(out)
    return EXIT_OK


def cmd_delta_sweep(args) -> int:
    config, seed = _effective(args)
    out = _run_dir(config, seed)
    result = run_delta_sweep(config, threads=args.threads, master_seed=seed)
    write_csv(os.path.join(out, "delta.csv"), DELTA_HEADER, result.delta_rows)
    write_csv(os.path.join(out, "h1_moments.csv"), H1_HEADER, result.h1_moments)
    write_atomic(os.path.join(out, "manifest.json"), _json_dump(result.manifest))
    print(out)
    return EXIT_OK


def cmd_proptest_operators(args) -> int:
    config, seed = _effective(args)
    out = _run_dir(config, seed)
    knobs = config.get("proptest", {})
    reports = run_property_suite(
        master_seed=seed,
        prodproj_samples=int(knobs.get("prodproj_samples", 10_000)),
        hs_samples=int(knobs.get("hs_samples", 10_000)),
        kolokoltsov_samples=int(knobs.get("kolokoltsov_samples", 100_000)),
        p3_samples=int(knobs.get("p3_samples", 10_000)),
        norm_chain_samples=int(knobs.get("norm_chain_samples", 10_000)),
        dims=tuple(knobs.get("dims", (2, 4, 8, 16))),
    )
    payload = {
        "master_seed": seed,
        "checks": reports,
        **_manifest_extras(config),
    }
    write_atomic(os.path.join(out, "report.json"), _json_dump(payload))
    print(out)
    failures = sum(r["failures"] for r in reports)
    if failures:
        _emit_error("property", f"{failures} property-check failures; see report.json")
        return EXIT_PROPERTY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="belavkin-mf",
        description="Mean-field Belavkin dynamics simulator and verification lab",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "simulate-mf": cmd_simulate_mf,
        "simulate-nbody": cmd_simulate_nbody,
        "converge": cmd_converge,
        "delta-sweep": cmd_delta_sweep,
        "proptest-operators": cmd_proptest_operators,
    }
    env_threads = os.environ.get("BELAVKIN_MF_THREADS")
    default_threads = int(env_threads) if env_threads else 1
    for name, fn in commands.items():
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="override mc.master_seed")
        p.add_argument("--out", default=None, help="override output.directory")
        p.add_argument("--threads", type=int, default=default_threads,
                       help="worker processes (must not change results)")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except cfg.ConfigError as exc:
        _emit_error("config", str(exc), pointer=getattr(exc, "pointer", ""))
        return EXIT_CONFIG
    except (NumericalAbortError, PicardNonConvergenceError) as exc:
        _emit_error("numerical", str(exc))
        return EXIT_NUMERICAL
    except StreamAuditError as exc:
        _emit_error("property", str(exc))
        return EXIT_PROPERTY
    except (ValueError, MemoryError) as exc:
        _emit_error("config", str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
