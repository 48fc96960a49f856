#!/usr/bin/env python3
"""
Stability experiments: batch runner

What this does
--------------
Reads a JSON experiment config (schema: `python run_experiment.py schema`),
runs one analysis on the configured model and writes the results as files:

    equilibria      -> equilibria.json
    simulate        -> simulate.json + trajectory.csv
                       (n_paths > 1: ensemble.json + ensemble_final.csv)
    stationary      -> stationary.json + histogram.csv
    sweep           -> sweep.json + histogram_<i>.csv per eps
    quasipotential  -> quasipotential.json + path.csv
    verify          -> verify.json (H1-H3 grid checks, monotonicity)
    table1          -> table1.json + table1.csv (four Griffith regimes)

Standard output carries a short summary only. Result files hold no
timestamps, so equal config + seed give byte-identical files whatever the
thread count.

Env
----
STABILITY_X_MAX       blow-up guard (default 1e6)
STABILITY_THREADS     default --threads (default 1)
STABILITY_OUTPUT_DIR  default --out (default "results")
STABILITY_LOG_LEVEL   default "INFO"

CLI
---
python run_experiment.py <command> --config cfg.json [--seed N] [--out DIR] [--threads N]

Exit codes: 0 success, 2 invalid config, 3 numerical failure (partial
outputs are written with "partial": true and a .partial.csv suffix).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import pathlib
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from action import escape_action_bound, escape_path, quasipotential
from equilibria import classify_griffith, detect_stationary_arc, newton_equilibria
from errors import BlowUpError, ConfigError, DimensionMismatchError, NumericalFailure
from experiment_models import (
    EquilibriaBlock,
    ExperimentConfig,
    Table1Block,
    V0Point,
    VerifyBlock,
)
from flow import check_monotonicity
from measure import (
    HistogramGrid,
    SweepSettings,
    concentration_sweep,
    estimate_stationary,
    griffith_sweep_targets,
    table1_predict,
)
from models import (
    GriffithParams,
    Model,
    annulus_grid,
    box_grid,
    build_model,
    check_cooperative,
    check_dissipative,
    check_irreducible,
    griffith_h2_constants,
    griffith_h3_constants,
    griffith_linear_part,
    griffith_model,
    solve_lyapunov,
    verify_h2,
    verify_h3,
)
from order import as_point
from sde import ensemble, ensemble_summary, simulate, split_seed
from settings import DEFAULT_X_MAX, configure_logging, get_logger, get_settings

logger = get_logger("cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

COMMANDS = ("equilibria", "simulate", "stationary", "sweep", "quasipotential", "verify", "table1", "schema")


# ----------------------------
# Files
# ----------------------------
def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path: pathlib.Path, payload: Dict[str, Any]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n")


def load_config(path: str | pathlib.Path) -> ExperimentConfig:
    try:
        raw = json.loads(pathlib.Path(path).read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON in {path}: {e}") from e
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid config {path}:\n{e}") from e


# ----------------------------
# Run context
# ----------------------------
@dataclass
class RunContext:
    config: ExperimentConfig
    out_dir: pathlib.Path
    seed: int
    threads: int
    x_max: float
    model: Optional[Model] = None

    @property
    def griffith(self) -> Optional[GriffithParams]:
        if self.model is not None and isinstance(self.model.params, GriffithParams):
            return self.model.params
        return None

    def require_model(self) -> Model:
        if self.model is None:
            raise ConfigError("config has no 'model'")
        return self.model

    def block(self, name: str):
        block = getattr(self.config, name)
        if block is None:
            raise ConfigError(f"config has no '{name}' block")
        return block

    def point(self, value) -> np.ndarray:
        model = self.require_model()
        if isinstance(value, V0Point):
            return value.v0 * self.griffith.v0
        x = as_point(value)
        if x.size != model.dim:
            raise DimensionMismatchError(model.dim, x.size)
        return x


def _context(config: ExperimentConfig, overrides: Dict[str, Any], settings) -> RunContext:
    seed = overrides.get("seed")
    seed = config.master_seed if seed is None else int(seed)
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
    threads = next(v for v in (overrides.get("threads"), config.threads, settings.threads) if v is not None)
    if threads < 1:
        raise ConfigError("--threads must be >= 1")
    out = overrides.get("out") or config.output_dir or settings.output_dir
    model = build_model(config.model) if config.model is not None else None
    return RunContext(config, pathlib.Path(out), seed, int(threads), settings.x_max, model)


# ----------------------------
# Commands
# ----------------------------
def cmd_equilibria(ctx: RunContext) -> int:
    model = ctx.require_model()
    block = ctx.config.equilibria or EquilibriaBlock()
    payload: Dict[str, Any] = {"model": model.name}
    records = []
    if ctx.griffith is not None:
        summary = classify_griffith(ctx.griffith)
        payload["griffith"] = summary.to_dict()
        records = summary.records
    elif not block.seeds:
        raise ConfigError("equilibria of a non-Griffith model need Newton 'seeds'")
    if block.seeds:
        search = newton_equilibria(model, [ctx.point(s) for s in block.seeds], tol=block.newton_tol, x_max=ctx.x_max)
        payload["newton"] = {"equilibria": [rec.to_dict() for rec in search.records], "failures": search.failures}
        if ctx.griffith is None:
            records = search.records
    payload["arcs"] = [arc.to_dict() for arc in detect_stationary_arc(records, block.arc_tol)]
    write_json(ctx.out_dir / "equilibria.json", payload)
    n_stable = sum(rec.to_dict()["verdict"] == "asymptotically_stable" for rec in records)
    print(f"[ok] {len(records)} equilibria ({n_stable} stable) -> {ctx.out_dir / 'equilibria.json'}")
    return EXIT_OK


def cmd_simulate(ctx: RunContext) -> int:
    model = ctx.require_model()
    block = ctx.block("simulate")
    x0 = ctx.point(block.x0)
    if block.n_paths == 1:
        try:
            run = simulate(model, x0, block.eps, block.T, block.step, split_seed(ctx.seed, 0), block.record_every or 1, ctx.x_max)
        except BlowUpError as e:
            partial = e.partial
            partial.trajectory.to_csv(_mkdir(ctx.out_dir) / "trajectory.partial.csv")
            write_json(ctx.out_dir / "simulate.json", {**partial.to_dict(), "partial": True, "error": str(e)})
            print(f"[warn] blow-up at t={e.time:.6g}; partial trajectory written", file=sys.stderr)
            return EXIT_NUMERICAL
        run.trajectory.to_csv(_mkdir(ctx.out_dir) / "trajectory.csv")
        write_json(ctx.out_dir / "simulate.json", {**run.to_dict(), "partial": False})
        print(f"[ok] path to T={block.T:g}, final state {np.round(run.trajectory.final, 6).tolist()}")
        return EXIT_OK

    runs = ensemble(model, x0, block.eps, block.T, block.step, block.n_paths, ctx.seed, ctx.threads, block.record_every, ctx.x_max)
    summary = ensemble_summary(runs)
    partial = summary["blowups"] > 0
    finals = np.array([[i, *run.trajectory.final, int(run.blew_up)] for i, run in enumerate(runs)])
    header = ",".join(["path"] + [f"x{k + 1}" for k in range(model.dim)] + ["blew_up"])
    name = "ensemble_final.partial.csv" if partial else "ensemble_final.csv"
    np.savetxt(_mkdir(ctx.out_dir) / name, finals, delimiter=",", header=header, comments="", fmt="%.17g")
    write_json(ctx.out_dir / "ensemble.json", {**summary, "partial": partial, "runs": [run.to_dict() for run in runs]})
    if partial:
        print(f"[warn] {summary['blowups']} of {block.n_paths} paths blew up", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"[ok] {block.n_paths} paths to T={block.T:g}, mean final {np.round(summary['moments']['mean'], 6).tolist()}")
    return EXIT_OK


def _default_equilibria(ctx: RunContext) -> List[np.ndarray]:
    if ctx.griffith is not None:
        return [rec.point for rec in classify_griffith(ctx.griffith).records]
    return []


def cmd_stationary(ctx: RunContext) -> int:
    model = ctx.require_model()
    block = ctx.block("stationary")
    eq = [ctx.point(p) for p in block.equilibria] if block.equilibria is not None else _default_equilibria(ctx)
    x0 = ctx.point(block.x0) if block.x0 is not None else np.zeros(model.dim)
    scale = ctx.griffith.v0 if ctx.griffith is not None else None
    grid = HistogramGrid.around(eq + [x0], bins=block.bins)
    est = estimate_stationary(
        model, block.eps, block.T_total, block.step, block.burn_in, split_seed(ctx.seed, 0), grid, eq, x0,
        block.delta, scale, x_max=ctx.x_max,
    )
    name = "histogram.csv" if est.valid else "histogram.partial.csv"
    est.histogram_to_csv(_mkdir(ctx.out_dir) / name)
    write_json(ctx.out_dir / "stationary.json", {**est.to_dict(), "partial": not est.valid})
    if not est.valid:
        print(f"[warn] stationary estimate invalid: {est.note}", file=sys.stderr)
        return EXIT_NUMERICAL
    masses = ", ".join(f"{np.round(b['point'], 4).tolist()}: {b['mass']:.4f}" for b in est.ball_masses)
    print(f"[ok] eps={block.eps:g}: {est.n_samples} samples; ball masses {masses or 'n/a'}")
    return EXIT_OK


def cmd_sweep(ctx: RunContext) -> int:
    model = ctx.require_model()
    block = ctx.block("sweep")
    predicted, scale, marginal = None, None, False
    stable = [ctx.point(p) for p in block.stable] if block.stable is not None else None
    unstable = [ctx.point(p) for p in block.unstable]
    if ctx.griffith is not None:
        targets = griffith_sweep_targets(ctx.griffith)
        predicted, scale, marginal = targets.predicted, targets.scale, targets.marginal
        if stable is None:
            stable, unstable = targets.stable, targets.unstable
    if stable is None:
        raise ConfigError("sweep of a non-Griffith model needs 'stable' points")
    settings = SweepSettings(
        T_base=block.T_base,
        step=block.step,
        burn_in=block.burn_in,
        delta=block.delta,
        eps_ref=block.eps_ref,
        T_cap=block.T_cap,
        master_seed=ctx.seed,
        x0=None if block.x0 is None else ctx.point(block.x0),
        bins=block.bins,
        threads=ctx.threads,
        x_max=ctx.x_max,
    )
    report = concentration_sweep(model, block.eps_list, settings, stable, unstable, predicted, scale, marginal)
    partial = any(row.error is not None for row in report.rows)
    for i, row in enumerate(report.rows):
        if row.estimate is not None:
            suffix = ".partial.csv" if row.error else ".csv"
            row.estimate.histogram_to_csv(_mkdir(ctx.out_dir) / f"histogram_{i}{suffix}")
    write_json(ctx.out_dir / "sweep.json", {**report.to_dict(), "partial": partial})
    for row in report.rows:
        tag = "[warn]" if row.error else "[info]"
        print(f"{tag} eps={row.eps:g}: stable {row.stable_mass:.4f}, unstable {row.unstable_mass:.4f}")
    print(f"[ok] monotone={report.monotone} agreement={report.agreement} -> {ctx.out_dir / 'sweep.json'}")
    return EXIT_NUMERICAL if partial else EXIT_OK


def cmd_quasipotential(ctx: RunContext) -> int:
    model = ctx.require_model()
    block = ctx.block("quasipotential")
    x, y = ctx.point(block.x), ctx.point(block.y)
    seeds = []
    payload: Dict[str, Any] = {}
    if block.escape is not None:
        esc = block.escape
        arc = [ctx.point(p) for p in esc.arc] if esc.arc else None
        path = escape_path(model, x, esc.delta, v=esc.v, z=y, arc=arc, eta=esc.eta)
        seeds.append(path)
        payload["escape"] = {"action": path.action, "T": path.T, "n_intervals": path.n_intervals}
        if esc.delta > 0:
            payload["escape"]["bound"] = escape_action_bound(model, x, y, esc.delta)
    est = quasipotential(
        model, x, y, block.T_grid, block.n_nodes, seeds=seeds, threads=ctx.threads,
        target_eta=block.target_eta, max_iters=block.max_iters, grad_tol=block.grad_tol, metric=block.metric,
    )
    est.path.to_csv(_mkdir(ctx.out_dir) / "path.csv")
    write_json(ctx.out_dir / "quasipotential.json", {**est.to_dict(), **payload})
    print(f"[ok] V({x.tolist()} -> {y.tolist()}) ~ {est.value:.6g} (T={est.T:g}, {est.source})")
    return EXIT_OK


def cmd_verify(ctx: RunContext) -> int:
    model = ctx.require_model()
    block = ctx.config.verify or VerifyBlock()
    r = model.dim
    box = box_grid([-block.box] * r, [block.box] * r, block.grid_n)
    A = griffith_linear_part(ctx.griffith) if ctx.griffith is not None else model.jac(np.zeros(r))
    V = solve_lyapunov(A)

    constants: Dict[str, Optional[float]] = {"gamma": None, "eps0": block.eps0, "R": None, "theta": None, "eta": None, "C": None, "M": None}
    if ctx.griffith is not None:
        constants.update(griffith_h2_constants(ctx.griffith, V, block.eps0))
        constants.update(griffith_h3_constants(ctx.griffith, V))
    for key in ("gamma", "R", "theta", "eta", "C", "M"):
        if getattr(block, key) is not None:
            constants[key] = getattr(block, key)

    reports = [check_cooperative(model, box), check_irreducible(model, box)]
    notes = []
    R = constants["R"]
    if R is not None:
        annulus = annulus_grid(r, R, max(block.R_max, 2 * R))
        reports.append(check_dissipative(model, V, R, annulus))
        if constants["gamma"] is not None:
            reports.append(verify_h2(model, V, constants["gamma"], constants["eps0"], R, annulus))
        else:
            notes.append("H2 skipped: no gamma")
    else:
        notes.append("dissipativity and H2 skipped: no R")
    if all(constants[k] is not None for k in ("theta", "eta", "C", "M")):
        grid = np.vstack([box, annulus_grid(r, block.box, block.R_max)])
        reports.append(verify_h3(model, V, constants["theta"], constants["eta"], constants["C"], constants["M"], grid))
    else:
        notes.append("H3 skipped: theta, eta, C and M are required")

    # f'(0) = 0 for m > 1, so strong order is only checked away from x_r = 0
    exclude = r - 1 if ctx.griffith is not None and ctx.griffith.m > 1 else None
    mono = check_monotonicity(
        model, n_pairs=block.n_pairs, T=block.monotone_T, rng_seed=split_seed(ctx.seed, 0), exclude_axis=exclude
    )
    payload = {
        "model": model.name,
        "lyapunov": {"B": V.B, "residual": V.residual, "min_eig": V.min_eig},
        "constants": constants,
        "reports": [rep.to_dict() for rep in reports],
        "monotonicity": mono.to_dict(),
        "notes": notes,
        "all_passed": all(rep.passed for rep in reports) and mono.passed,
    }
    write_json(ctx.out_dir / "verify.json", payload)
    for rep in reports:
        print(f"[info] {rep.check} ({rep.which}): {'PASS' if rep.passed else 'FAIL'} on grid, margin {rep.margin:.4g}")
    print(f"[info] monotonicity: {mono.weak_violations} weak / {mono.strong_violations} strong violations")
    print(f"[ok] all_passed={payload['all_passed']} -> {ctx.out_dir / 'verify.json'}")
    return EXIT_OK


# ----------------------------
# Table-1 reproduction
# ----------------------------
def _same_points(a: List[np.ndarray], b: List[np.ndarray], atol: float = 1e-8) -> bool:
    if len(a) != len(b):
        return False
    return all(any(np.allclose(p, q, atol=atol) for q in b) for p in a)


def _table1_row(index: int, m: float, phi: float, block: Table1Block, seed: int, x_max: float) -> Dict[str, Any]:
    p = GriffithParams((phi, 1.0), m)
    prediction = table1_predict(m, phi)
    targets = griffith_sweep_targets(p)
    row: Dict[str, Any] = {
        "m": m,
        "phi": phi,
        "regime": prediction.regime,
        "marginal": prediction.marginal,
        "predicted_multipliers": list(prediction.multipliers),
        "stable_set": [x.tolist() for x in targets.stable],
        "classification_match": _same_points(targets.stable, prediction.points(p.v0)),
        "stable_mass": None,
        "unstable_mass": None,
        "agreement": None,
        "error": None,
    }
    if prediction.marginal:
        row["note"] = "marginal boundary: no Monte-Carlo claim"
        return row
    settings = SweepSettings(
        T_base=block.T_base,
        step=block.step,
        burn_in=block.burn_in,
        delta=block.delta,
        eps_ref=0.05,
        T_cap=block.T_cap,
        master_seed=split_seed(seed, index),
        x0=block.x0_multiplier * p.v0,
        x_max=x_max,
    )
    report = concentration_sweep(
        griffith_model(p), [block.eps], settings, targets.stable, targets.unstable, targets.predicted, targets.scale, False
    )
    last = report.rows[-1]
    row.update(
        stable_mass=last.stable_mass,
        unstable_mass=last.unstable_mass,
        agreement=report.agreement,
        error=last.error,
        T_total=last.T_total,
        occupied=report.occupied,
    )
    return row


def reproduce_table1(
    output_dir: str | pathlib.Path,
    seed: int = 0,
    threads: int = 1,
    block: Optional[Table1Block] = None,
    x_max: float = DEFAULT_X_MAX,
) -> Dict[str, Any]:
    """Classify, simulate and compare the Griffith regimes of ``block.rows``.

    Row i draws from split_seed(seed, i); the spectral columns do not depend
    on the seed. Writes table1.json and table1.csv to ``output_dir``.
    """
    block = block or Table1Block()
    out = _mkdir(pathlib.Path(output_dir))
    jobs = list(enumerate(block.rows))

    def run(job) -> Dict[str, Any]:
        i, (m, phi) = job
        return _table1_row(i, m, phi, block, seed, x_max)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(job) for job in jobs]

    checked = [row for row in rows if not row["marginal"]]
    report = {
        "eps": block.eps,
        "delta": block.delta,
        "seed": seed,
        "rows": rows,
        "all_agree": all(row["classification_match"] for row in rows) and all(row["agreement"] for row in checked),
    }
    write_json(out / "table1.json", report)

    fields = ["m", "phi", "regime", "marginal", "predicted_multipliers", "classification_match", "stable_mass", "unstable_mass", "agreement"]
    with open(out / "table1.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            values = []
            for f in fields:
                v = row[f]
                if f == "predicted_multipliers":
                    v = " ".join(repr(float(z)) for z in v)
                elif isinstance(v, float):
                    v = repr(v)
                values.append("" if v is None else v)
            writer.writerow(values)
    return report


def cmd_table1(ctx: RunContext) -> int:
    block = ctx.config.table1 or Table1Block()
    report = reproduce_table1(ctx.out_dir, ctx.seed, ctx.threads, block, ctx.x_max)
    for row in report["rows"]:
        if row["marginal"]:
            print(f"[info] m={row['m']:g} phi={row['phi']:g}: marginal, no Monte-Carlo claim")
        else:
            print(
                f"[info] m={row['m']:g} phi={row['phi']:g}: {row['regime']} stable {row['stable_mass']:.4f} "
                f"unstable {row['unstable_mass']:.4f} agreement={row['agreement']}"
            )
    print(f"[ok] all_agree={report['all_agree']} -> {ctx.out_dir / 'table1.json'}")
    return EXIT_NUMERICAL if any(row["error"] for row in report["rows"]) else EXIT_OK


HANDLERS: Dict[str, Callable[[RunContext], int]] = {
    "equilibria": cmd_equilibria,
    "simulate": cmd_simulate,
    "stationary": cmd_stationary,
    "sweep": cmd_sweep,
    "quasipotential": cmd_quasipotential,
    "verify": cmd_verify,
    "table1": cmd_table1,
}


def _mkdir(path: pathlib.Path) -> pathlib.Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def run(command: str, config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> int:
    """Run one command; returns the process exit code."""
    overrides = overrides or {}
    try:
        settings = get_settings()
        if command == "schema":
            print(json.dumps(ExperimentConfig.model_json_schema(), sort_keys=True, indent=2))
            return EXIT_OK
        if command not in HANDLERS:
            raise ConfigError(f"unknown command {command!r}")
        if config_path is not None:
            config = load_config(config_path)
        elif command == "table1":
            config = ExperimentConfig()
        else:
            raise ConfigError(f"'{command}' needs --config")
        ctx = _context(config, overrides, settings)
        logger.info("running %s (seed=%d, threads=%d, out=%s)", command, ctx.seed, ctx.threads, ctx.out_dir)
        return HANDLERS[command](ctx)
    except (ConfigError, DimensionMismatchError) as e:
        print(f"[error] {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as e:
        print(f"[error] numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


def main(argv: Optional[List[str]] = None) -> int:
    ap = argparse.ArgumentParser(description="Zero-noise stability experiments")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", default=None, help="experiment config JSON")
    ap.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit)")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--threads", type=int, default=None, help="worker threads (speed only)")
    args = ap.parse_args(argv)

    try:
        configure_logging(get_settings().log_level)
    except ConfigError as e:
        print(f"[error] {e}", file=sys.stderr)
        return EXIT_CONFIG
    return run(args.command, args.config, {"seed": args.seed, "out": args.out, "threads": args.threads})


if __name__ == "__main__":
    sys.exit(main())
