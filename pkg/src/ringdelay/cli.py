"""Command-line front end.

Subcommands: ``gain``, ``design``, ``topology``, ``simulate``, ``validate``
and ``replay``. Tabular output goes to CSV (or JSON lines with
``--format json-lines``), the per-run summary to ``summary.json`` and the
resolved invocation to ``manifest.json``, all under ``--out-dir``.

Exit codes: 0 success, 1 validation failure, 2 usage or configuration
error, 3 infeasible design or diverged simulation, 4 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import yaml

from . import __version__, delay_core, design, sde_sim, spectral, topology, validation
from .errors import (
    ConfigError,
    ConvergenceError,
    DivergenceError,
    DomainError,
    InfeasibleGainsError,
    InvalidPlantError,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4


class UsageError(Exception):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


class Output:
    """Writes tables, the summary record and the manifest for one command."""

    def __init__(self, args, command: str, config: dict):
        self.out_dir = Path(args.out_dir) if args.out_dir else None
        self.fmt = args.format
        self.manifest = {
            "command": command,
            "argv": list(args.argv),
            "config": _jsonable(config),
            "version": __version__,
            "seed": getattr(args, "seed", None),
            "started": _now(),
        }
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)

    def table(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> Optional[Path]:
        if not self.out_dir:
            return None
        if self.fmt == "csv":
            path = self.out_dir / f"{name}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(header)
                for row in rows:
                    w.writerow([_fmt_cell(v) for v in row])
        else:
            path = self.out_dir / f"{name}.jsonl"
            with open(path, "w") as fh:
                for row in rows:
                    fh.write(json.dumps(_jsonable(dict(zip(header, row)))) + "\n")
        return path

    def finish(self, summary: dict, status: str = "ok") -> None:
        self.manifest["finished"] = _now()
        self.manifest["status"] = status
        if self.out_dir:
            with open(self.out_dir / "summary.json", "w") as fh:
                json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
                fh.write("\n")
            with open(self.out_dir / "manifest.json", "w") as fh:
                json.dump(self.manifest, fh, indent=2)
                fh.write("\n")


def _fmt_cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _print_record(record: dict) -> None:
    for key, val in record.items():
        if isinstance(val, (list, tuple, np.ndarray)):
            val = " ".join(f"{float(x):.10g}" for x in val)
        elif isinstance(val, (float, np.floating)):
            val = f"{float(val):.10g}"
        print(f"{key}: {val}")


def _parse_rate(args) -> topology.DelayRate:
    if args.rate_table:
        table = {}
        for item in args.rate_table.split(","):
            try:
                n, v = item.split(":")
                table[int(n)] = float(v)
            except ValueError:
                raise UsageError(f"bad --rate-table entry {item!r}; expected n:f") from None
        return topology.DelayRate("table", table)
    return topology.DelayRate(args.rate)


def _positive(name):
    def conv(text):
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got {text!r}")
        if not (v > 0 and math.isfinite(v)):
            raise argparse.ArgumentTypeError(f"{name} must be positive, got {text}")
        return v
    return conv


# --- subcommands -----------------------------------------------------------


def cmd_gain(args) -> int:
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    opt = delay_core.optimal_scalar_gain(args.tau)
    record = {
        "tau": args.tau,
        "n": args.n,
        "beta_star": opt.beta_star,
        "lambda_star": opt.lambda_star,
        "sigma2_star": opt.sigma2_star,
        "alpha_tilde": opt.lambda_star / (2 * args.n + 1),
    }
    out = Output(args, "gain", {"tau": args.tau, "n": args.n})
    _print_record(record)
    out.finish(record)
    return EXIT_OK


def _design_problem(args) -> tuple:
    rate = _parse_rate(args)
    f = rate(args.n)
    tau_n = f * args.tau_min
    return design.DesignProblem(args.N, args.n, tau_n), rate, f


def cmd_design(args) -> int:
    problem, rate, f = _design_problem(args)
    config = {"N": args.N, "n": args.n, "tau_min": args.tau_min, "rate": rate.describe(),
              "f": f, "tau_n": problem.tau_n, "mode": args.mode}
    out = Output(args, "design", config)
    if args.mode == "near-optimal":
        res = design.near_optimal_design(problem)
    elif args.mode == "exact-single":
        res = design.optimize_alpha_exact(problem)
    else:
        res = design.optimize_gains_exact(problem)
    lam = res.spectrum.eigenvalues
    per_mode = np.concatenate([[np.nan], res.mode_variances])
    out.table("modes", ["i", "lambda", "variance"],
              ((i + 1, lam[i], per_mode[i]) for i in range(problem.N)))
    summary = {
        "mode": args.mode,
        "N": problem.N,
        "n": problem.n,
        "tau_n": problem.tau_n,
        "lambda_star": problem.lambda_star,
        "gains": res.gains,
        "scalar_variance": res.scalar_variance,
        "per_coordinate_variance": res.scalar_variance / problem.N,
        "max_eigenvalue": res.spectrum.max_eigenvalue,
        "feasibility_margin": res.feasibility_margin,
    }
    if args.mode == "near-optimal":
        best = design.optimize_gains_exact(problem).scalar_variance
        summary["relative_error"] = (res.scalar_variance - best) / best
    _print_record(summary)
    out.finish(summary)
    return EXIT_OK


def cmd_topology(args) -> int:
    rate = _parse_rate(args)
    sweep = topology.optimize_topology(args.N, rate, args.tau_min, mode=args.mode)
    config = {"N": args.N, "tau_min": args.tau_min, "rate": rate.describe(), "mode": args.mode}
    out = Output(args, "topology", config)
    out.table("topology", ["n", "C_star", "f", "variance"],
              ((e.n, e.C_star, e.f, e.variance) for e in sweep.per_n))
    summary = {
        "N": args.N,
        "tau_min": args.tau_min,
        "rate": rate.describe(),
        "mode": args.mode,
        "n_max": spectral.n_max(args.N),
        "n_star": sweep.n_star,
        "variance_at_n_star": sweep.best.variance,
    }
    _print_record(summary)
    out.finish(summary)
    return EXIT_OK


_SIM_FIELDS = {
    "system": ("N", "tau_n"),
    "simulation": ("Ts", "horizon", "mc_runs"),
}


def _require(section: dict, key: str, where: str):
    if not isinstance(section, dict) or key not in section:
        raise ConfigError(f"missing config field '{where}.{key}'")
    return section[key]


def load_sim_config(path, seed_override: Optional[int] = None) -> tuple:
    """Parse a YAML simulation config into a :class:`SimConfig`.

    Returns:
        (SimConfig, dict of resolved settings, selected coordinates or None)
    """
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    for section, keys in _SIM_FIELDS.items():
        for key in keys:
            _require(raw.get(section), key, section)
    system, sim = raw["system"], raw["simulation"]
    output = raw.get("output") or {}
    N = int(system["N"])
    tau_n = float(system["tau_n"])
    gains_rule = raw.get("gains", "near-optimal")
    if isinstance(gains_rule, str):
        n = int(_require(system, "n", "system"))
        problem = design.DesignProblem(N, n, tau_n)
        if gains_rule == "near-optimal":
            gains = design.near_optimal_gains_multi(problem)
        elif gains_rule == "exact-single":
            gains = design.optimize_alpha_exact(problem).gains
        elif gains_rule == "exact-multi":
            gains = design.optimize_gains_exact(problem).gains
        else:
            raise ConfigError(f"unknown gains rule {gains_rule!r}")
    else:
        gains = np.asarray(gains_rule, dtype=float)
    seed = int(sim.get("seed", 0)) if seed_override is None else seed_override
    x0 = sim.get("x0")
    cfg = sde_sim.SimConfig(
        N=N,
        gains=tuple(float(g) for g in np.atleast_1d(gains)),
        tau_n=tau_n,
        Ts=float(sim["Ts"]),
        horizon=float(sim["horizon"]),
        burn_in=None if sim.get("burn_in") is None else float(sim["burn_in"]),
        mc_runs=int(sim["mc_runs"]),
        seed=seed,
        x0_mode=sim.get("x0_mode", "gaussian"),
        x0=None if x0 is None else tuple(x0),
        record_every=int(output.get("record_every", 10)),
    )
    coords = output.get("coordinates")
    if coords is not None:
        coords = [int(c) for c in coords]
        if any(not 1 <= c <= N for c in coords):
            raise ConfigError(f"output.coordinates must lie in 1..{N}")
    resolved = cfg.to_dict()
    resolved["gains_rule"] = gains_rule if isinstance(gains_rule, str) else "given"
    resolved["coordinates"] = coords
    return cfg, resolved, coords


def _trajectory_rows(times, traj, coords):
    if times is None or traj is None:
        return []
    cols = [c - 1 for c in coords] if coords else list(range(traj.shape[1]))
    return ([t, *row[cols]] for t, row in zip(times, traj))


def cmd_simulate(args) -> int:
    cfg, resolved, coords = load_sim_config(args.config, args.seed)
    return _simulate(args, cfg, resolved, coords)


def _simulate(args, cfg: sde_sim.SimConfig, resolved: dict, coords) -> int:
    out = Output(args, "simulate", resolved)
    names = [f"x_{c}" for c in (coords or range(1, cfg.N + 1))]
    try:
        res = sde_sim.estimate_scalar_variance(cfg)
    except DivergenceError as exc:
        part = exc.partial or {}
        out.table("trajectory", ["t", *names],
                  _trajectory_rows(part.get("times"), part.get("trajectory"), coords))
        report = exc.report()
        report["theory"] = sde_sim.analytic_variance(cfg)
        print(json.dumps(_jsonable(report)), file=sys.stderr)
        out.finish(report, status="diverged")
        return EXIT_INFEASIBLE
    out.table("trajectory", ["t", *names], _trajectory_rows(res.times, res.trajectory, coords))
    out.table("runs", ["run", "variance", "per_coordinate_variance"],
              ((r, v, v / cfg.N) for r, v in enumerate(res.per_run_variance)))
    summary = res.summary()
    summary["gains"] = list(cfg.gains)
    _print_record({k: v for k, v in summary.items() if k != "gains"})
    out.finish(summary)
    return EXIT_OK


def sim_config_from_manifest(config: dict) -> tuple:
    keys = ("N", "gains", "tau_n", "Ts", "horizon", "burn_in", "mc_runs", "seed",
            "x0_mode", "x0", "record_every", "divergence_threshold")
    cfg = sde_sim.SimConfig(**{k: config[k] for k in keys if k in config})
    return cfg, dict(config), config.get("coordinates")


def cmd_validate(args) -> int:
    out = Output(args, "validate", {"level": args.level})
    results = validation.run_checks(args.level)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    out.table("checks", ["name", "tolerance", "passed", "detail", "seconds"],
              ((r.name, r.tolerance, r.passed, r.detail, r.seconds) for r in results))
    out.finish({"level": args.level, "passed": len(results) - len(failed), "failed": len(failed)},
               status="ok" if not failed else "failed")
    return EXIT_OK if not failed else EXIT_CHECK_FAILED


def cmd_replay(args) -> int:
    """Re-run a recorded command; ``simulate`` is rebuilt from the resolved
    configuration so later edits to its YAML file do not matter."""
    try:
        manifest = json.loads(Path(args.manifest).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read manifest {args.manifest}: {exc}") from None
    if manifest.get("command") == "simulate":
        args.argv = manifest["argv"]
        return _simulate(args, *sim_config_from_manifest(manifest["config"]))
    argv = list(manifest["argv"])
    if args.out_dir:
        argv += ["--out-dir", args.out_dir]
    return main(argv)


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="base seed for random streams")
    common.add_argument("--out-dir", default=argparse.SUPPRESS,
                        help="directory for CSV/summary/manifest output")
    common.add_argument("--format", choices=("csv", "json-lines"), default=argparse.SUPPRESS,
                        help="format of tabular outputs (default csv)")

    parser = argparse.ArgumentParser(
        prog="ringdelay",
        description="Minimum-variance gain design and simulation for delayed ring formations.",
        parents=[common],
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gain", parents=[common], help="scalar optimum and near-optimal ring gain")
    p.add_argument("--tau", type=_positive("--tau"), required=True, help="feedback delay")
    p.add_argument("--n", type=int, default=1, help="number of communication rings")
    p.set_defaults(func=cmd_gain)

    def rate_args(p):
        p.add_argument("--tau-min", type=_positive("--tau-min"), required=True)
        p.add_argument("--rate", choices=("linear", "sqrt", "constant"), default="linear")
        p.add_argument("--rate-table", help="explicit rate as 'n:f,n:f,...' (overrides --rate)")

    p = sub.add_parser("design", parents=[common], help="optimize ring gains")
    p.add_argument("--N", type=int, required=True, help="number of agents")
    p.add_argument("--n", type=int, required=True, help="number of communication rings")
    rate_args(p)
    p.add_argument("--mode", choices=("near-optimal", "exact-single", "exact-multi"),
                   default="near-optimal")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("topology", parents=[common], help="sweep the number of rings")
    p.add_argument("--N", type=int, required=True)
    rate_args(p)
    p.add_argument("--mode", choices=("near-optimal", "exact-single", "exact-multi"),
                   default="near-optimal")
    p.set_defaults(func=cmd_topology)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo of the error dynamics")
    p.add_argument("config", help="YAML simulation config")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", parents=[common], help="run the consistency checks")
    p.add_argument("--level", choices=("fast", "full"), default="fast")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("replay", parents=[common], help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for name, default in (("seed", None), ("out_dir", None), ("format", "csv")):
        if not hasattr(args, name):
            setattr(args, name, default)
    args.argv = [a for a in _strip_out_dir(argv)]
    try:
        return args.func(args)
    except (UsageError, ConfigError, DomainError, InvalidPlantError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleGainsError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConvergenceError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def _strip_out_dir(argv):
    # the manifest records the command without its destination
    skip = False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--out-dir":
            skip = True
            continue
        if a.startswith("--out-dir="):
            continue
        yield a


if __name__ == "__main__":
    sys.exit(main())
