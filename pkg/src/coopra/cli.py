"""Command-line runner: single scenarios and parameter sweeps.

Exit codes: 0 ok, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from .engine import normalize_policy, price_of_anarchy, simulate
from .formation import ConvergenceError
from .model import ConfigError, load_config, parse_overrides
from .optimizer import NoFeasibleSolution

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

# metric field -> CSV header with units
METRIC_COLUMNS = {
    "fail_ratio": "fail_ratio [1]",
    "energy_per_mtd": "energy_per_mtd [J]",
    "mean_queue": "mean_queue [requests]",
    "utility": "utility_cost [1]",
    "iterations": "iterations [moves]",
    "moves_per_coalition": "moves_per_coalition [moves]",
    "drops": "drops [requests]",
    "price_of_anarchy": "price_of_anarchy [1]",
    "transmissions": "transmissions [attempts]",
    "collisions": "collisions [attempts]",
    "successes": "successes [requests]",
    "arrivals": "arrivals [requests]",
    "slots": "slots [slots]",
    "M": "M [devices]",
    "num_coalitions": "num_coalitions [coalitions]",
    "mean_coalition_size": "mean_coalition_size [devices]",
    "formation_passes": "formation_passes [passes]",
}
SWEEP_HEADER = ["parameter", "value", "seed", "policy", "status"] + list(METRIC_COLUMNS.values())


def _read_assignment(path: str) -> list[tuple[int, ...]]:
    groups: dict[int, list[int]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            groups.setdefault(int(row["coalition"]), []).append(int(row["mtd"]))
    return [tuple(sorted(g)) for _, g in sorted(groups.items())]


def cmd_run(config_path: str, overrides: dict[str, str], out_dir: str, seed: int | None = None,
            dump_topology: bool = False, trace: bool = False, assignment: str | None = None,
            event_log: bool = False) -> int:
    if seed is not None:
        overrides = {**overrides, "rng_seed": str(seed)}
    try:
        cfg = load_config(config_path, overrides)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    groups = _read_assignment(assignment) if assignment else None
    try:
        run = simulate(cfg, cfg.policy, cfg.slots, assignment=groups,
                       event_log=out / "events.csv" if event_log else None)
    except ConvergenceError as exc:
        exc.trace.to_csv(out / "trace.csv")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (NoFeasibleSolution, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    payload = {
        "config": cfg.to_dict(),
        "policy": cfg.policy,
        "seed": cfg.rng_seed,
        "metrics": run.metrics.to_dict(),
        "partition": [list(g) for g in run.groups],
    }
    (out / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    if trace and run.traces:
        run.traces[0].to_csv(out / "trace.csv")
    if dump_topology:
        run.topology.dump_csv(out / "topology.csv")
    print(f"{cfg.policy}: fail_ratio={run.metrics.fail_ratio:.4f} "
          f"energy_per_mtd={run.metrics.energy_per_mtd:.4e} J -> {out / 'metrics.json'}")
    return EXIT_OK


def parse_values(param: str, text: str) -> list[dict[str, str]]:
    """``alpha,beta`` with ``0.9:0.1,0.1:0.9`` gives one dict per point."""
    names = [n.strip() for n in param.split(",")]
    points = []
    for item in text.split(","):
        parts = item.split(":")
        if len(parts) != len(names):
            raise ConfigError(f"value {item!r} does not match parameters {names}")
        points.append(dict(zip(names, (p.strip() for p in parts))))
    return points


def _run_unit(args) -> list[list[str]]:
    """All policies for one (value, seed) point, sharing the topology."""
    cfg, label_param, label_value, seed, policies = args
    rows = []
    results = {}
    coalition_groups = None
    for policy in policies:
        try:
            extra = {"assignment": coalition_groups} if policy == "optimal" and coalition_groups else {}
            run = simulate(cfg, policy, cfg.slots, seed=seed, **extra)
            results[policy] = run.metrics
            if policy == "coalition":
                coalition_groups = run.groups
        except Exception as exc:  # recorded per point, the sweep continues
            results[policy] = f"error: {type(exc).__name__}: {exc}"
    coal, opt = results.get("coalition"), results.get("optimal")
    if coal is not None and opt is not None and not isinstance(coal, str) and not isinstance(opt, str):
        coal.price_of_anarchy = price_of_anarchy(coal.utility, opt.utility)
    for policy in policies:
        r = results[policy]
        if isinstance(r, str):
            rows.append([label_param, label_value, str(seed), policy, r] + [""] * len(METRIC_COLUMNS))
        else:
            d = r.to_dict()
            rows.append([label_param, label_value, str(seed), policy, "ok"]
                        + ["" if d[k] is None else repr(d[k]) for k in METRIC_COLUMNS])
    return rows


def cmd_sweep(config_path: str, overrides: dict[str, str], out_dir: str, param: str, values: str,
              seeds: int, policies: Sequence[str], jobs: int = 1, seed: int | None = None) -> int:
    try:
        cfg = load_config(config_path, overrides)
        points = parse_values(param, values)
        policies = [normalize_policy(p) for p in policies]
        units = []
        base = cfg.rng_seed if seed is None else seed
        for point in points:
            point_cfg = load_config(config_path, {**overrides, **point})
            label = ":".join(point.values())
            for i in range(seeds):
                units.append((point_cfg, param, label, base + i, policies))
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if "fixed" in policies:
        print("error: fixed policy is not available in sweeps", file=sys.stderr)
        return EXIT_USAGE

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_unit, units))
    else:
        chunks = [_run_unit(u) for u in units]
    rows = [r for chunk in chunks for r in chunk]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    w.writerows(rows)
    (out / "sweep.csv").write_text(buf.getvalue())
    failed = sum(r[4] != "ok" for r in rows)
    print(f"{len(rows)} rows, {failed} failed -> {out / 'sweep.csv'}")
    return EXIT_RUNTIME if rows and failed == len(rows) else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="coopra", description="Cooperative random access simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="flat key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override rng_seed")

    run = sub.add_parser("run", help="run one scenario")
    common(run)
    run.add_argument("--dump-topology", action="store_true", help="write topology.csv")
    run.add_argument("--trace", action="store_true", help="write the formation trace.csv")
    run.add_argument("--events", action="store_true", help="write the per-slot events.csv")
    run.add_argument("--assignment", default=None, help="partition CSV (mtd,coalition) for policy=fixed")

    sweep = sub.add_parser("sweep", help="run a parameter sweep")
    common(sweep)
    sweep.add_argument("--param", required=True, help="config key, or comma-joined keys")
    sweep.add_argument("--values", required=True, help="comma-separated values; ':' joins multi-key values")
    sweep.add_argument("--seeds", type=int, default=1, help="seeds per point")
    sweep.add_argument("--policies", default="noncooperative,coalition", help="comma-separated policies")
    sweep.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = parse_overrides(args.set)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "run":
        return cmd_run(args.config, overrides, args.out, args.seed, args.dump_topology, args.trace,
                       args.assignment, args.events)
    return cmd_sweep(args.config, overrides, args.out, args.param, args.values, args.seeds,
                     [p.strip() for p in args.policies.split(",") if p.strip()], args.jobs, args.seed)


if __name__ == "__main__":
    sys.exit(main())
