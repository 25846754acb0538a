"""Command line entry point: ``podec <subcommand> [options]``.

Options may also come from a YAML or JSON file given with ``--config``;
flags on the command line take precedence. A config file may hold the
options at top level or under a key named after the subcommand.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import experiments as ex
from .care import solve_care
from .decomposition import Decomposition, enumerate_decompositions, evaluate_lqr
from .ga import GAConfig, ga_search
from .representation import RepresentationMap, derive_map, transform_plant
from .serialize import dump_json, plant_from_dict, plant_to_dict, write_rows
from .stiefel import StiefelL1Config
from .tabular import (
    DPConfig,
    TabularPolicy,
    linearize,
    policy_iteration,
    rollout_batch,
    sample_starts,
    solve_decomposition,
    transform_system,
)
from .zoo import BENCHMARKS, SampleConfig, benchmark, sample, sample_strategy_2

log = logging.getLogger("podec")

COMMON = {"seed": 0, "out": "out", "format": "csv", "jobs": 1}
DEFAULTS = {
    "table1": {"sizes": "2,4", "strategy": "I", "samples": 30, "region": "image",
               "budget": 10**5, "plots": False},
    "pipeline": {"system": "planar_quadrotor", "starts": 20, "search": "ga", "region": "image",
                 "horizon": 10.0, "original": None, "transformed": None,
                 "grid_points": None, "action_levels": None},
    "sample": {"strategy": "I", "m": 2, "n": 4, "scale": 1.0, "zero_sv_count": 0},
    "transform": {"kind": "svd_sparse", "region": "image"},
    "enumerate": {"max_groups": None},
    "ga": {"population": 64, "generations": 100, "fitness_blend": 0.0},
    "pi": {"system": "double_integrator", "decomposition": None, "representation": "original",
           "grid_points": 21, "action_levels": 11, "h": 0.01},
    "rollout": {"system": "double_integrator", "policies": "out/policies", "starts": 20,
                "horizon": 10.0, "h": 0.01},
}
PLANT_SOURCE = {"plant": None, "system": None, "strategy": "I", "m": 2, "n": 4}


def _add_plant_source(p):
    p.add_argument("--plant", help="plant JSON file")
    p.add_argument("--system", choices=sorted(BENCHMARKS), help="linearize a benchmark")
    p.add_argument("--strategy", choices=["I", "II"], help="sample a plant instead")
    p.add_argument("--m", type=int)
    p.add_argument("--n", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="podec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="YAML or JSON options file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--format", choices=["csv", "json"], help="format of the rows file")
        p.add_argument("--jobs", type=int, help="worker processes")
        return p

    p = command("table1", "compare best value errors across representations")
    p.add_argument("--sizes", help="cells as 'm,n;m,n'")
    p.add_argument("--strategy", choices=["I", "II"])
    p.add_argument("--samples", type=int)
    p.add_argument("--region", choices=["box", "image"])
    p.add_argument("--budget", type=int, help="largest decomposition count to enumerate")
    p.add_argument("--plots", action="store_true", default=None)

    p = command("pipeline", "transform, search, solve and roll out a benchmark")
    p.add_argument("--system", choices=sorted(BENCHMARKS))
    p.add_argument("--starts", type=int)
    p.add_argument("--search", choices=["ga", "exhaustive"])
    p.add_argument("--region", choices=["box", "image"])
    p.add_argument("--horizon", type=float)
    p.add_argument("--original", help="decomposition JSON for the original representation")
    p.add_argument("--transformed", help="decomposition JSON for the transformed representation")
    p.add_argument("--grid-points", type=int)
    p.add_argument("--action-levels", type=int)

    p = command("sample", "draw a random linear plant")
    p.add_argument("--strategy", choices=["I", "II"])
    p.add_argument("--m", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--scale", type=float)
    p.add_argument("--zero-sv-count", type=int)

    p = command("transform", "derive a representation map and the mapped plant")
    _add_plant_source(p)
    p.add_argument("--kind", choices=["identity", "svd_sparse", "balanced"])
    p.add_argument("--region", choices=["box", "image"])

    p = command("enumerate", "evaluate every decomposition of a plant")
    _add_plant_source(p)
    p.add_argument("--max-groups", type=int)

    p = command("ga", "genetic search over decompositions")
    _add_plant_source(p)
    p.add_argument("--population", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--fitness-blend", type=float)

    p = command("pi", "policy iteration for a benchmark decomposition")
    p.add_argument("--system", choices=sorted(BENCHMARKS))
    p.add_argument("--decomposition", help="decomposition JSON; omit for one joint policy")
    p.add_argument("--representation", choices=["original", "svd_sparse"])
    p.add_argument("--grid-points", type=int)
    p.add_argument("--action-levels", type=int)
    p.add_argument("--h", type=float)

    p = command("rollout", "simulate saved policies from seeded starts")
    p.add_argument("--system", choices=sorted(BENCHMARKS))
    p.add_argument("--policies", help="directory written by 'pi'")
    p.add_argument("--starts", type=int)
    p.add_argument("--horizon", type=float)
    p.add_argument("--h", type=float)
    return parser


def resolve_options(args) -> dict:
    """Defaults, then the config file, then explicit flags."""
    opts = dict(COMMON)
    opts.update(DEFAULTS[args.command])
    if args.command in ("transform", "enumerate", "ga"):
        for k, v in PLANT_SOURCE.items():
            opts.setdefault(k, v)
    if args.config:
        data = yaml.safe_load(Path(args.config).read_text()) or {}
        if isinstance(data.get(args.command), dict):
            data = {**{k: v for k, v in data.items() if not isinstance(v, dict)},
                    **data[args.command]}
        unknown = set(data) - set(opts)
        if unknown:
            raise SystemExit(f"unknown config keys for {args.command}: {sorted(unknown)}")
        opts.update({k.replace("-", "_"): v for k, v in data.items()})
    for k, v in vars(args).items():
        if k in ("command", "config", "verbose") or v is None:
            continue
        opts[k] = v
    return opts


def _plant(opts):
    if opts.get("plant"):
        return plant_from_dict(json.loads(Path(opts["plant"]).read_text()))
    if opts.get("system"):
        return linearize(benchmark(opts["system"]))
    return sample(SampleConfig(opts["strategy"], opts["m"], opts["n"], opts["seed"]))


def _matrix_rows(named):
    rows = []
    for name, M in named.items():
        M = np.atleast_2d(np.asarray(M, dtype=float))
        for i in range(M.shape[0]):
            for j in range(M.shape[1]):
                rows.append({"matrix": name, "i": i, "j": j, "value": float(M[i, j])})
    return rows


def cmd_table1(opts, out):
    sizes = tuple(tuple(int(v) for v in cell.split(",")) for cell in str(opts["sizes"]).split(";"))
    cfg = ex.Table1Config(sizes=sizes, strategy=opts["strategy"], samples=opts["samples"],
                          seed=opts["seed"], region=opts["region"], budget=opts["budget"])
    rec = ex.run_table1(jobs=opts["jobs"], cfg=cfg)
    rec.save(out, opts["format"], plots=bool(opts["plots"]))
    print(rec.summary_markdown())


def cmd_pipeline(opts, out):
    dp = None
    if opts["grid_points"] or opts["action_levels"]:
        hints = dict(benchmark(opts["system"]).meta.get("dp", {}))
        if opts["grid_points"]:
            hints["grid_points"] = opts["grid_points"]
        if opts["action_levels"]:
            hints["action_levels"] = opts["action_levels"]
        dp = DPConfig(**hints)
    cfg = ex.PipelineConfig(starts=opts["starts"], seed=opts["seed"], search=opts["search"],
                            region=opts["region"], horizon=opts["horizon"], dp=dp,
                            original=opts["original"], transformed=opts["transformed"])
    rec = ex.run_pipeline(opts["system"], cfg)
    rec.save(out, opts["format"])
    print(rec.summary_markdown())


def cmd_sample(opts, out):
    cfg = SampleConfig(opts["strategy"], opts["m"], opts["n"], opts["seed"], opts["scale"],
                       opts["zero_sv_count"])
    if cfg.strategy == "II":
        plant, K = sample_strategy_2(cfg)
    else:
        plant = sample(cfg)
        _, K = solve_care(plant)
    dump_json(plant_to_dict(plant), out / "plant.json")
    write_rows(_matrix_rows({"A": plant.A, "B": plant.B, "Q": plant.Q, "R": plant.R, "K": K}),
               out, opts["format"])
    print(f"wrote {out / 'plant.json'}")


def cmd_transform(opts, out):
    plant = _plant(opts)
    rmap = derive_map(plant, opts["kind"], StiefelL1Config(seed=opts["seed"]))
    mapped = transform_plant(plant, rmap, opts["region"])
    dump_json(rmap.to_dict(), out / "map.json")
    dump_json(plant_to_dict(mapped), out / "plant.json")
    _, K = solve_care(mapped)
    write_rows(_matrix_rows({"T_y": rmap.T_y, "T_v": rmap.T_v, "A": mapped.A, "B": mapped.B,
                             "K": K}), out, opts["format"])
    print(f"wrote {out / 'map.json'}")


def cmd_enumerate(opts, out):
    plant = _plant(opts)
    optimal, _ = solve_care(plant)
    rows = []
    for i, d in enumerate(enumerate_decompositions(plant.m, plant.n, opts["max_groups"])):
        ev = evaluate_lqr(plant, d, optimal=optimal)
        rows.append({"index": i, "decomposition": d.to_json(), "err_lqr": ev.err_lqr,
                     "compute_surrogate": ev.compute_surrogate, "stable": ev.stable})
    write_rows(rows, out, opts["format"])
    finite = [r for r in rows if math.isfinite(r["err_lqr"])]
    print(f"{len(rows)} decompositions, {len(finite)} stable")


def cmd_ga(opts, out):
    plant = _plant(opts)
    cfg = GAConfig(population=opts["population"], generations=opts["generations"],
                   fitness_blend=opts["fitness_blend"], seed=opts["seed"])
    trace: list[dict] = []
    ranked = ga_search(plant, cfg, trace=trace)
    write_rows(trace, out, opts["format"])
    dump_json([{"decomposition": d.to_dict(), "err_lqr": ev.err_lqr,
                "compute_surrogate": ev.compute_surrogate} for d, ev in ranked[:20]],
              out / "ranked.json")
    d, ev = ranked[0]
    print(f"best: {d.describe()}  err_lqr={ev.err_lqr:.6g}")


def cmd_pi(opts, out):
    sys_ = benchmark(opts["system"])
    cfg = DPConfig(grid_points=opts["grid_points"], action_levels=opts["action_levels"],
                   h=opts["h"])
    pol_dir = out / "policies"
    pol_dir.mkdir(parents=True, exist_ok=True)
    for old in pol_dir.glob("policy_*.npz"):
        old.unlink()
    (pol_dir / "map.json").unlink(missing_ok=True)
    if opts["representation"] == "svd_sparse":
        rmap = derive_map(linearize(sys_), "svd_sparse", StiefelL1Config(seed=opts["seed"]))
        dump_json(rmap.to_dict(), pol_dir / "map.json")
        sys_ = transform_system(sys_, rmap)
    if opts["decomposition"]:
        policies = solve_decomposition(sys_, Decomposition.from_json(opts["decomposition"]), cfg)
    else:
        policies = [policy_iteration(sys_, range(sys_.n), range(sys_.m), (), cfg)]
    rows = []
    for g, pol in enumerate(policies):
        pol.save(pol_dir / f"policy_{g}.npz")
        rows.append({"group": g, "states": " ".join(map(str, pol.states)),
                     "inputs": " ".join(map(str, pol.inputs)), "nodes": pol.grid.size,
                     "iterations": pol.info["iterations"],
                     "value_at_goal": float(pol.value(sys_.x_goal[list(pol.states)])[0])})
    write_rows(rows, out, opts["format"])
    print(f"wrote {len(policies)} policies to {pol_dir}")


def cmd_rollout(opts, out):
    sys_ = benchmark(opts["system"])
    pol_dir = Path(opts["policies"])
    policies = [TabularPolicy.load(p) for p in sorted(pol_dir.glob("policy_*.npz"))]
    if not policies:
        raise SystemExit(f"no policy_*.npz files in {pol_dir}")
    rmap = None
    if (pol_dir / "map.json").exists():
        rmap = RepresentationMap.from_dict(json.loads((pol_dir / "map.json").read_text()))
    X0 = sample_starts(sys_, opts["starts"], opts["seed"])
    results = rollout_batch(sys_, policies, X0, opts["horizon"], opts["h"], rmap=rmap)
    traj_dir = out / "trajectories"
    traj_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, r in enumerate(results):
        (traj_dir / f"start_{i:03d}.csv").write_text(r.to_csv())
        row = {"start": i}
        row.update({f"x0_{k}": float(v) for k, v in enumerate(X0[i])})
        row.update({"cost": r.cost, "converged": r.converged, "out_of_bounds": r.out_of_bounds,
                    "nonfinite": r.nonfinite})
        rows.append(row)
    write_rows(rows, out, opts["format"])
    print(f"{sum(r.converged for r in results)}/{len(results)} rollouts converged")


COMMANDS = {
    "table1": cmd_table1, "pipeline": cmd_pipeline, "sample": cmd_sample,
    "transform": cmd_transform, "enumerate": cmd_enumerate, "ga": cmd_ga,
    "pi": cmd_pi, "rollout": cmd_rollout,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    opts = resolve_options(args)
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    COMMANDS[args.command](opts, out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
