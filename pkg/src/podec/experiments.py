"""Studies built from the library: the randomized linear-systems comparison
and the end-to-end transform, search, policy iteration and rollout pipeline.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .decomposition import (
    Decomposition,
    best_decomposition_exhaustive,
    count_decompositions,
    evaluate_lqr,
)
from .errors import AllUnstable, PhaseError, PodecError
from .ga import GAConfig, ga_search
from .representation import balanced_map, sparse_svd_map, transform_plant
from .serialize import dump_json, rows_to_csv, write_rows
from .stiefel import StiefelL1Config
from .tabular import (
    DPConfig,
    linearize,
    normalized_value_error,
    rollout_batch,
    sample_starts,
    solve_decomposition,
    transform_system,
)
from .zoo import SampleConfig, benchmark, sample

log = logging.getLogger(__name__)

IMPROVEMENT_TOL = 1e-12


@dataclass
class ExperimentRecord:
    """Configuration, per-sample rows, aggregates and phase timings of one study.

    Rows and aggregates are deterministic for a fixed configuration; timings
    are kept apart so that persisted rows can be compared byte for byte.
    """

    kind: str
    config: dict
    rows: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, out_dir, fmt: str = "csv", plots: bool = False) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        dump_json(self.to_dict(), out_dir / "record.json")
        write_rows(self.rows, out_dir, fmt)
        (out_dir / "summary.md").write_text(self.summary_markdown())
        if plots and self.kind == "table1":
            write_table1_plot(self, out_dir / "plots")
        return out_dir

    def summary_markdown(self) -> str:
        if self.kind == "table1":
            return _table1_summary(self)
        return _pipeline_summary(self)


# ---------------------------------------------------------------- table 1


@dataclass(frozen=True)
class Table1Config:
    sizes: tuple[tuple[int, int], ...] = ((2, 4),)
    strategy: str = "I"
    samples: int = 30
    seed: int = 0
    region: str = "image"
    budget: int = 10**5  # larger decomposition spaces fall back to the GA
    ga: GAConfig = GAConfig()
    stiefel: StiefelL1Config = StiefelL1Config()

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple((int(m), int(n)) for m, n in self.sizes))
        object.__setattr__(self, "strategy", str(self.strategy).upper())
        if self.samples < 0:
            raise ValueError("samples must be nonnegative")


def sample_seed(seed: int, index: int) -> int:
    """Per-sample seed derived from the study seed."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0])


def best_error(plant, budget: int, ga_cfg: GAConfig):
    """Lowest value error over decompositions; exhaustive when affordable."""
    if count_decompositions(plant.m, plant.n) <= budget:
        try:
            d, ev = best_decomposition_exhaustive(plant, budget=budget)
        except AllUnstable:
            return math.inf, None, "exhaustive"
        return ev.err_lqr, d, "exhaustive"
    d, ev = ga_search(plant, ga_cfg, top=1)[0]
    return ev.err_lqr, d, "ga"


def _table1_sample(task):
    cfg, m, n, index = task
    seed = sample_seed(cfg.seed, index)
    row = {
        "cell": f"{cfg.strategy}({m},{n})", "strategy": cfg.strategy, "m": m, "n": n,
        "sample": index, "sample_seed": seed, "status": "ok", "search": "",
        "err_original": math.nan, "err_svd": math.nan, "err_balanced": math.nan,
        "improved_svd": False, "improved_balanced": False,
        "best_original": "", "best_svd": "", "best_balanced": "", "error": "",
    }
    times = {"sample": 0.0, "maps": 0.0, "search": 0.0}
    try:
        t0 = time.perf_counter()
        plant = sample(SampleConfig(cfg.strategy, m, n, seed))
        t1 = time.perf_counter()
        plants = {
            "original": plant,
            "svd": transform_plant(plant, sparse_svd_map(plant, cfg.stiefel), cfg.region),
            "balanced": transform_plant(plant, balanced_map(plant), cfg.region),
        }
        t2 = time.perf_counter()
        for key, p in plants.items():
            err, d, how = best_error(p, cfg.budget, cfg.ga)
            row[f"err_{key}"] = err
            row[f"best_{key}"] = "" if d is None else d.to_json()
            row["search"] = how
        t3 = time.perf_counter()
        times = {"sample": t1 - t0, "maps": t2 - t1, "search": t3 - t2}
    except PodecError as exc:
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
        log.warning("sample %d of %s failed: %s", index, row["cell"], row["error"])
        return row, times
    for key in ("svd", "balanced"):
        row[f"improved_{key}"] = bool(row[f"err_{key}"] < row["err_original"] - IMPROVEMENT_TOL)
    return row, times


def wilson_interval(successes: int, trials: int, confidence=0.95):
    if trials == 0:
        return None
    ci = stats.binomtest(successes, trials).proportion_ci(confidence_level=confidence,
                                                          method="wilson")
    return [float(ci.low), float(ci.high)]


def aggregate_table1(rows: list[dict], cells=()) -> dict:
    """Per-cell counts and improvement fractions recomputed from ``rows``.

    Names in ``cells`` are reported even when no row belongs to them.
    """
    def empty():
        return {"samples": 0, "ok": 0, "failed": 0, "improved_svd": 0, "improved_balanced": 0}

    cells = {name: empty() for name in cells}
    for row in rows:
        c = cells.setdefault(row["cell"], empty())
        c["samples"] += 1
        if row["status"] != "ok":
            c["failed"] += 1
            continue
        c["ok"] += 1
        c["improved_svd"] += bool(row["improved_svd"])
        c["improved_balanced"] += bool(row["improved_balanced"])
    for c in cells.values():
        for key in ("svd", "balanced"):
            k = c[f"improved_{key}"]
            c[f"fraction_{key}"] = k / c["ok"] if c["ok"] else None
            c[f"wilson_{key}"] = wilson_interval(k, c["ok"])
    return cells


def run_table1(sizes=((2, 4),), strategy="I", samples=30, seed=0, *, region="image",
               jobs: int = 1, cfg: Table1Config | None = None) -> ExperimentRecord:
    """Compare best value errors before and after the SVD and balanced maps.

    Each sample is drawn with its own derived seed; rows come back in sample
    order whatever the number of worker processes.
    """
    if cfg is None:
        cfg = Table1Config(sizes=tuple(sizes), strategy=strategy, samples=samples, seed=seed,
                           region=region)
    tasks = [(cfg, m, n, i) for m, n in cfg.sizes for i in range(cfg.samples)]
    t0 = time.perf_counter()
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_table1_sample, tasks))
    else:
        results = [_table1_sample(t) for t in tasks]
    rows = [r for r, _ in results]
    timings = {phase: float(sum(t[phase] for _, t in results))
               for phase in ("sample", "maps", "search")}
    timings["wall"] = time.perf_counter() - t0
    config = dataclasses.asdict(cfg)
    config["jobs"] = jobs
    names = [f"{cfg.strategy}({m},{n})" for m, n in cfg.sizes]
    return ExperimentRecord("table1", config, rows, aggregate_table1(rows, names), timings)


def _fmt_fraction(c, key):
    frac, ci = c[f"fraction_{key}"], c[f"wilson_{key}"]
    if frac is None:
        return "n/a"
    return f"{c[f'improved_{key}']}/{c['ok']} = {frac:.2f} [{ci[0]:.2f}, {ci[1]:.2f}]"


def _table1_summary(rec: ExperimentRecord) -> str:
    lines = [
        "# Randomized linear systems",
        "",
        f"strategy {rec.config['strategy']}, {rec.config['samples']} samples per cell, "
        f"seed {rec.config['seed']}, region rule `{rec.config['region']}`",
        "",
        "| cell | ok | failed | improved by SVD map | improved by balanced map |",
        "|---|---|---|---|---|",
    ]
    for cell, c in rec.aggregates.items():
        lines.append(f"| {cell} | {c['ok']} | {c['failed']} | {_fmt_fraction(c, 'svd')} | "
                     f"{_fmt_fraction(c, 'balanced')} |")
    searches = sorted({r["search"] for r in rec.rows if r["search"]})
    if "ga" in searches:
        lines += ["", "Some cells exceed the enumeration budget; their best errors come from "
                      "the genetic search and are approximate."]
    lines += ["", "Fractions are strict improvements; brackets are Wilson 95% intervals.", ""]
    return "\n".join(lines)


def write_table1_plot(rec: ExperimentRecord, plot_dir) -> Path | None:
    """Bar chart of improvement fractions per cell (needs matplotlib)."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib is not installed; skipping plots")
        return None
    plot_dir = Path(plot_dir)
    plot_dir.mkdir(parents=True, exist_ok=True)
    cells = list(rec.aggregates)
    x = np.arange(len(cells))
    svd = [rec.aggregates[c]["fraction_svd"] or 0.0 for c in cells]
    bal = [rec.aggregates[c]["fraction_balanced"] or 0.0 for c in cells]
    fig, ax = plt.subplots(figsize=(1.6 * len(cells) + 2, 3))
    ax.bar(x - 0.2, svd, 0.4, label="SVD map")
    ax.bar(x + 0.2, bal, 0.4, label="balanced map")
    ax.set_xticks(x, cells)
    ax.set_ylim(0, 1)
    ax.set_ylabel("fraction improved")
    ax.legend(loc="lower right")
    fig.tight_layout()
    path = plot_dir / "improved_fractions.svg"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


# ---------------------------------------------------------------- pipeline


@dataclass(frozen=True)
class PipelineConfig:
    starts: int = 20
    start_fraction: float = 0.5
    horizon: float = 10.0
    rollout_h: float = 0.01
    goal_tolerance: float = 0.05
    seed: int = 0
    search: str = "ga"  # or "exhaustive"
    region: str = "image"
    ga: GAConfig = GAConfig()
    dp: DPConfig | None = None  # None: defaults plus the benchmark's recommended resolution
    stiefel: StiefelL1Config = StiefelL1Config()
    original: str | None = None  # decomposition JSON that replaces the search result
    transformed: str | None = None

    def __post_init__(self):
        if self.search not in ("ga", "exhaustive"):
            raise ValueError(f"unknown search {self.search!r}")


class _Phase:
    def __init__(self, name, timings):
        self.name, self.timings = name, timings

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = self.timings.get(self.name, 0.0) + time.perf_counter() - self.t0
        if exc is not None and not isinstance(exc, PhaseError):
            raise PhaseError(self.name, exc) from exc
        return False


def _search(plant, cfg: PipelineConfig, override: str | None):
    if override:
        d = Decomposition.from_json(override)
        return d, evaluate_lqr(plant, d), "given"
    if cfg.search == "exhaustive":
        d, ev = best_decomposition_exhaustive(plant)
        return d, ev, "exhaustive"
    d, ev = ga_search(plant, cfg.ga, top=1)[0]
    return d, ev, "ga"


def _mean_std(values):
    if not values:
        return None, None
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std())


def run_pipeline(system: str, cfg: PipelineConfig | None = None) -> ExperimentRecord:
    """Linearize, map, search both representations, solve and roll out.

    Rollouts start from the same seeded states in original coordinates. The
    normalized value error of each start uses the transformed-representation
    policy as the reference, so negative values mean the original-representation
    policy costs more.
    """
    cfg = cfg or PipelineConfig()
    timings: dict[str, float] = {}
    with _Phase("linearize", timings):
        sys = benchmark(system)
        plant = linearize(sys)
    dp = cfg.dp or DPConfig(**sys.meta.get("dp", {}))
    with _Phase("map", timings):
        rmap = sparse_svd_map(plant, cfg.stiefel)
        tplant = transform_plant(plant, rmap, cfg.region)
        tsys = transform_system(sys, rmap)
    with _Phase("search", timings):
        d_o, ev_o, how_o = _search(plant, cfg, cfg.original)
        d_t, ev_t, how_t = _search(tplant, cfg, cfg.transformed)
    with _Phase("policy_iteration", timings):
        pol_o = solve_decomposition(sys, d_o, dp)
        pol_t = solve_decomposition(tsys, d_t, dp)
    with _Phase("rollout", timings):
        X0 = sample_starts(sys, cfg.starts, cfg.seed, cfg.start_fraction)
        kw = dict(horizon=cfg.horizon, h=cfg.rollout_h, goal_tolerance=cfg.goal_tolerance)
        r_o = rollout_batch(sys, pol_o, X0, **kw)
        r_t = rollout_batch(sys, pol_t, X0, rmap=rmap, **kw)

    rows = []
    for i, (a, b) in enumerate(zip(r_o, r_t)):
        nve = normalized_value_error(b.cost, a.cost) if b.cost > 0 and math.isfinite(b.cost) \
            else math.nan
        row = {"start": i}
        row.update({f"x0_{k}": float(v) for k, v in enumerate(X0[i])})
        row.update({
            "cost_original": a.cost, "cost_transformed": b.cost,
            "converged_original": a.converged, "converged_transformed": b.converged,
            "out_of_bounds_original": a.out_of_bounds, "out_of_bounds_transformed": b.out_of_bounds,
            "normalized_error": nve,
        })
        rows.append(row)
    both = [r["normalized_error"] for r in rows
            if r["converged_original"] and r["converged_transformed"]]
    every = [r["normalized_error"] for r in rows if math.isfinite(r["normalized_error"])]
    mean_c, std_c = _mean_std(both)
    mean_a, std_a = _mean_std(every)
    aggregates = {
        "system": system,
        "starts": cfg.starts,
        "map": rmap.to_dict(),
        "original": {"decomposition": d_o.to_dict(), "describe": d_o.describe(),
                     "err_lqr": ev_o.err_lqr, "search": how_o,
                     "converged": sum(r.converged for r in r_o)},
        "transformed": {"decomposition": d_t.to_dict(), "describe": d_t.describe(),
                        "err_lqr": ev_t.err_lqr, "search": how_t,
                        "converged": sum(r.converged for r in r_t)},
        "normalized_error_converged_pairs": {"count": len(both), "mean": mean_c, "std": std_c},
        "normalized_error_all_starts": {"count": len(every), "mean": mean_a, "std": std_a},
    }
    config = dataclasses.asdict(cfg)
    config["system"] = system
    config["dp"] = dataclasses.asdict(dp)
    rec = ExperimentRecord("pipeline", config, rows, aggregates, timings)
    rec.policies = {"original": pol_o, "transformed": pol_t}  # not persisted in record.json
    rec.rollouts = {"original": r_o, "transformed": r_t}
    return rec


def _pipeline_summary(rec: ExperimentRecord) -> str:
    a = rec.aggregates
    lines = [f"# Pipeline: {a['system']}", ""]
    for key in ("original", "transformed"):
        s = a[key]
        lines.append(f"- {key}: `{s['describe']}` ({s['search']}), LQR value error "
                     f"{s['err_lqr']:.6g}, converged {s['converged']}/{a['starts']}")
    for key, label in (("normalized_error_converged_pairs", "converged pairs"),
                       ("normalized_error_all_starts", "all starts")):
        s = a[key]
        if s["mean"] is None:
            lines.append(f"- normalized value error over {label}: n/a (no pairs)")
        else:
            lines.append(f"- normalized value error over {label} ({s['count']}): "
                         f"{s['mean']:.4g} +- {s['std']:.4g}")
    lines += ["", "Normalized errors use the transformed policy as the reference; "
                  "negative values mean the original-representation policy costs more.", ""]
    return "\n".join(lines)


def rows_csv(rec: ExperimentRecord) -> str:
    return rows_to_csv(rec.rows)
