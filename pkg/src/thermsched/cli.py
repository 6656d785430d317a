"""Command-line driver: ``run``, ``sweep``, ``oracle-check`` and ``report``."""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import kernels
from .config import ConfigError, ExperimentConfig
from .experiment import Outcome, evaluate, prepare, save_checkpoint
from .metrics import SUMMARY_COLUMNS, RunSummary, aggregate
from .oracle import build_toy_smdp, policy_agreement, relative_value_iteration, train_tabular
from .schedulers import SCHEDULERS, SMDPAgent
from .simcore import TRACE_COLUMNS

log = logging.getLogger("thermsched")

RHO_TOL = 0.05


# -- writers ---------------------------------------------------------------------

def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, header: str, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    buf = io.StringIO()
    buf.write(header)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue())


def read_csv(path: Path) -> list[dict[str, str]]:
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_heatmaps(path: Path, header: str, snaps: Sequence[np.ndarray]) -> None:
    """One line per mesh row, Kelvin values space-separated; a blank line between snapshots."""
    blocks = ["\n".join(" ".join(f"{v:.3f}" for v in row) for row in snap) for snap in snaps]
    path.write_text(header + "\n\n".join(blocks) + ("\n" if blocks else ""))


def trace_rows(outcome: Outcome) -> list[list[Any]]:
    return [[r.k, r.time_s, r.event_kind, "" if r.action_core is None else r.action_core,
             r.action_level, r.reward_Ks, r.dt_s, r.peak_K, r.queue_len] for r in outcome.result.trace]


def summary_rows(summaries: Sequence[RunSummary]) -> list[list[Any]]:
    return [[s.row()[c] for c in SUMMARY_COLUMNS] for s in summaries]


# -- run -------------------------------------------------------------------------------

def execute(cfg: ExperimentConfig, out: Path, tag: str | None = None,
            write_traces: bool = True) -> list[RunSummary]:
    """Train (if learning) once, then one evaluation run per seed; writes all artifacts."""
    out.mkdir(parents=True, exist_ok=True)
    header = cfg.header()
    sim = cfg.sim_config()
    name = cfg.scheduler
    lr = cfg["learner"]
    sched = prepare(sim, name, cfg.learner_config(), lr["train_runs"], lr["train_seed"])
    lam = cfg["workload"]["lam"]
    tag = tag or name
    summaries = []
    for seed in cfg.seeds:
        oc = evaluate(sim, sched, seed, lam, record_trace=write_traces)
        summaries.append(oc.summary)
        stem = f"{tag}_seed{seed}"
        if write_traces:
            write_csv(out / f"trace_{stem}.csv", header, TRACE_COLUMNS, trace_rows(oc))
        if isinstance(oc.scheduler, SMDPAgent):
            save_checkpoint(out / f"theta_{stem}.txt", oc.scheduler, header)
        if oc.result.heatmaps:
            write_heatmaps(out / f"heatmap_{stem}.txt", header, oc.result.heatmaps)
        log.info("%s seed %d: avg peak %.3f K", name, seed, oc.summary.avg_peak_K)
    write_csv(out / "summary.csv", header, SUMMARY_COLUMNS, summary_rows(summaries))
    (out / "config.yaml").write_text(cfg.dump())
    return summaries


# -- sweep -------------------------------------------------------------------------------

def _apply(cfg: ExperimentConfig, key: str, value: Any) -> dict[str, Any]:
    if key == "mesh":
        rows, cols = _parse_mesh(value)
        upd: dict[str, Any] = {"mesh.rows": rows, "mesh.cols": cols}
        if cfg["sweep"]["scale_load_with_mesh"]:
            base = cfg["mesh"]["rows"] * cfg["mesh"]["cols"]
            upd["workload.lam"] = cfg["workload"]["lam"] * rows * cols / base
        return upd
    return {key: value}


def _parse_mesh(value: Any) -> tuple[int, int]:
    if isinstance(value, int):
        return value, value
    try:
        r, c = str(value).lower().split("x")
        return int(r), int(c)
    except ValueError:
        raise ConfigError(f"sweep.grid.mesh: {value!r} is not ROWSxCOLS") from None


def expand_grid(cfg: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    grid = cfg["sweep"]["grid"]
    for key, vals in grid.items():
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"sweep.grid.{key}: expected a nonempty list")
    keys = sorted(grid)
    combos = []
    for values in itertools.product(*(grid[k] for k in keys)):
        upd: dict[str, Any] = {}
        for k, v in zip(keys, values):
            upd.update(_apply(cfg, k, v))
        try:
            sub = cfg.with_overrides(**upd) if upd else cfg
        except KeyError as exc:
            raise ConfigError(f"sweep.grid: unknown parameter {exc.args[0]!r}") from None
        tag = "_".join(f"{k.split('.')[-1]}={v}" for k, v in zip(keys, values)) or "default"
        combos.append((tag, sub))
    return combos


def _sweep_job(args: tuple[str, dict, str]) -> tuple[str, list[RunSummary]]:
    tag, raw, out = args
    cfg = ExperimentConfig.from_dict(raw)
    summaries = execute(cfg, Path(out) / "runs" / tag, tag=cfg.scheduler, write_traces=False)
    for s in summaries:
        s.tag = tag
    return tag, summaries


def sweep(cfg: ExperimentConfig, out: Path, workers: int = 1) -> list[RunSummary]:
    combos = expand_grid(cfg)
    n_runs = len(combos) * len(cfg.seeds)
    cap = cfg["sweep"]["max_runs"]
    if n_runs > cap:
        raise ConfigError(f"sweep would launch {n_runs} runs, above sweep.max_runs={cap}")
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(tag, sub.raw, str(out)) for tag, sub in combos]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    summaries = [s for _, ss in sorted(results, key=lambda r: r[0]) for s in ss]
    header = cfg.header()
    write_csv(out / "sweep_summary.csv", header, SUMMARY_COLUMNS, summary_rows(summaries))
    write_aggregate(out, header, summaries)
    (out / "config.yaml").write_text(cfg.dump())
    return summaries


SWEEP_KEYS = ("scheduler", "mesh", "lam", "tag")
AGG_COLUMNS = ("cell", "scheduler", "mesh", "lambda", "n", "avg_peak_K", "avg_peak_ci",
               "avg_service_s", "avg_service_ci", "total_dyn_energy_J", "total_dyn_energy_ci",
               "mean_queue_len", "mean_queue_ci")


def write_aggregate(out: Path, header: str, summaries: Sequence[RunSummary]) -> str:
    aggs = aggregate(summaries, by=SWEEP_KEYS)
    rows = []
    for a in aggs:
        row: list[Any] = [a.keys[3], a.keys[0], a.keys[1], f"{a.keys[2]:g}", a.n]
        for m in ("avg_peak_K", "avg_service_s", "total_dyn_energy_J", "mean_queue_len"):
            row += [f"{a.means[m]:.6f}", f"{a.halfwidths[m]:.6f}"]
        rows.append(row)
    write_csv(out / "aggregate.csv", header, AGG_COLUMNS, rows)
    text = format_table(aggs)
    (out / "aggregate.txt").write_text(header + text)
    return text


def format_table(aggs) -> str:
    """Fixed-width table of mean +- 95% CI, plus a bar per row for the peak temperature."""
    lines = [f"{'scheduler':<10}{'mesh':<7}{'lambda':>8}{'n':>4}  {'avg peak K':>20}"
             f"  {'service s':>18}  {'dyn energy J':>24}  cell"]
    peaks = [a.means["avg_peak_K"] for a in aggs]
    lo, hi = (min(peaks), max(peaks)) if peaks else (0.0, 0.0)
    for a in aggs:
        m, h = a.means, a.halfwidths
        bar = "#" * (1 + int(round(20 * (m["avg_peak_K"] - lo) / (hi - lo)))) if hi > lo else "#"
        lines.append(
            f"{a.keys[0]:<10}{a.keys[1]:<7}{a.keys[2]:>8g}{a.n:>4}  "
            f"{m['avg_peak_K']:>10.3f} +- {h['avg_peak_K']:<6.3f}  "
            f"{m['avg_service_s']:>8.4f} +- {h['avg_service_s']:<6.4f}  "
            f"{m['total_dyn_energy_J']:>12.1f} +- {h['total_dyn_energy_J']:<8.1f}  "
            f"{a.keys[3] if len(a.keys) > 3 else '':<12} {bar}")
    return "\n".join(lines) + "\n"


# -- report ------------------------------------------------------------------------------------

def load_summaries(root: Path) -> list[RunSummary]:
    paths = [root] if root.is_file() else sorted(root.rglob("summary.csv"))
    out = []
    for p in paths:
        tag = p.parent.name if p.parent.parent.name == "runs" else ""
        for r in read_csv(p):
            out.append(RunSummary(
                scheduler=r["scheduler"], mesh=r["mesh"], lam=float(r["lambda"]), seed=int(r["seed"]),
                avg_peak_K=float(r["avg_peak_K"]),
                avg_service_s=float(r["avg_service_s"]) if r["avg_service_s"] else None,
                total_dyn_energy_J=float(r["total_dyn_energy_J"]),
                mean_queue_len=float(r["mean_queue_len"]), tag=tag))
    return out


# -- entry point -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment file (defaults apply to missing keys)")
    common.add_argument("--seed", type=int, help="run this single seed instead of run.seeds")
    common.add_argument("--out", help="output directory (default: run.out)")
    common.add_argument("--workers", type=int, default=1, help="parallel runs in a sweep")
    common.add_argument("--scheduler", choices=SCHEDULERS, help="overrides run.scheduler")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="thermsched", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="train and evaluate one scheduler")
    sw = sub.add_parser("sweep", parents=[common], help="Cartesian product over sweep.grid")
    sw.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2",
                    help="grid axis (dotted config path, or 'mesh' with ROWSxCOLS values)")
    oc = sub.add_parser("oracle-check", parents=[common], help="tabular learner vs exact solution")
    oc.add_argument("--updates", type=int, default=200_000)
    sub.add_parser("report", parents=[common], help="aggregate summary CSVs under --out")
    return p


def _grid_value(text: str) -> Any:
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def resolve(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    upd: dict[str, Any] = {}
    if args.seed is not None:
        upd["run.seeds"] = [args.seed]
    if args.scheduler:
        upd["run.scheduler"] = args.scheduler
    if args.out:
        upd["run.out"] = args.out
    grid = getattr(args, "grid", [])
    if grid:
        g = dict(cfg["sweep"]["grid"])
        for item in grid:
            key, sep, vals = item.partition("=")
            if not sep or not vals:
                raise ConfigError(f"--grid {item!r}: expected KEY=V1,V2")
            g[key] = [_grid_value(v) for v in vals.split(",")]
        upd["sweep.grid"] = g
    return cfg.with_overrides(**upd) if upd else cfg


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args)
        out = Path(cfg["run"]["out"])
        if args.command == "run":
            summaries = execute(cfg, out)
            for s in summaries:
                print(f"{s.scheduler} seed={s.seed} avg_peak_K={s.avg_peak_K:.3f} "
                      f"avg_service_s={s.avg_service_s} dyn_energy_J={s.total_dyn_energy_J:.1f}")
        elif args.command == "sweep":
            summaries = sweep(cfg, out, args.workers)
            print(format_table(aggregate(summaries, by=SWEEP_KEYS)), end="")
        elif args.command == "oracle-check":
            return oracle_check(args.seed or 0, args.updates)
        else:
            summaries = load_summaries(out)
            if not summaries:
                print(f"no summary.csv under {out}", file=sys.stderr)
                return 1
            print(format_table(aggregate(summaries, by=SWEEP_KEYS)), end="")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


def oracle_check(seed: int = 0, updates: int = 200_000) -> int:
    model = build_toy_smdp()
    exact = relative_value_iteration(model)
    learned = train_tabular(model, updates, seed)
    agree = policy_agreement(model, exact, learned.policy)
    err = abs(learned.rho_hat - exact.rho) / exact.rho
    print(f"backend={kernels.BACKEND} states={model.n_states} updates={updates} seed={seed}")
    print(f"rho*={exact.rho:.6f} rho_hat={learned.rho_hat:.6f} rel_err={err:.4f}")
    print(f"policy agreement={agree:.3f}")
    ok = agree == 1.0 and err <= RHO_TOL
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
