"""taskbank command line.

Subcommands: gen-tasks (write a task file), build (run the grouping loop per
seed), eval (recompute metrics for a finished run), baseline (fixed /
adaptive rule rollouts), report (aggregate run directories, optionally with
svg plots). Exit codes: 0 ok, 2 bad arguments or config, 3 missing inputs,
4 runtime failure (a valid checkpoint remains; rerun with --resume).

Configuration: defaults live in the dataclasses; a JSON file of flat dotted
keys ("ppo.total_env_steps": 20000) overrides them; --set key=value pairs
override the file; first-class flags win over everything. Output root
defaults to $TASKBANK_OUT, then ./out.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import math
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .bank import PolicyBank
from .compat import Scorer, ThresholdSet, calibrate_threshold, kpi_threshold_distance
from .distill import DistillConfig
from .evaluation import (EvalResult, baseline_rho, compute_rho, compute_xi,
                         fp_action, rollout_controller)
from .grouping import CURVES_HEADER, GroupingConfig, run as run_grouping
from .netsim import SimConfig, StateVector, write_trace
from .policy import GaussianPolicy
from .ppo import PpoConfig, TrainingDiverged, evaluate_policy
from .tasks import generate_tasks, load_tasks, save_tasks
from .utils import child_seed, fmt_float, read_csv, write_csv

METHODS_BANK = ("bg", "pr", "kt", "ts")
METHODS_RULE = ("fp", "ar")
_SCORER_FOR = {"bg": "binseg", "pr": "pearson", "kt": "kpi_threshold",
               "ts": "binseg"}

# laptop-scale budget (--desk): the full grid finishes in well under an hour
DESK_OVERRIDES = {
    "ppo.total_env_steps": 20000,
    "ppo.final_eval_steps": 120,
    "sim.episode_steps": 60,
    "grouping.eval_steps": 120,
}


def _out_root(arg) -> Path:
    return Path(arg or os.environ.get("TASKBANK_OUT", "out"))


# ---------------------------------------------------------------------------
# dotted-key config plumbing


def _parse_set_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _collect_overrides(config_path, set_pairs) -> dict:
    overrides: dict = {}
    if config_path:
        p = Path(config_path)
        if not p.exists():
            raise FileNotFoundError(f"config file not found: {p}")
        data = json.loads(p.read_text())
        if not isinstance(data, dict):
            raise ValueError("config file must be a JSON object of dotted keys")
        overrides.update(data)
    for pair in set_pairs or []:
        if "=" not in pair:
            raise ValueError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        overrides[key.strip()] = _parse_set_value(raw)
    return overrides


def _coerce(value, current):
    if isinstance(current, tuple) and isinstance(value, (list, tuple)):
        return tuple(value)
    if isinstance(current, bool):
        return bool(value)
    if isinstance(current, int) and not isinstance(current, bool):
        return int(value)
    if isinstance(current, float):
        return float(value) if value is not None else None
    return value


def _apply_prefixed(cls_default, prefix: str, overrides: dict):
    """Build a dataclass instance with `prefix.field` overrides applied."""
    kwargs = {}
    names = {f.name for f in fields(cls_default)}
    for key, value in overrides.items():
        if not key.startswith(prefix + "."):
            continue
        name = key[len(prefix) + 1:]
        if name not in names:
            raise ValueError(f"unknown config key: {key}")
        kwargs[name] = _coerce(value, getattr(cls_default, name))
    return replace(cls_default, **kwargs) if kwargs else cls_default


def _resolve_configs(overrides: dict):
    known_prefixes = ("sim", "ppo", "scorer", "distill", "grouping")
    for key in overrides:
        if "." not in key or key.split(".", 1)[0] not in known_prefixes:
            raise ValueError(f"unknown config key: {key}")
    sim = _apply_prefixed(SimConfig(), "sim", overrides)
    ppo = _apply_prefixed(PpoConfig(), "ppo", overrides)
    distill = _apply_prefixed(DistillConfig(), "distill", overrides)
    scorer_kwargs = {}
    for key, value in overrides.items():
        if key.startswith("scorer."):
            name = key.split(".", 1)[1]
            if name not in ("kind", "min_seg", "window_fraction", "gamma"):
                raise ValueError(f"unknown config key: {key}")
            scorer_kwargs[name] = value
    extras = {key.split(".", 1)[1]: value for key, value in overrides.items()
              if key.startswith("grouping.")}
    for name in extras:
        if name not in ("n", "k", "threshold", "eval_steps", "master_seed",
                        "compute_curves"):
            raise ValueError(f"unknown config key: grouping.{name}")
    return sim, ppo, distill, scorer_kwargs, extras


# ---------------------------------------------------------------------------
# threshold calibration


def _pilot_experiences(tasks, sim_cfg, eval_steps, pilot_size=8):
    """Two independent fixed-parameter rollouts per pilot task."""
    m = min(pilot_size, len(tasks))
    idx = sorted(set(int(round(i)) for i in np.linspace(0, len(tasks) - 1, m)))
    fixed = fp_action(sim_cfg.n_cells)
    pairs = []
    for i in idx:
        task = tasks[i]
        a, b = (rollout_controller(lambda s: fixed, task, eval_steps,
                                   seed=child_seed("pilot", task.task_id, r),
                                   sim_cfg=sim_cfg, policy_id="pilot")[0]
                for r in (0, 1))
        pairs.append((a, b))
    return pairs


def calibrate_thresholds(scorer: Scorer, tasks, sim_cfg: SimConfig,
                         eval_steps: int, pilot_size: int = 8) -> ThresholdSet:
    """Pilot scoring on a spread-out task subset feeds the median calibration.

    Structural scorers pool one same-task score per pilot task (its two
    rollouts against each other, the compatible reference class) with one
    cross-task score per pilot task (the incompatible class), so the median
    lands between the classes whenever they separate."""
    pairs = _pilot_experiences(tasks, sim_cfg, eval_steps, pilot_size)
    if len(pairs) < 2:
        raise ValueError("need at least two pilot tasks to calibrate")
    if scorer.kind == "kpi_threshold":
        scores = [kpi_threshold_distance(e, 0.0, sim_cfg.n_cells)[0]
                  for pair in pairs for e in pair]
    else:
        m = len(pairs)
        scores = [scorer.score([a], b, sim_cfg.n_cells).distance
                  for a, b in pairs]
        scores += [scorer.score([pairs[i][0]], pairs[(i + 1) % m][1],
                                sim_cfg.n_cells).distance for i in range(m)]
    return calibrate_threshold(scores)


def _resolve_threshold(spec: str, method: str, scorer: Scorer, tasks,
                       sim_cfg: SimConfig, eval_steps: int) -> tuple[float, str]:
    """Returns (numeric threshold, label). ts pins -inf regardless."""
    if method == "ts":
        return float("-inf"), "-inf"
    try:
        return float(spec), spec
    except ValueError:
        pass
    name = "default" if spec == "auto" else spec
    ts = calibrate_thresholds(scorer, tasks, sim_cfg, eval_steps)
    try:
        return ts.pick(name), name
    except ValueError:
        raise ValueError(
            f"--threshold must be a number or default/loose/tight/auto, got {spec!r}")


# ---------------------------------------------------------------------------
# run directories


def _write_report(run_dir: Path, result: EvalResult) -> None:
    write_csv(run_dir / "report.csv", EvalResult.REPORT_HEADER,
              [result.report_row()])
    write_csv(run_dir / "per_task.csv", ["policy_id", "task_id", "reward"],
              [[pid, tid, fmt_float(r)] for pid, tid, r in result.per_task])


def _tasks_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:12]


def _write_run_config(run_dir: Path, payload: dict) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True, default=repr) + "\n")


def _build_one(tasks, method: str, seed: int, run_dir: Path,
               gcfg: GroupingConfig) -> EvalResult:
    bank = run_grouping(tasks, gcfg, out_dir=run_dir, resume=True)
    by_id = {t.task_id: t for t in tasks}
    rho, rows = compute_rho(bank, by_id, gcfg.eval_steps,
                            child_seed("curve", seed), gcfg.sim)
    result = EvalResult(method=method, seed=seed, n=gcfg.n,
                        threshold=gcfg.threshold, rho=rho,
                        w_steps=bank.w_steps,
                        xi=compute_xi(rho, bank.w_steps),
                        num_trained=bank.num_trained, per_task=rows)
    _write_report(run_dir, result)
    return result


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_tasks(args) -> int:
    tasks = generate_tasks(count=args.count, n_archetypes=args.archetypes,
                           seed=args.seed, jitter=args.jitter,
                           n_cells=args.n_cells)
    out = Path(args.out) if args.out else _out_root(None) / "tasks.json"
    save_tasks(tasks, out)
    print(f"wrote {len(tasks)} tasks ({args.archetypes} archetypes) to {out}")
    by_arch: dict[int, list[str]] = {}
    for t in tasks:
        by_arch.setdefault(t.archetype, []).append(t.task_id)
    for arch in sorted(by_arch):
        print(f"  archetype {arch}: {' '.join(by_arch[arch])}")
    return 0


DEFAULT_SEEDS = (0, 1, 2, 3, 4)


def _parse_seeds(args) -> list[int]:
    if args.seeds:
        return [int(s) for s in args.seeds.split(",")]
    if args.seed is not None:
        return [args.seed]
    return list(DEFAULT_SEEDS)


def cmd_build(args) -> int:
    tasks = load_tasks(args.tasks)
    overrides = _collect_overrides(args.config, args.set)
    if args.desk:
        overrides.update(DESK_OVERRIDES)
    sim, ppo, distill, scorer_kwargs, extras = _resolve_configs(overrides)
    scorer_kwargs.setdefault("kind", _SCORER_FOR[args.method])
    scorer = Scorer(**scorer_kwargs)

    n = args.bank_size if args.bank_size is not None else extras.get(
        "n", len(tasks) if args.method == "ts" else 8)
    k = args.sample_k if args.sample_k is not None else extras.get("k")
    eval_steps = args.eval_steps if args.eval_steps is not None else \
        extras.get("eval_steps", 240)
    thr_spec = args.threshold if args.threshold is not None else \
        extras.get("threshold")
    if thr_spec is None:
        if args.method == "ts":
            thr_spec = "-inf"
        else:
            raise ValueError(
                f"--threshold is required for method {args.method!r}: pass a "
                "number or auto/default/loose/tight")
    threshold, thr_label = _resolve_threshold(str(thr_spec), args.method,
                                              scorer, tasks, sim, eval_steps)
    curves = not args.no_curves and extras.get("compute_curves", True)

    run_name = args.run_name or f"{args.method}_n{n}"
    out_root = _out_root(args.out)
    seeds = _parse_seeds(args)
    digest = _tasks_digest(args.tasks)

    jobs = []
    for seed in seeds:
        run_dir = out_root / run_name / f"seed{seed}"
        if (run_dir / "checkpoint" / "bank.json").exists() and not args.resume:
            raise ValueError(
                f"{run_dir} already holds a checkpoint; pass --resume to "
                "continue it or choose another --run-name")
        gcfg = GroupingConfig(n=n, k=k, threshold=threshold, scorer=scorer,
                              ppo=ppo, sim=sim, distill=distill,
                              eval_steps=eval_steps, master_seed=seed,
                              compute_curves=curves)
        gcfg.validate()
        _write_run_config(run_dir, {
            "command": "build", "method": args.method, "seed": seed,
            "n": n, "k": gcfg.chunk, "threshold": repr(threshold),
            "threshold_label": thr_label, "eval_steps": eval_steps,
            "tasks_file": str(args.tasks), "tasks_digest": digest,
            "scorer": vars(scorer), "ppo": vars(ppo), "sim": vars(sim),
            "distill": vars(distill), "fingerprint": gcfg.fingerprint(),
            "version": __version__,
        })
        jobs.append((seed, run_dir, gcfg))

    results = []
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as ex:
            futs = [ex.submit(_build_one, tasks, args.method, seed, run_dir, gcfg)
                    for seed, run_dir, gcfg in jobs]
            results = [f.result() for f in futs]
    else:
        for seed, run_dir, gcfg in jobs:
            results.append(_build_one(tasks, args.method, seed, run_dir, gcfg))

    for res in results:
        print(f"{args.method} seed={res.seed} n={res.n} "
              f"threshold={fmt_float(res.threshold)} rho={res.rho:.4f} "
              f"w={res.w_steps} xi={res.xi:.4f} trained={res.num_trained}")
    return 0


def cmd_baseline(args) -> int:
    tasks = load_tasks(args.tasks)
    overrides = _collect_overrides(args.config, args.set)
    if args.desk:
        overrides.update(DESK_OVERRIDES)
    sim, _, _, _, extras = _resolve_configs(overrides)
    eval_steps = args.eval_steps if args.eval_steps is not None else \
        extras.get("eval_steps", 240)
    out_root = _out_root(args.out)
    run_name = args.run_name or args.method
    digest = _tasks_digest(args.tasks)
    for seed in _parse_seeds(args):
        run_dir = out_root / run_name / f"seed{seed}"
        rho, rows = baseline_rho(args.method, tasks, eval_steps,
                                 child_seed("curve", seed), sim)
        result = EvalResult(method=args.method, seed=seed, n=None,
                            threshold=None, rho=rho, w_steps=None, xi=None,
                            num_trained=0,
                            per_task=[(m, tid, r) for m, tid, r in rows])
        _write_run_config(run_dir, {
            "command": "baseline", "method": args.method, "seed": seed,
            "eval_steps": eval_steps, "tasks_file": str(args.tasks),
            "tasks_digest": digest, "sim": vars(sim), "version": __version__,
        })
        _write_report(run_dir, result)
        print(f"{args.method} seed={seed} rho={rho:.4f}")
    return 0


def cmd_eval(args) -> int:
    run_dir = Path(args.run)
    cfg_path = run_dir / "config.json"
    if not cfg_path.exists():
        raise FileNotFoundError(f"no config.json in {run_dir}")
    cfg = json.loads(cfg_path.read_text())
    if cfg.get("command") != "build":
        raise ValueError("eval works on build run directories")
    bank = PolicyBank.load(run_dir / "checkpoint")
    tasks = load_tasks(args.tasks)
    by_id = {t.task_id: t for t in tasks}
    sim = SimConfig(**{k: _coerce(v, getattr(SimConfig(), k))
                       for k, v in cfg["sim"].items()})
    eval_steps = args.eval_steps if args.eval_steps is not None else cfg["eval_steps"]
    seed = cfg["seed"]
    rho, rows = compute_rho(bank, by_id, eval_steps,
                            child_seed("curve", seed), sim)
    result = EvalResult(method=cfg["method"], seed=seed, n=cfg["n"],
                        threshold=float(cfg["threshold"]), rho=rho,
                        w_steps=bank.w_steps,
                        xi=compute_xi(rho, bank.w_steps),
                        num_trained=bank.num_trained, per_task=rows)
    _write_report(run_dir, result)
    print(f"eval {run_dir}: rho={rho:.4f} xi={result.xi:.4f}")
    if args.trace:
        pid, tid = args.trace.split(":", 1)
        if pid not in bank.ids() or tid not in by_id:
            raise KeyError(f"unknown policy or task in --trace {args.trace!r}")
        exp, _ = evaluate_policy(bank.get(pid), by_id[tid], eval_steps,
                                 seed=child_seed("rho", child_seed("curve", seed), tid),
                                 sim_cfg=sim)
        records = [(t + 1, float(exp.rewards[t]),
                    StateVector.from_vector(exp.states[t], sim.n_cells))
                   for t in range(len(exp))]
        trace_path = run_dir / f"trace_{pid}_{tid}.csv"
        write_trace(trace_path, records, sim.n_cells)
        print(f"wrote {trace_path}")
    return 0


# ---------------------------------------------------------------------------
# report aggregation


def _collect_runs(args) -> list[Path]:
    if args.runs:
        dirs = [Path(p) for p in args.runs]
    else:
        root = _out_root(args.out)
        dirs = sorted(p.parent for p in root.glob("*/seed*/report.csv"))
    missing = [d for d in dirs if not (d / "report.csv").exists()]
    if missing:
        raise FileNotFoundError(f"no report.csv under: {missing[0]}")
    if not dirs:
        raise FileNotFoundError("no run directories with report.csv found")
    return dirs


def _group_key(row: list) -> tuple:
    # method, n, threshold
    return (row[0], row[2], row[3])


def cmd_report(args) -> int:
    run_dirs = _collect_runs(args)
    all_rows = []
    curves: dict[tuple, list] = {}
    for d in run_dirs:
        header, rows = read_csv(d / "report.csv")
        if header != EvalResult.REPORT_HEADER:
            raise ValueError(f"mixed report schema in {d}")
        for row in rows:
            all_rows.append(row)
            cpath = d / "curves.csv"
            if cpath.exists():
                chead, crows = read_csv(cpath)
                if chead != CURVES_HEADER:
                    raise ValueError(f"mixed curves schema in {d}")
                curves.setdefault(_group_key(row), []).append(crows)

    all_rows.sort(key=lambda r: (r[0], r[2], r[3], int(r[1])))
    out_root = _out_root(args.out)
    write_csv(out_root / "report.csv", EvalResult.REPORT_HEADER, all_rows)

    # summary: one row per (method, n, threshold)
    groups: dict[tuple, list] = {}
    for row in all_rows:
        groups.setdefault(_group_key(row), []).append(row)
    summary_header = ["method", "n", "threshold", "seeds", "rho_mean",
                      "rho_std", "w_steps_mean", "xi_mean", "xi_std",
                      "num_trained_mean"]
    summary_rows = []
    for key in sorted(groups):
        rows = groups[key]
        rho = np.array([float(r[4]) for r in rows])
        w = [float(r[5]) for r in rows if r[5] != ""]
        xi = [float(r[6]) for r in rows if r[6] != ""]
        nt = np.array([float(r[7]) for r in rows])
        summary_rows.append([
            key[0], key[1], key[2], len(rows),
            fmt_float(rho.mean()), fmt_float(rho.std(ddof=1) if len(rho) > 1 else 0.0),
            fmt_float(np.mean(w)) if w else "",
            fmt_float(np.mean(xi)) if xi else "",
            fmt_float(np.std(xi, ddof=1)) if len(xi) > 1 else ("" if not xi else fmt_float(0.0)),
            fmt_float(nt.mean()),
        ])
    write_csv(out_root / "summary.csv", summary_header, summary_rows)

    # curves: seed-mean rho per iteration row
    curve_files = {}
    for key, runs in sorted(curves.items()):
        lengths = {len(c) for c in runs}
        if len(lengths) != 1:
            raise ValueError(f"curve length mismatch for {key}")
        rows = []
        for i in range(lengths.pop()):
            tp = {c[i][0] for c in runs}
            if len(tp) != 1:
                raise ValueError(f"curve tasks_processed mismatch for {key}")
            rho = np.array([float(c[i][2]) for c in runs])
            nt = np.array([float(c[i][1]) for c in runs])
            rows.append([c_int(tp.pop()), fmt_float(nt.mean()),
                         fmt_float(rho.mean()),
                         fmt_float(rho.std(ddof=1) if len(rho) > 1 else 0.0)])
        curve_files[key] = rows
    if len(curve_files) == 1:
        key, rows = next(iter(curve_files.items()))
        write_csv(out_root / "curves.csv", CURVES_HEADER + ["rho_std"], rows)
    else:
        for key, rows in curve_files.items():
            slug = f"{key[0]}_n{key[1]}_thr{key[2]}".replace("/", "-")
            write_csv(out_root / f"curves_{slug}.csv",
                      CURVES_HEADER + ["rho_std"], rows)

    if args.plots:
        _write_plots(out_root, summary_header, summary_rows, curve_files)
    print(f"aggregated {len(all_rows)} runs into {out_root / 'report.csv'}")
    return 0


def c_int(s) -> int:
    return int(float(s))


# ---------------------------------------------------------------------------
# svg plots (no plotting dependency; simple hand-rolled charts)


def _svg_frame(width, height, title):
    return [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
            f'<text x="{width / 2}" y="20" text-anchor="middle" '
            f'font-family="sans-serif" font-size="14">{title}</text>']


def _svg_bar_chart(path, labels, values, errs, title):
    w, h, m = 640, 400, 60
    parts = _svg_frame(w, h, title)
    vmax = max(v + e for v, e in zip(values, errs)) if values else 1.0
    vmax = vmax * 1.1 or 1.0
    bw = (w - 2 * m) / max(len(values), 1)
    for i, (lab, v, e) in enumerate(zip(labels, values, errs)):
        x = m + i * bw + bw * 0.15
        bh = (v / vmax) * (h - 2 * m)
        y = h - m - bh
        parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{bw * 0.7:.1f}" '
                     f'height="{bh:.1f}" fill="#4878cf"/>')
        if e > 0:
            cx = x + bw * 0.35
            y1 = h - m - ((v + e) / vmax) * (h - 2 * m)
            y2 = h - m - (max(v - e, 0) / vmax) * (h - 2 * m)
            parts.append(f'<line x1="{cx:.1f}" y1="{y1:.1f}" x2="{cx:.1f}" '
                         f'y2="{y2:.1f}" stroke="black"/>')
        parts.append(f'<text x="{x + bw * 0.35:.1f}" y="{h - m + 16}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{lab}</text>')
        parts.append(f'<text x="{x + bw * 0.35:.1f}" y="{y - 4:.1f}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="10">{v:.2f}</text>')
    parts.append(f'<line x1="{m}" y1="{h - m}" x2="{w - m}" y2="{h - m}" stroke="black"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))


def _svg_line_chart(path, series, title, xlabel, ylabel):
    w, h, m = 640, 400, 60
    parts = _svg_frame(w, h, title)
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    if not xs:
        return
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    colors = ["#4878cf", "#d1022f", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]

    def sx(x):
        return m + (x - x0) / (x1 - x0) * (w - 2 * m)

    def sy(y):
        return h - m - (y - y0) / (y1 - y0) * (h - 2 * m)

    for i, (label, pts) in enumerate(series.items()):
        color = colors[i % len(colors)]
        d = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in pts)
        parts.append(f'<polyline points="{d}" fill="none" stroke="{color}" '
                     f'stroke-width="2"/>')
        parts.append(f'<text x="{w - m + 4}" y="{sy(pts[-1][1]):.1f}" '
                     f'font-family="sans-serif" font-size="10" '
                     f'fill="{color}">{label}</text>')
    parts.append(f'<line x1="{m}" y1="{h - m}" x2="{w - m}" y2="{h - m}" stroke="black"/>')
    parts.append(f'<line x1="{m}" y1="{m}" x2="{m}" y2="{h - m}" stroke="black"/>')
    for x, y, txt, anchor in ((w / 2, h - 16, xlabel, "middle"),
                              (16, h / 2, ylabel, "middle")):
        rot = ' transform="rotate(-90 16 200)"' if txt == ylabel else ""
        parts.append(f'<text x="{x}" y="{y}" text-anchor="{anchor}" '
                     f'font-family="sans-serif" font-size="12"{rot}>{txt}</text>')
    parts.append(f'<text x="{m}" y="{h - m + 14}" font-size="10" '
                 f'font-family="sans-serif">{x0:g}</text>')
    parts.append(f'<text x="{w - m}" y="{h - m + 14}" text-anchor="end" '
                 f'font-size="10" font-family="sans-serif">{x1:g}</text>')
    parts.append(f'<text x="{m - 4}" y="{sy(y0):.1f}" text-anchor="end" '
                 f'font-size="10" font-family="sans-serif">{y0:.2f}</text>')
    parts.append(f'<text x="{m - 4}" y="{sy(y1) + 8:.1f}" text-anchor="end" '
                 f'font-size="10" font-family="sans-serif">{y1:.2f}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))


def _write_plots(out_root: Path, summary_header, summary_rows, curve_files):
    plots = out_root / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    labels, vals, errs = [], [], []
    for row in summary_rows:
        labels.append(f"{row[0]} n={row[1]}" if row[1] else row[0])
        vals.append(float(row[4]))
        errs.append(float(row[5]) if row[5] != "" else 0.0)
    _svg_bar_chart(plots / "rho_by_method.svg", labels, vals, errs,
                   "mean cumulative reward by method")
    if curve_files:
        series = {}
        for key, rows in curve_files.items():
            label = f"{key[0]} n={key[1]}" if key[1] else key[0]
            series[label] = [(float(r[0]), float(r[2])) for r in rows]
        _svg_line_chart(plots / "curves.svg", series,
                        "rho vs tasks processed", "tasks processed", "rho")


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="taskbank", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-tasks", help="generate a task file")
    g.add_argument("--count", type=int, default=32)
    g.add_argument("--archetypes", type=int, default=8)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--jitter", type=float, default=0.1)
    g.add_argument("--n-cells", type=int, default=4)
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_gen_tasks)

    b = sub.add_parser("build", help="run the grouping loop")
    b.add_argument("--tasks", required=True)
    b.add_argument("--method", choices=METHODS_BANK, required=True)
    b.add_argument("--bank-size", "-n", type=int, default=None,
                   help="max policies kept (n); ts defaults to |D|")
    b.add_argument("--sample-k", "-k", type=int, default=None,
                   help="tasks sampled per iteration (default: bank size)")
    b.add_argument("--threshold", default=None,
                   help="number, or default/loose/tight/auto (pilot-calibrated); "
                        "required for bg/pr/kt")
    b.add_argument("--seed", type=int, default=None)
    b.add_argument("--seeds", default=None,
                   help="comma-separated list (default 0,1,2,3,4)")
    b.add_argument("--eval-steps", type=int, default=None)
    b.add_argument("--out", default=None)
    b.add_argument("--run-name", default=None)
    b.add_argument("--config", default=None)
    b.add_argument("--set", action="append", default=None, metavar="KEY=VALUE")
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--resume", action="store_true",
                   help="continue existing checkpoints instead of refusing")
    b.add_argument("--desk", action="store_true",
                   help="apply the small desk-scale budget overrides")
    b.add_argument("--no-curves", action="store_true")
    b.set_defaults(func=cmd_build)

    e = sub.add_parser("eval", help="recompute metrics for a run directory")
    e.add_argument("--run", required=True)
    e.add_argument("--tasks", required=True)
    e.add_argument("--eval-steps", type=int, default=None)
    e.add_argument("--trace", default=None, metavar="POLICY_ID:TASK_ID")
    e.set_defaults(func=cmd_eval)

    bl = sub.add_parser("baseline", help="rule-based baselines")
    bl.add_argument("--tasks", required=True)
    bl.add_argument("--method", choices=METHODS_RULE, required=True)
    bl.add_argument("--seed", type=int, default=None)
    bl.add_argument("--seeds", default=None,
                    help="comma-separated list (default 0,1,2,3,4)")
    bl.add_argument("--eval-steps", type=int, default=None)
    bl.add_argument("--out", default=None)
    bl.add_argument("--run-name", default=None)
    bl.add_argument("--config", default=None)
    bl.add_argument("--set", action="append", default=None, metavar="KEY=VALUE")
    bl.add_argument("--desk", action="store_true",
                    help="apply the small desk-scale budget overrides")
    bl.set_defaults(func=cmd_baseline)

    r = sub.add_parser("report", help="aggregate run directories")
    r.add_argument("--out", default=None)
    r.add_argument("--runs", nargs="*", default=None)
    r.add_argument("--plots", action="store_true")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except TrainingDiverged as e:
        print(f"error: training diverged (checkpoint kept): {e}", file=sys.stderr)
        return 4
    except (ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
