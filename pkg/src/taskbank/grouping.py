"""Iterative group-or-train orchestration of the policy bank.

Process the (seeded, shuffled) task list in chunks of k. For each sampled
task, every policy in the bank at iteration start rolls out on it; the
compatibility scorer compares the policy's training experiences with that
rollout. Compatible tasks join the group of the minimum-distance policy;
the rest get freshly trained policies. The bank is then capped back to n by
distilling the most similar pair, and a checkpoint is written so an
interrupted run resumes bit-identically. Iteration 0 is the bootstrap: the
bank is empty, so all k tasks train.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bank import PolicyBank
from .compat import Scorer, kpi_threshold_distance
from .distill import DistillConfig, cap_bank
from .evaluation import compute_rho
from .netsim import SimConfig
from .ppo import PpoConfig, evaluate_policy, train_policy
from .tasks import TrafficTask
from .utils import child_seed, config_hash, write_csv, fmt_float

RUN_STATE_SCHEMA = 1

COMPAT_HEADER = ["iteration", "policy_id", "task_id", "kind", "distance",
                 "threshold", "compatible"]
GROUPING_HEADER = ["iteration", "tasks_sampled", "num_compatible",
                   "num_trained", "bank_size", "w_steps"]
CURVES_HEADER = ["tasks_processed", "num_trained", "rho"]


@dataclass
class GroupingConfig:
    n: int = 8
    k: int | None = None          # tasks sampled per iteration; defaults to n
    threshold: float = 0.0        # compatible iff distance <= threshold; +-inf allowed
    scorer: Scorer = field(default_factory=Scorer)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    eval_steps: int = 240
    master_seed: int = 0
    compute_curves: bool = True

    @property
    def chunk(self) -> int:
        return self.k if self.k is not None else self.n

    def validate(self) -> None:
        if self.n < 1 or self.chunk < 1:
            raise ValueError("n and k must be >= 1")
        if math.isnan(self.threshold):
            raise ValueError("threshold must not be NaN")
        if self.eval_steps <= 0:
            raise ValueError("eval_steps must be positive")
        self.ppo.validate()
        self.sim.validate()
        self.distill.validate()

    def fingerprint(self) -> str:
        d = {"n": self.n, "k": self.chunk, "threshold": repr(self.threshold),
             "scorer": vars(self.scorer), "ppo": vars(self.ppo),
             "sim": vars(self.sim), "distill": vars(self.distill),
             "eval_steps": self.eval_steps, "master_seed": self.master_seed,
             "compute_curves": self.compute_curves}
        return config_hash(d)


@dataclass
class RunState:
    task_order: list
    next_index: int
    compat_rows: list
    grouping_rows: list
    curve_rows: list
    fingerprint: str

    def to_json(self, master_seed: int) -> dict:
        return {"schema": RUN_STATE_SCHEMA, "master_seed": master_seed,
                "task_order": self.task_order, "next_index": self.next_index,
                "compat_rows": self.compat_rows,
                "grouping_rows": self.grouping_rows,
                "curve_rows": self.curve_rows,
                "fingerprint": self.fingerprint}

    @classmethod
    def from_json(cls, d: dict) -> "RunState":
        if d.get("schema") != RUN_STATE_SCHEMA:
            raise ValueError(f"unsupported run-state schema: {d.get('schema')!r}")
        return cls(task_order=d["task_order"], next_index=d["next_index"],
                   compat_rows=d["compat_rows"],
                   grouping_rows=d["grouping_rows"],
                   curve_rows=d["curve_rows"], fingerprint=d["fingerprint"])


def _write_logs(out_dir: Path, state: RunState, bank: PolicyBank) -> None:
    write_csv(out_dir / "compat_log.csv", COMPAT_HEADER,
              [[r[0], r[1], r[2], r[3], fmt_float(r[4]), fmt_float(r[5]),
                "true" if r[6] else "false"] for r in state.compat_rows])
    write_csv(out_dir / "grouping_log.csv", GROUPING_HEADER,
              state.grouping_rows)
    with open(out_dir / "merges.jsonl", "w") as f:
        for rec in bank.merge_records:
            f.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
    if state.curve_rows:
        write_csv(out_dir / "curves.csv", CURVES_HEADER,
                  [[r[0], r[1], fmt_float(r[2])] for r in state.curve_rows])


def _checkpoint(out_dir: Path, state: RunState, bank: PolicyBank,
                master_seed: int) -> None:
    ckpt = out_dir / "checkpoint"
    ckpt.mkdir(parents=True, exist_ok=True)
    bank.save(ckpt)
    (ckpt / "rng.json").write_text(
        json.dumps(state.to_json(master_seed), sort_keys=True) + "\n")
    _write_logs(out_dir, state, bank)


def run(tasks, cfg: GroupingConfig, out_dir=None, resume: bool = True,
        stop_after_iteration: int | None = None) -> PolicyBank:
    """Run the grouping loop over `tasks`; returns the final bank.

    With out_dir set, every iteration checkpoints bank + run state + logs;
    an interrupted run rerun with the same arguments resumes where it
    stopped and produces byte-identical outputs.
    """
    cfg.validate()
    tasks = list(tasks)
    if not tasks:
        raise ValueError("no tasks to process")
    by_id = {t.task_id: t for t in tasks}
    if len(by_id) != len(tasks):
        raise ValueError("duplicate task ids")
    out_path = Path(out_dir) if out_dir is not None else None

    state = None
    bank = None
    if resume and out_path is not None:
        ckpt = out_path / "checkpoint"
        if (ckpt / "bank.json").exists():
            bank = PolicyBank.load(ckpt)
            state = RunState.from_json(json.loads((ckpt / "rng.json").read_text()))
            if state.fingerprint != cfg.fingerprint():
                raise ValueError("checkpoint was produced by a different config")
            missing = [tid for tid in state.task_order if tid not in by_id]
            if missing:
                raise ValueError(f"checkpoint references unknown tasks: {missing[:3]}")
    if state is None:
        order_rng = np.random.default_rng(child_seed("order", cfg.master_seed))
        ids = [t.task_id for t in tasks]
        order = [ids[i] for i in order_rng.permutation(len(ids))]
        state = RunState(task_order=order, next_index=0, compat_rows=[],
                         grouping_rows=[], curve_rows=[],
                         fingerprint=cfg.fingerprint())
        bank = PolicyBank()

    k = cfg.chunk
    scorer = cfg.scorer
    curve_seed = child_seed("curve", cfg.master_seed)

    while state.next_index < len(state.task_order):
        iteration = bank.iteration
        chunk = state.task_order[state.next_index:state.next_index + k]
        start_ids = bank.ids()

        # score every bank policy against every sampled task
        to_group: dict[str, str] = {}
        for tid in chunk:
            task = by_id[tid]
            best_pid, best_dist = None, np.inf
            for pid in start_ids:
                pol = bank.get(pid)
                test_exp, _ = evaluate_policy(
                    pol, task, cfg.eval_steps,
                    seed=child_seed("assess", cfg.master_seed, iteration, pid, tid),
                    sim_cfg=cfg.sim)
                if scorer.kind == "kpi_threshold":
                    dist, _ = kpi_threshold_distance(test_exp, 0.0, cfg.sim.n_cells)
                else:
                    dist = scorer.score(pol.experiences, test_exp,
                                        cfg.sim.n_cells).distance
                compatible = dist <= cfg.threshold
                state.compat_rows.append(
                    [iteration, pid, tid, scorer.kind, dist, cfg.threshold,
                     bool(compatible)])
                if compatible and dist < best_dist:
                    best_pid, best_dist = pid, dist
            if best_pid is not None:
                to_group[tid] = best_pid

        # group the compatible tasks, train the rest
        trained_now = 0
        for tid in chunk:
            if tid in to_group:
                bank.assign(to_group[tid], tid)
            else:
                pol, steps = train_policy(
                    by_id[tid], cfg.ppo,
                    seed=child_seed("train", cfg.master_seed, tid),
                    sim_cfg=cfg.sim, policy_id=bank.new_policy_id())
                exp, _ = evaluate_policy(
                    pol, by_id[tid], cfg.eval_steps,
                    seed=child_seed("train-exp", cfg.master_seed, tid),
                    sim_cfg=cfg.sim)
                pol.experiences = [exp]
                bank.add(pol, [tid])
                bank.w_steps += steps
                bank.num_trained += 1
                trained_now += 1

        if len(bank) > cfg.n:
            cap_bank(bank, cfg.n, cfg.distill)

        state.next_index += len(chunk)
        state.grouping_rows.append(
            [iteration, len(chunk), len(to_group), trained_now, len(bank),
             bank.w_steps])
        if cfg.compute_curves:
            rho, _ = compute_rho(bank, by_id, cfg.eval_steps, curve_seed,
                                 cfg.sim)
            state.curve_rows.append([state.next_index, bank.num_trained, rho])
        bank.iteration += 1

        if out_path is not None:
            _checkpoint(out_path, state, bank, cfg.master_seed)
        if stop_after_iteration is not None and iteration >= stop_after_iteration:
            break

    return bank
