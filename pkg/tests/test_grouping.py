import json
import math
from pathlib import Path

import numpy as np
import pytest

from taskbank.compat import Scorer
from taskbank.grouping import (COMPAT_HEADER, CURVES_HEADER, GROUPING_HEADER,
                               GroupingConfig, run)
from taskbank.utils import read_csv

from tests.conftest import DESK_SIM, TINY_PPO, make_task


def gcfg(**over):
    base = dict(n=8, k=2, threshold=0.0, ppo=TINY_PPO, sim=DESK_SIM,
                eval_steps=30, master_seed=0)
    base.update(over)
    return GroupingConfig(**base)


def tree_bytes(root):
    # relative path -> file bytes for every file under root
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


# shared runs; +inf groups everything after bootstrap, -inf groups nothing

@pytest.fixture(scope="module")
def inf_run(tiny_tasks, tmp_path_factory):
    out = tmp_path_factory.mktemp("inf_run")
    cfg = gcfg(threshold=float("inf"))
    bank = run(tiny_tasks, cfg, out_dir=out)
    return bank, out, cfg


@pytest.fixture(scope="module")
def neginf_run(tiny_tasks, tmp_path_factory):
    out = tmp_path_factory.mktemp("neginf_run")
    cfg = gcfg(threshold=float("-inf"), k=4)
    bank = run(tiny_tasks, cfg, out_dir=out)
    return bank, out, cfg


@pytest.fixture(scope="module")
def capped_run(tiny_tasks, tmp_path_factory):
    out = tmp_path_factory.mktemp("capped_run")
    cfg = gcfg(threshold=float("-inf"), n=2, k=2)
    bank = run(tiny_tasks, cfg, out_dir=out)
    return bank, out, cfg


# ---------------------------------------------------------------------------
# config


def test_config_validation():
    with pytest.raises(ValueError):
        gcfg(n=0).validate()
    with pytest.raises(ValueError):
        gcfg(k=0).validate()
    with pytest.raises(ValueError):
        gcfg(threshold=float("nan")).validate()
    with pytest.raises(ValueError):
        gcfg(eval_steps=0).validate()
    gcfg(threshold=float("inf")).validate()
    gcfg(threshold=float("-inf")).validate()


def test_chunk_defaults_to_n():
    assert gcfg(k=None, n=5).chunk == 5
    assert gcfg(k=3, n=5).chunk == 3


def test_fingerprint_tracks_config():
    assert gcfg().fingerprint() == gcfg().fingerprint()
    assert gcfg(threshold=0.1).fingerprint() != gcfg().fingerprint()
    assert gcfg(master_seed=1).fingerprint() != gcfg().fingerprint()
    assert (gcfg(threshold=float("inf")).fingerprint()
            != gcfg(threshold=float("-inf")).fingerprint())


def test_run_rejects_empty_and_duplicate_tasks(tmp_path):
    with pytest.raises(ValueError):
        run([], gcfg())
    t = make_task("dup")
    with pytest.raises(ValueError):
        run([t, make_task("dup")], gcfg())


# ---------------------------------------------------------------------------
# threshold limits


def test_inf_threshold_trains_bootstrap_only(inf_run, tiny_tasks):
    bank, out, _ = inf_run
    # bootstrap trains k tasks; afterwards +inf groups every sampled task
    assert bank.num_trained == 2
    assert sorted(bank.ids()) == ["p0000", "p0001"]
    assert not bank.merge_records
    assert sorted(bank.all_task_ids()) == sorted(t.task_id for t in tiny_tasks)
    header, rows = read_csv(out / "grouping_log.csv")
    assert header == GROUPING_HEADER
    assert [r[0] for r in rows] == ["0", "1", "2"]
    assert [r[3] for r in rows] == ["2", "0", "0"]   # num_trained
    assert [r[2] for r in rows] == ["0", "2", "2"]   # num_compatible


def test_bootstrap_scores_against_empty_bank(inf_run):
    # policies trained in an iteration never assess that iteration's tasks:
    # with threshold +inf, the second bootstrap task would otherwise group
    _, out, _ = inf_run
    header, rows = read_csv(out / "compat_log.csv")
    assert header == COMPAT_HEADER
    assert all(r[0] != "0" for r in rows)
    # later iterations: both bank policies score both sampled tasks
    assert len(rows) == 2 * 2 * 2
    assert all(r[3] == "binseg" for r in rows)
    assert all(r[6] == "true" for r in rows)
    assert all(math.isinf(float(r[5])) for r in rows)


def test_grouped_task_joins_argmin_distance_policy(inf_run):
    bank, out, _ = inf_run
    _, rows = read_csv(out / "compat_log.csv")
    groups = {tid: pid for pid in bank.ids() for tid in bank.group_of(pid)}
    seen = {}
    for it, pid, tid, _, dist, _, ok in rows:
        assert ok == "true"
        key = (it, tid)
        if key not in seen or float(dist) < seen[key][1]:
            seen[key] = (pid, float(dist))
    assert seen
    for (_, tid), (pid, _) in seen.items():
        assert groups[tid] == pid


def test_neginf_threshold_trains_every_task(neginf_run, tiny_tasks):
    bank, out, _ = neginf_run
    assert bank.num_trained == len(tiny_tasks)
    assert len(bank) == len(tiny_tasks)
    assert not bank.merge_records
    for pid in bank.ids():
        group = bank.group_of(pid)
        assert group == [bank.get(pid).trained_task_id]
    _, rows = read_csv(out / "compat_log.csv")
    assert rows and all(r[6] == "false" for r in rows)


def test_w_counts_training_steps_only(inf_run, neginf_run):
    bank_inf, _, cfg = inf_run
    assert bank_inf.w_steps == 2 * cfg.ppo.total_env_steps
    bank_neg, _, _ = neginf_run
    assert bank_neg.w_steps == 6 * TINY_PPO.total_env_steps


def test_grouping_log_remainder_chunk(neginf_run):
    # 6 tasks at k=4 split into chunks of 4 and 2
    _, out, _ = neginf_run
    _, rows = read_csv(out / "grouping_log.csv")
    assert [r[1] for r in rows] == ["4", "2"]
    assert [r[4] for r in rows] == ["4", "6"]            # bank_size
    assert [r[5] for r in rows] == ["8000", "12000"]     # w_steps


def test_curves_one_row_per_iteration(neginf_run):
    _, out, _ = neginf_run
    lines = (out / "curves.csv").read_text().strip().split("\n")
    assert len(lines) == 2 + 1
    header, rows = read_csv(out / "curves.csv")
    assert header == CURVES_HEADER
    assert [r[0] for r in rows] == ["4", "6"]   # tasks_processed
    assert [r[1] for r in rows] == ["4", "6"]   # num_trained
    for r in rows:
        assert np.isfinite(float(r[2]))


# ---------------------------------------------------------------------------
# bank capping inside the loop


def test_bank_capped_every_iteration(capped_run, tiny_tasks):
    bank, out, _ = capped_run
    assert len(bank) == 2
    assert bank.num_trained == 6
    assert bank.w_steps == 6 * TINY_PPO.total_env_steps  # merges add no steps
    assert len(bank.merge_records) == 4
    assert sorted(bank.all_task_ids()) == sorted(t.task_id for t in tiny_tasks)
    _, rows = read_csv(out / "grouping_log.csv")
    assert [r[4] for r in rows] == ["2", "2", "2"]


def test_merge_log_lines(capped_run):
    _, out, _ = capped_run
    lines = (out / "merges.jsonl").read_text().strip().split("\n")
    assert len(lines) == 4
    for line in lines:
        rec = json.loads(line)
        assert rec["student_id"].startswith("m")
        assert len(rec["parent_ids"]) == 2
        assert rec["final_loss"] <= rec["initial_loss"] + 1e-9
        assert rec["iteration"] in (1, 2)
        assert rec["epochs_run"] >= 1


# ---------------------------------------------------------------------------
# determinism, checkpointing, resume


def test_rerun_is_byte_identical(inf_run, tiny_tasks, tmp_path):
    _, out, cfg = inf_run
    run(tiny_tasks, gcfg(threshold=float("inf")), out_dir=tmp_path)
    assert tree_bytes(tmp_path) == tree_bytes(out)


def test_resume_matches_uninterrupted_run(inf_run, tiny_tasks, tmp_path):
    _, out, _ = inf_run
    cfg = gcfg(threshold=float("inf"))
    partial = run(tiny_tasks, cfg, out_dir=tmp_path, stop_after_iteration=0)
    assert partial.iteration == 1
    assert (tmp_path / "checkpoint" / "bank.json").exists()
    resumed = run(tiny_tasks, gcfg(threshold=float("inf")), out_dir=tmp_path)
    assert resumed.iteration == 3
    assert tree_bytes(tmp_path) == tree_bytes(out)


def test_resume_of_finished_run_changes_nothing(inf_run, tiny_tasks):
    bank, out, _ = inf_run
    before = tree_bytes(out)
    again = run(tiny_tasks, gcfg(threshold=float("inf")), out_dir=out)
    assert tree_bytes(out) == before
    assert again.ids() == bank.ids()
    assert {p: again.group_of(p) for p in again.ids()} == \
           {p: bank.group_of(p) for p in bank.ids()}


def test_resume_refuses_config_change(inf_run, tiny_tasks):
    _, out, _ = inf_run
    with pytest.raises(ValueError, match="different config"):
        run(tiny_tasks, gcfg(threshold=0.5), out_dir=out)


def test_resume_refuses_missing_tasks(inf_run, tiny_tasks):
    _, out, _ = inf_run
    with pytest.raises(ValueError, match="unknown tasks"):
        run(tiny_tasks[:5], gcfg(threshold=float("inf")), out_dir=out)


def test_master_seed_changes_run(inf_run, tiny_tasks, tmp_path):
    _, out, _ = inf_run
    cfg = gcfg(threshold=float("inf"), master_seed=1)
    bank = run(tiny_tasks, cfg, out_dir=tmp_path, stop_after_iteration=0)
    assert bank.iteration == 1 and bank.num_trained == 2
    order0 = json.loads((out / "checkpoint" / "rng.json").read_text())["task_order"]
    order1 = json.loads((tmp_path / "checkpoint" / "rng.json").read_text())["task_order"]
    assert sorted(order0) == sorted(order1)
    assert order0 != order1


# ---------------------------------------------------------------------------
# alternative scorer pathway


def test_kpi_threshold_scorer_pathway(tiny_tasks, tmp_path):
    cfg = gcfg(threshold=float("inf"), scorer=Scorer(kind="kpi_threshold"))
    bank = run(tiny_tasks[:4], cfg, out_dir=tmp_path)
    assert bank.num_trained == 2
    _, rows = read_csv(tmp_path / "compat_log.csv")
    assert rows and all(r[3] == "kpi_threshold" for r in rows)
