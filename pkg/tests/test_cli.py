import json
from pathlib import Path

import numpy as np
import pytest

from taskbank.cli import main
from taskbank.compat import Scorer, ThresholdSet
from taskbank.cli import calibrate_thresholds
from taskbank.evaluation import EvalResult
from taskbank.tasks import load_tasks
from taskbank.utils import read_csv

from tests.conftest import DESK_SIM

# desk-size budget passed on every build invocation
BUILD_SETS = ["--set", "ppo.total_env_steps=2000",
              "--set", "ppo.steps_per_update=2000",
              "--set", "ppo.minibatch_size=64",
              "--set", "ppo.final_eval_steps=30",
              "--set", "sim.episode_steps=30"]


def tree_bytes(root):
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def task_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("tasks") / "tasks.json"
    assert main(["gen-tasks", "--count", "4", "--archetypes", "2",
                 "--seed", "0", "--out", str(p)]) == 0
    return p


@pytest.fixture(scope="module")
def two_task_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("tasks2") / "tasks.json"
    assert main(["gen-tasks", "--count", "2", "--archetypes", "2",
                 "--seed", "1", "--out", str(p)]) == 0
    return p


@pytest.fixture(scope="module")
def built_root(task_file, tmp_path_factory):
    root = tmp_path_factory.mktemp("built")
    rc = main(["build", "--tasks", str(task_file), "--method", "bg",
               "--threshold", "inf", "-n", "8", "-k", "2", "--seed", "0",
               "--eval-steps", "30", "--out", str(root)] + BUILD_SETS)
    assert rc == 0
    return root


# ---------------------------------------------------------------------------
# gen-tasks


def test_gen_tasks_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["gen-tasks", "--count", "6", "--archetypes", "3",
                 "--seed", "0", "--out", str(a)]) == 0
    out = capsys.readouterr().out
    assert "wrote 6 tasks" in out
    assert out.count("archetype ") == 3
    assert main(["gen-tasks", "--count", "6", "--archetypes", "3",
                 "--seed", "0", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(load_tasks(a)) == 6


def test_gen_tasks_rejects_bad_count(tmp_path, capsys):
    rc = main(["gen-tasks", "--count", "0", "--out", str(tmp_path / "t.json")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_gen_tasks_honors_out_env(tmp_path, monkeypatch):
    monkeypatch.setenv("TASKBANK_OUT", str(tmp_path / "envroot"))
    assert main(["gen-tasks", "--count", "2", "--archetypes", "2"]) == 0
    assert (tmp_path / "envroot" / "tasks.json").exists()


# ---------------------------------------------------------------------------
# build


def test_build_creates_run_files(built_root):
    run_dir = built_root / "bg_n8" / "seed0"
    for name in ("config.json", "report.csv", "per_task.csv",
                 "compat_log.csv", "grouping_log.csv", "curves.csv",
                 "merges.jsonl", "checkpoint/bank.json", "checkpoint/rng.json"):
        assert (run_dir / name).exists(), name
    cfg = json.loads((run_dir / "config.json").read_text())
    assert cfg["method"] == "bg" and cfg["seed"] == 0
    assert cfg["threshold"] == "inf"
    assert len(cfg["fingerprint"]) == 12
    assert len(cfg["tasks_digest"]) == 12
    assert "version" in cfg and "sim" in cfg and "ppo" in cfg


def test_build_report_is_self_consistent(built_root):
    run_dir = built_root / "bg_n8" / "seed0"
    header, rows = read_csv(run_dir / "report.csv")
    assert header == EvalResult.REPORT_HEADER
    (method, seed, n, thr, rho, w, xi, trained), = rows
    assert (method, seed, n) == ("bg", "0", "8")
    assert float(xi) == float(rho) / (float(w) / 100_000.0)
    assert trained == "2"  # +inf threshold: bootstrap only
    _, per_task = read_csv(run_dir / "per_task.csv")
    assert len(per_task) == 4
    assert float(rho) == np.mean([float(r[2]) for r in per_task])


def test_build_curves_row_per_iteration(built_root):
    # 4 tasks at k=2: two iterations, so header + 2 rows
    lines = (built_root / "bg_n8" / "seed0" / "curves.csv").read_text()
    assert len(lines.strip().split("\n")) == 3


def test_build_refuses_overwrite_without_resume(built_root, task_file, capsys):
    args = ["build", "--tasks", str(task_file), "--method", "bg",
            "--threshold", "inf", "-n", "8", "-k", "2", "--seed", "0",
            "--eval-steps", "30", "--out", str(built_root)] + BUILD_SETS
    assert main(args) == 2
    assert "--resume" in capsys.readouterr().err
    before = tree_bytes(built_root / "bg_n8")
    assert main(args + ["--resume"]) == 0
    assert tree_bytes(built_root / "bg_n8") == before


def test_build_requires_threshold_for_scored_methods(task_file, tmp_path, capsys):
    for method in ("bg", "pr", "kt"):
        rc = main(["build", "--tasks", str(task_file), "--method", method,
                   "--out", str(tmp_path)] + BUILD_SETS)
        assert rc == 2
        assert "--threshold" in capsys.readouterr().err


def test_build_rejects_bad_threshold_label(task_file, tmp_path, capsys):
    rc = main(["build", "--tasks", str(task_file), "--method", "bg",
               "--threshold", "banana", "--eval-steps", "30",
               "--out", str(tmp_path)] + BUILD_SETS)
    assert rc == 2
    assert "default/loose/tight/auto" in capsys.readouterr().err


def test_build_ts_needs_no_threshold(two_task_file, tmp_path):
    cfg_file = tmp_path / "budget.json"
    cfg_file.write_text(json.dumps({
        "ppo.total_env_steps": 2000, "ppo.steps_per_update": 2000,
        "ppo.minibatch_size": 64, "ppo.final_eval_steps": 30,
        "sim.episode_steps": 30}))
    rc = main(["build", "--tasks", str(two_task_file), "--method", "ts",
               "--seed", "0", "--eval-steps", "30", "--out", str(tmp_path),
               "--config", str(cfg_file)])
    assert rc == 0
    run_dir = tmp_path / "ts_n2" / "seed0"   # ts defaults n to |D|
    cfg = json.loads((run_dir / "config.json").read_text())
    assert cfg["threshold"] == "-inf"
    assert cfg["ppo"]["total_env_steps"] == 2000
    _, rows = read_csv(run_dir / "report.csv")
    assert rows[0][7] == "2"  # every task trained
    assert rows[0][3] == "-inf"


def test_build_rejects_bad_set_pairs(task_file, tmp_path):
    base = ["build", "--tasks", str(task_file), "--method", "bg",
            "--threshold", "0", "--out", str(tmp_path)]
    assert main(base + ["--set", "noequals"]) == 2
    assert main(base + ["--set", "bogus.key=1"]) == 2
    assert main(base + ["--set", "ppo.nonfield=3"]) == 2


def test_build_missing_inputs_exit_3(task_file, tmp_path):
    assert main(["build", "--tasks", str(tmp_path / "nope.json"),
                 "--method", "bg", "--threshold", "0",
                 "--out", str(tmp_path)]) == 3
    assert main(["build", "--tasks", str(task_file), "--method", "bg",
                 "--threshold", "0", "--out", str(tmp_path),
                 "--config", str(tmp_path / "missing.json")]) == 3


def test_config_file_must_be_object(task_file, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    assert main(["build", "--tasks", str(task_file), "--method", "bg",
                 "--threshold", "0", "--out", str(tmp_path),
                 "--config", str(bad)]) == 2


# ---------------------------------------------------------------------------
# eval


def test_eval_reproduces_report_and_trace(built_root, task_file, capsys):
    run_dir = built_root / "bg_n8" / "seed0"
    before = (run_dir / "report.csv").read_bytes()
    assert main(["eval", "--run", str(run_dir),
                 "--tasks", str(task_file)]) == 0
    assert (run_dir / "report.csv").read_bytes() == before
    _, per_task = read_csv(run_dir / "per_task.csv")
    pid, tid = per_task[0][0], per_task[0][1]
    assert main(["eval", "--run", str(run_dir), "--tasks", str(task_file),
                 "--trace", f"{pid}:{tid}"]) == 0
    trace = run_dir / f"trace_{pid}_{tid}.csv"
    header, rows = read_csv(trace)
    assert header[:2] == ["step", "reward"]
    assert len(rows) == 30
    capsys.readouterr()


def test_eval_rejects_unknown_trace_ids(built_root, task_file, capsys):
    run_dir = built_root / "bg_n8" / "seed0"
    rc = main(["eval", "--run", str(run_dir), "--tasks", str(task_file),
               "--trace", "nope:missing"])
    assert rc == 2
    assert "unknown policy or task" in capsys.readouterr().err


def test_eval_missing_run_exit_3(task_file, tmp_path):
    assert main(["eval", "--run", str(tmp_path / "ghost"),
                 "--tasks", str(task_file)]) == 3


# ---------------------------------------------------------------------------
# baseline


def test_baseline_writes_blank_bank_columns(task_file, tmp_path):
    rc = main(["baseline", "--tasks", str(task_file), "--method", "fp",
               "--seed", "0", "--eval-steps", "20", "--out", str(tmp_path)])
    assert rc == 0
    run_dir = tmp_path / "fp" / "seed0"
    header, rows = read_csv(run_dir / "report.csv")
    assert header == EvalResult.REPORT_HEADER
    (method, seed, n, thr, rho, w, xi, trained), = rows
    assert (method, n, thr, w, xi, trained) == ("fp", "", "", "", "", "0")
    _, per_task = read_csv(run_dir / "per_task.csv")
    assert len(per_task) == 4
    before = tree_bytes(run_dir)
    assert main(["baseline", "--tasks", str(task_file), "--method", "fp",
                 "--seed", "0", "--eval-steps", "20",
                 "--out", str(tmp_path)]) == 0
    assert tree_bytes(run_dir) == before


# ---------------------------------------------------------------------------
# report


def test_report_aggregates_runs(built_root, task_file, capsys):
    assert main(["baseline", "--tasks", str(task_file), "--method", "fp",
                 "--seed", "0", "--eval-steps", "30",
                 "--out", str(built_root)]) == 0
    assert main(["report", "--out", str(built_root), "--plots"]) == 0
    header, rows = read_csv(built_root / "report.csv")
    assert header == EvalResult.REPORT_HEADER
    assert [r[0] for r in rows] == ["bg", "fp"]
    sh, srows = read_csv(built_root / "summary.csv")
    assert sh[0] == "method" and len(srows) == 2
    by_method = {r[0]: r for r in srows}
    # single-seed mean reproduces the run's rho exactly
    _, (bg_row,) = read_csv(built_root / "bg_n8" / "seed0" / "report.csv")
    assert float(by_method["bg"][4]) == float(bg_row[4])
    assert by_method["fp"][7] == ""   # no xi for rule baselines
    # one curve group -> a single aggregated curves.csv
    lines = (built_root / "curves.csv").read_text().strip().split("\n")
    assert len(lines) == 3
    assert (built_root / "plots" / "rho_by_method.svg").exists()
    assert (built_root / "plots" / "curves.svg").exists()
    capsys.readouterr()


def test_report_rejects_mixed_schema(tmp_path, capsys):
    bad = tmp_path / "x" / "seed0"
    bad.mkdir(parents=True)
    (bad / "report.csv").write_text("method,rho\nfp,1.0\n")
    assert main(["report", "--runs", str(bad), "--out", str(tmp_path)]) == 2
    assert "mixed report schema" in capsys.readouterr().err


def test_report_missing_runs_exit_3(tmp_path):
    assert main(["report", "--runs", str(tmp_path / "ghost"),
                 "--out", str(tmp_path)]) == 3
    assert main(["report", "--out", str(tmp_path / "empty")]) == 3


# ---------------------------------------------------------------------------
# calibration helper and parser plumbing


def test_calibrate_thresholds_orders_labels(tiny_tasks):
    ts = calibrate_thresholds(Scorer(kind="binseg"), tiny_tasks, DESK_SIM, 30)
    assert isinstance(ts, ThresholdSet)
    assert ts.tight <= ts.default <= ts.loose
    for name in ("default", "loose", "tight"):
        assert np.isfinite(ts.pick(name))


def test_calibrate_needs_two_tasks(tiny_tasks):
    with pytest.raises(ValueError):
        calibrate_thresholds(Scorer(kind="binseg"), tiny_tasks[:1], DESK_SIM, 30)


def test_version_and_bad_usage(capsys):
    assert main(["--version"]) == 0
    assert main(["bogus-subcommand"]) == 2
    assert main([]) == 2
    capsys.readouterr()
