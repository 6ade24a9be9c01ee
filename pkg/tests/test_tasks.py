import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from taskbank.tasks import (CellTraffic, TrafficTask, generate_tasks,
                            load_tasks, save_tasks)
from tests.conftest import make_task


def test_rates_formula():
    # rate(t) = base * (1 + amp * sin(2*pi*(t + phase)/period)), floor 0
    task = make_task(base_rates=(2.0,), amplitude=0.5, period=100.0)
    r = task.rates(np.array([25.0, 75.0]))  # sin = +1, then -1
    assert math.isclose(r[0, 0], 2.0 * 1.5, rel_tol=1e-12)
    assert math.isclose(r[1, 0], 2.0 * 0.5, rel_tol=1e-12)


def test_rates_phase_shift():
    cells = (CellTraffic(base_rate=1.0, amplitude=1.0, phase=25.0, period=100.0),)
    task = TrafficTask(task_id="p", cells=cells, mean_file_size_mb=1.0,
                       idle_dwell_mean_s=1.0, p_depart=0.5, seed=0)
    assert math.isclose(task.rates(np.array([0.0]))[0, 0], 2.0, rel_tol=1e-12)


def test_rates_never_negative():
    task = make_task(base_rates=(1.0,), amplitude=1.0, period=10.0)
    ts = np.linspace(0, 20, 101)
    assert np.all(task.rates(ts) >= 0.0)


def test_validate_rejects_bad_fields():
    with pytest.raises(ValueError):
        make_task(p_depart=0.0).validate()
    with pytest.raises(ValueError):
        make_task(amplitude=1.5).validate()
    with pytest.raises(ValueError):
        make_task(file_mb=-1.0).validate()
    with pytest.raises(ValueError):
        make_task(seed=-1).validate()


def test_save_load_roundtrip(tmp_path, tiny_tasks):
    path = tmp_path / "tasks.json"
    save_tasks(tiny_tasks, path)
    back = load_tasks(path)
    assert back == tiny_tasks


def test_generate_deterministic(tmp_path):
    a = generate_tasks(count=8, n_archetypes=4, seed=3)
    b = generate_tasks(count=8, n_archetypes=4, seed=3)
    assert a == b
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_tasks(a, p1)
    save_tasks(b, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_generate_seed_changes_tasks():
    a = generate_tasks(count=4, n_archetypes=2, seed=0)
    b = generate_tasks(count=4, n_archetypes=2, seed=1)
    assert a != b


def test_round_robin_archetypes():
    tasks = generate_tasks(count=32, n_archetypes=8, seed=7)
    assert len(tasks) == 32
    counts = {}
    for i, t in enumerate(tasks):
        assert t.archetype == f"arch{i % 8:02d}"
        counts[t.archetype] = counts.get(t.archetype, 0) + 1
    assert counts == {f"arch{a:02d}": 4 for a in range(8)}


def test_zero_jitter_archetype_twins():
    tasks = generate_tasks(count=8, n_archetypes=4, seed=0, jitter=0.0)
    for i in range(4):
        a, b = tasks[i], tasks[i + 4]
        assert a.cells == b.cells
        assert a.mean_file_size_mb == b.mean_file_size_mb
        assert a.idle_dwell_mean_s == b.idle_dwell_mean_s
        assert a.p_depart == b.p_depart
        assert a.task_id != b.task_id
        assert a.seed != b.seed


def test_single_archetype_zero_jitter_all_identical():
    tasks = generate_tasks(count=5, n_archetypes=1, seed=2, jitter=0.0)
    first = tasks[0]
    for t in tasks[1:]:
        assert t.cells == first.cells
        assert t.mean_file_size_mb == first.mean_file_size_mb


def test_jitter_separates_within_archetype():
    tasks = generate_tasks(count=8, n_archetypes=4, seed=0, jitter=0.1)
    a, b = tasks[0], tasks[4]
    assert a.archetype == b.archetype
    assert a.cells != b.cells


def test_task_ids_unique_and_validated():
    tasks = generate_tasks(count=16, n_archetypes=8, seed=0)
    ids = [t.task_id for t in tasks]
    assert len(set(ids)) == 16
    for t in tasks:
        t.validate()


@settings(max_examples=20, deadline=None)
@given(count=st.integers(1, 12), n_arch=st.integers(1, 6),
       seed=st.integers(0, 5))
def test_generate_counts_property(count, n_arch, seed):
    tasks = generate_tasks(count=count, n_archetypes=n_arch, seed=seed)
    assert len(tasks) == count
    for i, t in enumerate(tasks):
        assert t.archetype == f"arch{i % n_arch:02d}"
        t.validate()
