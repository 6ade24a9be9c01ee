import numpy as np
import pytest

from taskbank.bank import BANK_SCHEMA, MergeRecord, PolicyBank
from taskbank.policy import Experience, GaussianPolicy


def make_policy(pid, seed=0, n_exp=1):
    pol = GaussianPolicy(pid, 4, seed=seed)
    rng = np.random.default_rng(seed)
    pol.experiences = [
        Experience(pid, f"task{seed}{k}", seed, rng.uniform(0, 2, (20, 12)),
                   rng.normal(size=20))
        for k in range(n_exp)]
    return pol


def test_add_get_remove():
    bank = PolicyBank()
    bank.add(make_policy("a"), task_ids=["t1", "t2"])
    bank.add(make_policy("b"), task_ids=["t3"])
    assert len(bank) == 2
    assert bank.ids() == ["a", "b"]
    assert bank.group_of("a") == ["t1", "t2"]
    assert sorted(bank.all_task_ids()) == ["t1", "t2", "t3"]
    removed = bank.remove("a")
    assert removed.policy_id == "a"
    assert len(bank) == 1 and "a" not in bank.groups


def test_duplicate_id_rejected():
    bank = PolicyBank()
    bank.add(make_policy("a"))
    with pytest.raises(ValueError):
        bank.add(make_policy("a"))


def test_assign_appends():
    bank = PolicyBank()
    bank.add(make_policy("a"), task_ids=["t1"])
    bank.assign("a", "t9")
    assert bank.group_of("a") == ["t1", "t9"]
    # group_of returns a copy, not a live view
    bank.group_of("a").append("zz")
    assert bank.group_of("a") == ["t1", "t9"]


def test_new_policy_id_monotone():
    bank = PolicyBank()
    assert bank.new_policy_id() == "p0000"
    assert bank.new_policy_id() == "p0001"
    assert bank.new_policy_id(prefix="m") == "m0002"


def test_replace_pair_unions_groups():
    bank = PolicyBank()
    bank.add(make_policy("a", 1), task_ids=["t1", "t2"])
    bank.add(make_policy("b", 2), task_ids=["t2", "t3"])
    bank.add(make_policy("c", 3), task_ids=["t4"])
    student = make_policy("s", 4)
    bank.replace_pair("a", "b", student)
    assert set(bank.ids()) == {"s", "c"}
    assert bank.group_of("s") == ["t1", "t2", "t3"]  # order kept, dedup
    assert sorted(bank.all_task_ids()) == ["t1", "t2", "t3", "t4"]


def test_save_load_roundtrip(tmp_path):
    bank = PolicyBank()
    bank.add(make_policy("a", 1, n_exp=2), task_ids=["t1"])
    bank.add(make_policy("b", 2), task_ids=["t2", "t5"])
    bank.w_steps = 4000
    bank.iteration = 3
    bank.num_trained = 2
    bank.new_policy_id()
    bank.merge_records.append(MergeRecord(
        student_id="m1", parent_ids=("x", "y"), similarity=0.5,
        initial_loss=2.0, final_loss=0.1, epochs_run=10, iteration=2,
        inherited_task_ids=("t9",), n_experiences=3))
    bank.save(tmp_path)

    back = PolicyBank.load(tmp_path)
    assert back.ids() == bank.ids()
    assert back.w_steps == 4000 and back.iteration == 3
    assert back.num_trained == 2
    assert back._id_counter == bank._id_counter
    assert back.groups == bank.groups
    assert len(back.get("a").experiences) == 2
    for pid in bank.ids():
        old, new = bank.get(pid), back.get(pid)
        assert np.array_equal(old.pi_vector(), new.pi_vector())
        for e_old, e_new in zip(old.experiences, new.experiences):
            assert np.array_equal(e_old.states, e_new.states)
            assert e_old.task_id == e_new.task_id
    rec = back.merge_records[0]
    assert rec == bank.merge_records[0]


def test_save_is_deterministic(tmp_path):
    bank = PolicyBank()
    bank.add(make_policy("a", 1), task_ids=["t1"])
    d1, d2 = tmp_path / "one", tmp_path / "two"
    bank.save(d1)
    bank.save(d2)
    assert (d1 / "bank.json").read_bytes() == (d2 / "bank.json").read_bytes()


def test_save_prunes_stale_experiences(tmp_path):
    bank = PolicyBank()
    bank.add(make_policy("a", 1, n_exp=2), task_ids=["t1"])
    bank.save(tmp_path)
    bank.get("a").experiences = bank.get("a").experiences[:1]
    bank.save(tmp_path)
    back = PolicyBank.load(tmp_path)
    assert len(back.get("a").experiences) == 1
    assert len(list((tmp_path / "experiences").glob("*.csv"))) == 1


def test_load_rejects_bad_schema(tmp_path):
    bank = PolicyBank()
    bank.add(make_policy("a"), task_ids=[])
    bank.save(tmp_path)
    payload = (tmp_path / "bank.json").read_text().replace(
        f'"schema":{BANK_SCHEMA}', '"schema":99')
    (tmp_path / "bank.json").write_text(payload)
    with pytest.raises(ValueError):
        PolicyBank.load(tmp_path)
