"""The policy bank: policies, their task groups, and the step ledger.

A bank serializes to a checkpoint directory: bank.json holds weights,
groups and merge records; experiences/ holds each policy's training
experiences as csv+sidecar pairs (see policy.Experience).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .policy import Experience, GaussianPolicy

BANK_SCHEMA = 1


@dataclass
class MergeRecord:
    student_id: str
    parent_ids: tuple
    similarity: float          # delta-bar between the parents at merge time
    initial_loss: float        # distillation objective before optimizing
    final_loss: float
    epochs_run: int
    iteration: int
    inherited_task_ids: tuple  # the student's group after the merge
    n_experiences: int

    def to_json(self) -> dict:
        return {"student_id": self.student_id,
                "parent_ids": list(self.parent_ids),
                "similarity": self.similarity,
                "initial_loss": self.initial_loss,
                "final_loss": self.final_loss,
                "epochs_run": self.epochs_run,
                "iteration": self.iteration,
                "inherited_task_ids": list(self.inherited_task_ids),
                "n_experiences": self.n_experiences}

    @classmethod
    def from_json(cls, d: dict) -> "MergeRecord":
        return cls(student_id=d["student_id"],
                   parent_ids=tuple(d["parent_ids"]),
                   similarity=d["similarity"],
                   initial_loss=d["initial_loss"],
                   final_loss=d["final_loss"],
                   epochs_run=d["epochs_run"],
                   iteration=d["iteration"],
                   inherited_task_ids=tuple(d["inherited_task_ids"]),
                   n_experiences=d["n_experiences"])


class PolicyBank:
    def __init__(self):
        self.policies: dict[str, GaussianPolicy] = {}
        self.groups: dict[str, list[str]] = {}
        self.w_steps = 0
        self.iteration = 0
        self.merge_records: list[MergeRecord] = []
        self.num_trained = 0
        self._id_counter = 0

    def __len__(self) -> int:
        return len(self.policies)

    def ids(self) -> list[str]:
        return list(self.policies.keys())

    def get(self, policy_id: str) -> GaussianPolicy:
        return self.policies[policy_id]

    def new_policy_id(self, prefix: str = "p") -> str:
        pid = f"{prefix}{self._id_counter:04d}"
        self._id_counter += 1
        return pid

    def add(self, policy: GaussianPolicy, task_ids=()) -> None:
        if policy.policy_id in self.policies:
            raise ValueError(f"duplicate policy id: {policy.policy_id}")
        self.policies[policy.policy_id] = policy
        self.groups[policy.policy_id] = list(task_ids)

    def remove(self, policy_id: str) -> GaussianPolicy:
        self.groups.pop(policy_id)
        return self.policies.pop(policy_id)

    def assign(self, policy_id: str, task_id: str) -> None:
        self.groups[policy_id].append(task_id)

    def group_of(self, policy_id: str) -> list[str]:
        return list(self.groups[policy_id])

    def all_task_ids(self) -> list[str]:
        out: list[str] = []
        for pid in self.policies:
            out.extend(self.groups[pid])
        return out

    def replace_pair(self, id_i: str, id_j: str, student: GaussianPolicy) -> None:
        """Swap two parents for their distilled student; the student takes
        over the union of the parents' task groups (order preserved)."""
        gi = self.groups[id_i]
        gj = self.groups[id_j]
        merged = list(dict.fromkeys(gi + gj))
        self.remove(id_i)
        self.remove(id_j)
        self.add(student, merged)

    # -- persistence -----------------------------------------------------------

    def save(self, ckpt_dir) -> None:
        ckpt_dir = Path(ckpt_dir)
        exp_dir = ckpt_dir / "experiences"
        exp_dir.mkdir(parents=True, exist_ok=True)
        for old in exp_dir.glob("*.csv"):
            old.unlink()
        for old in exp_dir.glob("*.json"):
            old.unlink()
        exp_index: dict[str, list[str]] = {}
        for pid, pol in self.policies.items():
            names = []
            for k, exp in enumerate(pol.experiences):
                stem = f"{pid}_{k:02d}"
                exp.save(exp_dir / f"{stem}.csv")
                names.append(stem)
            exp_index[pid] = names
        payload = {
            "schema": BANK_SCHEMA,
            "iteration": self.iteration,
            "w_steps": self.w_steps,
            "num_trained": self.num_trained,
            "id_counter": self._id_counter,
            "policies": [pol.to_json() for pol in self.policies.values()],
            "groups": {pid: list(g) for pid, g in self.groups.items()},
            "experiences": exp_index,
            "merge_records": [r.to_json() for r in self.merge_records],
        }
        (ckpt_dir / "bank.json").write_text(
            json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, ckpt_dir) -> "PolicyBank":
        ckpt_dir = Path(ckpt_dir)
        payload = json.loads((ckpt_dir / "bank.json").read_text())
        if payload.get("schema") != BANK_SCHEMA:
            raise ValueError(f"unsupported bank schema: {payload.get('schema')!r}")
        bank = cls()
        bank.iteration = payload["iteration"]
        bank.w_steps = payload["w_steps"]
        bank.num_trained = payload["num_trained"]
        bank._id_counter = payload["id_counter"]
        for pol_d in payload["policies"]:
            pol = GaussianPolicy.from_json(pol_d)
            pid = pol.policy_id
            pol.experiences = [
                Experience.load(ckpt_dir / "experiences" / f"{stem}.csv")
                for stem in payload["experiences"][pid]]
            bank.policies[pid] = pol
            bank.groups[pid] = list(payload["groups"][pid])
        bank.merge_records = [MergeRecord.from_json(r)
                              for r in payload["merge_records"]]
        return bank
