"""Squashed-Gaussian MLP policy with a separate value head.

The policy net outputs a pre-squash mean; a state-independent log-std vector
(clamped to [-5, 2]) completes a diagonal Gaussian in pre-squash space.
Actions map to bounds through an affine tanh squash, so log-probs, ratios
and KL are all computed pre-squash (the squash is a fixed bijection shared
by every policy on the same action space; no Jacobian terms are needed for
ratios between them).

Experiences (evaluation rollouts) are the raw state sequences compatibility
scorers consume; they serialize to csv + json sidecar.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nets
from .netsim import ActionParams, StateVector, action_bounds, action_dim
from .utils import child_seed, write_csv, read_csv, fmt_float

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
EXPERIENCE_SCHEMA = 1
POLICY_SCHEMA = 1


class ObsNorm:
    """Running mean/variance normalizer (Welford over batches)."""

    def __init__(self, dim: int):
        self.dim = dim
        self.count = 0.0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)
        self.frozen = False

    def update(self, batch: np.ndarray) -> None:
        if self.frozen:
            return
        batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        for x in batch:
            self.count += 1.0
            delta = x - self.mean
            self.mean = self.mean + delta / self.count
            self.m2 = self.m2 + delta * (x - self.mean)

    @property
    def var(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        return self.m2 / self.count

    def normalize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return (x - self.mean) / np.sqrt(self.var + 1e-8)

    def to_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean.tolist(),
                "m2": self.m2.tolist(), "frozen": self.frozen}

    @classmethod
    def from_dict(cls, d: dict) -> "ObsNorm":
        o = cls(len(d["mean"]))
        o.count = float(d["count"])
        o.mean = np.asarray(d["mean"], dtype=np.float64)
        o.m2 = np.asarray(d["m2"], dtype=np.float64)
        o.frozen = bool(d["frozen"])
        return o


@dataclass
class Experience:
    """One evaluation rollout: the per-step raw state sequence."""

    policy_id: str
    task_id: str
    seed: int
    states: np.ndarray   # (T, state_dim)
    rewards: np.ndarray  # (T,)

    @property
    def cumulative_reward(self) -> float:
        return float(np.sum(self.rewards))

    def __len__(self) -> int:
        return self.states.shape[0]

    def save(self, csv_path) -> None:
        csv_path = Path(csv_path)
        dims = self.states.shape[1]
        header = ["t"] + [f"dim_{d}" for d in range(dims)]
        rows = [[t] + [fmt_float(v) for v in self.states[t]]
                for t in range(self.states.shape[0])]
        write_csv(csv_path, header, rows)
        sidecar = {
            "schema": EXPERIENCE_SCHEMA,
            "policy_id": self.policy_id,
            "task_id": self.task_id,
            "seed": self.seed,
            "eval_steps": int(self.states.shape[0]),
            "state_dim": int(dims),
            "cumulative_reward": self.cumulative_reward,
            "rewards": [float(r) for r in self.rewards],
        }
        csv_path.with_suffix(".json").write_text(
            json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, csv_path) -> "Experience":
        csv_path = Path(csv_path)
        header, rows = read_csv(csv_path)
        if header[0] != "t" or not header[1].startswith("dim_"):
            raise ValueError(f"not an experience csv: {csv_path}")
        states = np.array([[float(v) for v in row[1:]] for row in rows])
        side = json.loads(csv_path.with_suffix(".json").read_text())
        if side.get("schema") != EXPERIENCE_SCHEMA:
            raise ValueError(f"unsupported experience schema: {side.get('schema')!r}")
        return cls(policy_id=side["policy_id"], task_id=side["task_id"],
                   seed=side["seed"], states=states,
                   rewards=np.asarray(side["rewards"], dtype=np.float64))


class GaussianPolicy:
    def __init__(self, policy_id: str, n_cells: int, hidden=(64, 64),
                 log_std_init: float = -0.5, seed: int = 0):
        self.policy_id = policy_id
        self.n_cells = n_cells
        self.hidden = tuple(hidden)
        self.obs_dim = 3 * n_cells
        self.act_dim = action_dim(n_cells)
        lo, hi = action_bounds(n_cells)
        self.lo, self.hi = lo, hi
        rng = np.random.default_rng(np.random.SeedSequence(child_seed("policy-init", seed)))
        # small-gain mean head starts near the midpoint action
        self.pi = nets.init_mlp(rng, (self.obs_dim, *hidden, self.act_dim), out_gain=0.01)
        self.log_std = np.full(self.act_dim, float(log_std_init))
        self.vf = nets.init_mlp(rng, (self.obs_dim, *hidden, 1), out_gain=1.0)
        self.obs_norm = ObsNorm(self.obs_dim)
        self.trained_task_id: str | None = None
        self.parent_ids: tuple = ()
        self.lineage_task_ids: tuple = ()
        self.metrics: dict = {}
        self.experiences: list[Experience] = []

    # -- forward -------------------------------------------------------------

    def mean_u(self, norm_obs: np.ndarray) -> np.ndarray:
        out, _ = nets.mlp_forward(self.pi, norm_obs)
        return out

    def value(self, norm_obs: np.ndarray) -> np.ndarray:
        out, _ = nets.mlp_forward(self.vf, norm_obs)
        return out[:, 0]

    def squash(self, u: np.ndarray) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * (np.tanh(u) + 1.0) / 2.0

    def log_prob(self, norm_obs: np.ndarray, u: np.ndarray) -> np.ndarray:
        mu = self.mean_u(norm_obs)
        std = np.exp(self.log_std)
        z = (u - mu) / std
        return -0.5 * np.sum(z * z, axis=1) - np.sum(self.log_std) \
            - 0.5 * u.shape[1] * np.log(2.0 * np.pi)

    def act_batch(self, states: np.ndarray, deterministic: bool = True,
                  rng: np.random.Generator | None = None) -> np.ndarray:
        """Raw states in, squashed (in-bounds) action vectors out."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        mu = self.mean_u(self.obs_norm.normalize(states))
        if deterministic:
            u = mu
        else:
            if rng is None:
                raise ValueError("stochastic act needs an rng")
            u = mu + np.exp(self.log_std) * rng.standard_normal(mu.shape)
        return self.squash(u)

    def act(self, state, deterministic: bool = True,
            rng: np.random.Generator | None = None) -> ActionParams:
        if isinstance(state, StateVector):
            state = state.to_vector()
        vec = self.act_batch(state, deterministic=deterministic, rng=rng)[0]
        return ActionParams.from_vector(vec, self.n_cells)

    # -- serialization ---------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "schema": POLICY_SCHEMA,
            "policy_id": self.policy_id,
            "n_cells": self.n_cells,
            "hidden": list(self.hidden),
            "pi": [a.tolist() for a in self.pi],
            "log_std": self.log_std.tolist(),
            "vf": [a.tolist() for a in self.vf],
            "obs_norm": self.obs_norm.to_dict(),
            "trained_task_id": self.trained_task_id,
            "parent_ids": list(self.parent_ids),
            "lineage_task_ids": list(self.lineage_task_ids),
            "metrics": self.metrics,
        }

    @classmethod
    def from_json(cls, d: dict) -> "GaussianPolicy":
        if d.get("schema") != POLICY_SCHEMA:
            raise ValueError(f"unsupported policy schema: {d.get('schema')!r}")
        p = cls(policy_id=d["policy_id"], n_cells=d["n_cells"],
                hidden=tuple(d["hidden"]))
        p.pi = [np.asarray(a, dtype=np.float64) for a in d["pi"]]
        p.log_std = np.asarray(d["log_std"], dtype=np.float64)
        p.vf = [np.asarray(a, dtype=np.float64) for a in d["vf"]]
        p.obs_norm = ObsNorm.from_dict(d["obs_norm"])
        p.trained_task_id = d["trained_task_id"]
        p.parent_ids = tuple(d["parent_ids"])
        p.lineage_task_ids = tuple(d["lineage_task_ids"])
        p.metrics = d["metrics"]
        return p

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "GaussianPolicy":
        return cls.from_json(json.loads(Path(path).read_text()))

    # -- parameter vector plumbing (training works on flat vectors) -----------

    def pi_vector(self) -> np.ndarray:
        return nets.flatten(self.pi + [self.log_std])

    def set_pi_vector(self, vec: np.ndarray) -> None:
        arrs = nets.unflatten_like(vec, self.pi + [self.log_std])
        self.pi = arrs[:-1]
        self.log_std = np.clip(arrs[-1], LOG_STD_MIN, LOG_STD_MAX)

    def vf_vector(self) -> np.ndarray:
        return nets.flatten(self.vf)

    def set_vf_vector(self, vec: np.ndarray) -> None:
        self.vf = nets.unflatten_like(vec, self.vf)
