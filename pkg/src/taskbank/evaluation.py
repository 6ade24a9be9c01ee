"""Bank quality metrics and the rule-based baselines.

rho: mean cumulative reward over every (policy, task-in-its-group) pair.
w:   total interaction steps spent training (distillation adds none).
xi = rho / (w / 100000): reward per hundred-thousand interaction steps.

Baselines: "fp" rolls out one fixed parameter set everywhere; "ar" adapts
the handover offsets each step from the observed per-cell utilization gap.
Both reuse the same per-task evaluation seeds as bank evaluations, so rho
values are comparable across methods at the same seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netsim import ActionParams, SectorSim, SimConfig, ALPHA_MAX, ALPHA_MIN
from .policy import Experience
from .ppo import evaluate_policy
from .tasks import TrafficTask
from .utils import child_seed

W_UNIT = 100_000.0

FP_ALPHA_DB = 2.0
FP_BETA_DBM = -100.0
FP_LAMBDA_DBM = -96.0
AR_KAPPA = 6.0


@dataclass
class EvalResult:
    method: str
    seed: int
    n: int | None
    threshold: float | None
    rho: float
    w_steps: int | None
    xi: float | None
    num_trained: int
    per_task: list = field(default_factory=list)  # (policy_id, task_id, reward)

    REPORT_HEADER = ["method", "seed", "n", "threshold", "rho", "w_steps",
                     "xi", "num_trained"]

    def report_row(self) -> list:
        from .utils import fmt_float
        return [self.method, self.seed,
                "" if self.n is None else self.n,
                "" if self.threshold is None else fmt_float(self.threshold),
                fmt_float(self.rho),
                "" if self.w_steps is None else self.w_steps,
                "" if self.xi is None else fmt_float(self.xi),
                self.num_trained]


def compute_xi(rho: float, w_steps: int) -> float:
    if w_steps <= 0:
        raise ValueError("w_steps must be positive to compute xi")
    return rho / (w_steps / W_UNIT)


def compute_rho(bank, tasks_by_id: dict, eval_steps: int, seed_base: int,
                sim_cfg: SimConfig = SimConfig()) -> tuple[float, list]:
    """Mean cumulative reward of each policy on every task in its group.

    The eval seed depends only on (seed_base, task_id) so different banks
    and baselines see identical traffic realizations per task.
    """
    rows = []
    for pid in bank.ids():
        pol = bank.get(pid)
        for tid in bank.group_of(pid):
            if tid not in tasks_by_id:
                raise KeyError(f"bank references unknown task {tid}")
            _, cum = evaluate_policy(pol, tasks_by_id[tid], eval_steps,
                                     seed=child_seed("rho", seed_base, tid),
                                     sim_cfg=sim_cfg)
            rows.append((pid, tid, cum))
    if not rows:
        raise ValueError("bank has no (policy, task) pairs")
    return float(np.mean([r[2] for r in rows])), rows


# ---------------------------------------------------------------------------
# rule-based controllers


def fp_action(n_cells: int, alpha_db: float = FP_ALPHA_DB,
              beta_dbm: float = FP_BETA_DBM,
              lam_dbm: float = FP_LAMBDA_DBM) -> ActionParams:
    """The fixed parameter set: one alpha for every ordered pair, one beta
    and lambda for every cell."""
    alpha = np.full((n_cells, n_cells), alpha_db)
    np.fill_diagonal(alpha, 0.0)
    return ActionParams(alpha=alpha, beta=np.full(n_cells, beta_dbm),
                        lam=np.full(n_cells, lam_dbm))


def ar_action(util: np.ndarray, kappa: float = AR_KAPPA,
              beta_dbm: float = FP_BETA_DBM,
              lam_dbm: float = FP_LAMBDA_DBM) -> ActionParams:
    """Adaptive-rule offsets from the last observed utilization.

    alpha[i, j] = clip(kappa * (util_i - util_j), bounds); equal loads give
    zero offsets and a unit load gap saturates the clamp. Thresholds stay
    at the fixed-parameter values.
    """
    util = np.asarray(util, dtype=np.float64)
    n = util.shape[0]
    alpha = np.clip(kappa * (util[:, None] - util[None, :]), ALPHA_MIN, ALPHA_MAX)
    np.fill_diagonal(alpha, 0.0)
    return ActionParams(alpha=alpha, beta=np.full(n, beta_dbm),
                        lam=np.full(n, lam_dbm))


def rollout_controller(controller, task: TrafficTask, eval_steps: int,
                       seed: int, sim_cfg: SimConfig = SimConfig(),
                       policy_id: str = "rule") -> tuple[Experience, float]:
    """Roll a state->ActionParams function; same seeding as evaluate_policy."""
    if eval_steps <= 0:
        raise ValueError("eval_steps must be positive")
    sim = SectorSim(sim_cfg, task, seed=child_seed("eval", seed))
    sim.reset()
    n = sim_cfg.n_cells
    state = np.zeros(3 * n)
    states = np.empty((eval_steps, 3 * n))
    rewards = np.empty(eval_steps)
    for t in range(eval_steps):
        res = sim.step(controller(state))
        state = res.state.to_vector()
        states[t] = state
        rewards[t] = res.reward
    exp = Experience(policy_id=policy_id, task_id=task.task_id, seed=seed,
                     states=states, rewards=rewards)
    return exp, float(np.sum(rewards))


def baseline_rho(method: str, tasks, eval_steps: int, seed_base: int,
                 sim_cfg: SimConfig = SimConfig()) -> tuple[float, list]:
    """rho of a rule-based baseline over a task list ("fp" or "ar")."""
    n = sim_cfg.n_cells
    if method == "fp":
        fixed = fp_action(n)
        controller = lambda s: fixed
    elif method == "ar":
        controller = lambda s: ar_action(s[n:2 * n])
    else:
        raise ValueError(f"unknown baseline: {method!r}")
    rows = []
    for task in tasks:
        _, cum = rollout_controller(controller, task, eval_steps,
                                    seed=child_seed("rho", seed_base, task.task_id),
                                    sim_cfg=sim_cfg, policy_id=method)
        rows.append((method, task.task_id, cum))
    if not rows:
        raise ValueError("no tasks to evaluate")
    return float(np.mean([r[2] for r in rows])), rows
