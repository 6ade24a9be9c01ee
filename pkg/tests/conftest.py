import numpy as np
import pytest

from taskbank.netsim import SimConfig
from taskbank.ppo import PpoConfig
from taskbank.tasks import CellTraffic, TrafficTask, generate_tasks

# Small budgets shared by the slower tests: 30-step episodes and 4k-step
# trainings keep single tests in seconds while exercising every code path.

DESK_SIM = SimConfig(episode_steps=30)
DESK_PPO = PpoConfig(total_env_steps=4000, steps_per_update=2000,
                     minibatch_size=64, final_eval_steps=30)
# single-update variant for tests that just need a non-degenerate policy
TINY_PPO = PpoConfig(total_env_steps=2000, steps_per_update=2000,
                     minibatch_size=64, final_eval_steps=30)


def make_task(task_id="t0", base_rates=(0.3, 0.1, 0.1, 0.1), seed=0,
              amplitude=0.3, period=3600.0, file_mb=4.0, dwell=30.0,
              p_depart=0.7):
    cells = tuple(CellTraffic(base_rate=r, amplitude=amplitude, phase=0.0,
                              period=period) for r in base_rates)
    return TrafficTask(task_id=task_id, cells=cells, mean_file_size_mb=file_mb,
                       idle_dwell_mean_s=dwell, p_depart=p_depart, seed=seed)


@pytest.fixture(scope="session")
def tiny_tasks():
    return generate_tasks(count=6, n_archetypes=3, seed=0)


@pytest.fixture(scope="session")
def zero_task():
    return make_task("zero", base_rates=(0.0, 0.0, 0.0, 0.0), amplitude=0.0)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)
