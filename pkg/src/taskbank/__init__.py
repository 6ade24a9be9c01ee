"""taskbank: grouped policy banks for inter-frequency load balancing.

Modules
-------
netsim      sector simulator (tick kernel, KPIs, reward, control rules)
tasks       traffic task records and the archetype generator
nets        hand-written MLP forward/backward and Adam
policy      squashed-Gaussian policy, observation normalizer, experiences
ppo         clipped-surrogate PPO with GAE, deterministic evaluation
compat      compatibility scorers (binary segmentation, correlation, KPI floor)
distill     policy similarity, KL merging, bank capping
bank        the policy bank container
grouping    the iterative group-train-merge orchestrator
evaluation  rho / w / xi metrics and the fixed / adaptive-rule baselines
cli         taskbank command line
"""

__version__ = "0.1.0"

_LAZY = ("netsim", "tasks", "nets", "policy", "ppo", "compat", "distill",
         "bank", "grouping", "evaluation", "cli", "utils")


def __getattr__(name):
    # defer heavy imports (numba) until a submodule is actually touched
    if name in _LAZY:
        import importlib
        mod = importlib.import_module(f".{name}", __name__)
        globals()[name] = mod
        return mod
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
