"""Clipped-surrogate PPO with GAE on the sector simulator.

Losses are pure functions of a flat parameter vector so the analytic
gradients can be finite-difference checked. Ratios and log-probs live in
pre-squash space (see policy module). Observations pass through a running
normalizer updated during collection and frozen when training ends.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nets
from .netsim import ActionParams, SectorSim, SimConfig
from .policy import Experience, GaussianPolicy, LOG_STD_MIN, LOG_STD_MAX
from .tasks import TrafficTask
from .utils import child_seed

_LOG2PI = np.log(2.0 * np.pi)


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite loss or parameter shows up mid-training."""

    def __init__(self, message: str, update_index: int):
        super().__init__(f"{message} (update {update_index})")
        self.update_index = update_index


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    learning_rate: float = 3e-4
    epochs_per_update: int = 10
    minibatch_size: int = 64
    # 2000 instead of the usual 2048: must divide both the full 200k budget
    # and the 20k desk budget
    steps_per_update: int = 2000
    total_env_steps: int = 200_000
    entropy_coef: float = 0.0
    log_std_init: float = -0.5
    final_eval_steps: int = 240

    def validate(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.clip_epsilon <= 0:
            raise ValueError("clip_epsilon must be > 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if min(self.epochs_per_update, self.minibatch_size,
               self.steps_per_update, self.total_env_steps) <= 0:
            raise ValueError("epoch/batch/step counts must be positive")
        if self.total_env_steps % self.steps_per_update != 0:
            raise ValueError("total_env_steps must be divisible by steps_per_update")
        if self.minibatch_size > self.steps_per_update:
            raise ValueError("minibatch_size cannot exceed steps_per_update")


# ---------------------------------------------------------------------------
# GAE


def gae(rewards, values, next_values, boundaries, gamma: float, lam: float):
    """Truncation-aware generalized advantage estimation.

    boundaries[t] marks that the episode was cut after step t: the recursion
    restarts there while delta_t still bootstraps from next_values[t]
    (= V of the state observed after the step, pre-reset).
    Returns (advantages, returns) with returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    next_values = np.asarray(next_values, dtype=np.float64)
    boundaries = np.asarray(boundaries, dtype=bool)
    T = rewards.shape[0]
    adv = np.zeros(T)
    acc = 0.0
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * next_values[t] - values[t]
        acc = delta + gamma * lam * (0.0 if boundaries[t] else acc)
        adv[t] = acc
    return adv, adv + values


# ---------------------------------------------------------------------------
# losses (flat-vector in, (loss, flat grad) out)


def _unpack_pi(flat, template_pi, act_dim):
    arrs = nets.unflatten_like(flat, template_pi + [np.zeros(act_dim)])
    return arrs[:-1], arrs[-1]


def policy_loss_and_grad(flat, template_pi, act_dim, obs, u, logp_old, adv,
                         clip_epsilon: float, entropy_coef: float = 0.0):
    """Clipped surrogate -E[min(r A, clip(r) A)] - c_H * entropy."""
    pi, log_std = _unpack_pi(flat, template_pi, act_dim)
    B = obs.shape[0]
    mu, cache = nets.mlp_forward(pi, obs)
    std = np.exp(log_std)
    z = (u - mu) / std
    logp = -0.5 * np.sum(z * z, axis=1) - np.sum(log_std) - 0.5 * act_dim * _LOG2PI
    ratio = np.exp(logp - logp_old)
    t1 = ratio * adv
    t2 = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * adv
    entropy = np.sum(log_std) + 0.5 * act_dim * (1.0 + _LOG2PI)
    loss = -np.mean(np.minimum(t1, t2)) - entropy_coef * entropy

    # the min() picks the unclipped branch exactly when t1 <= t2; only that
    # branch carries gradient (the clipped branch is flat in the params
    # whenever it is the smaller one)
    active = (t1 <= t2).astype(np.float64)
    dlogp = -(ratio * adv * active) / B            # (B,)
    dmu = dlogp[:, None] * (u - mu) / (std * std)  # d logp / d mu
    dlogstd = np.sum(dlogp[:, None] * (z * z - 1.0), axis=0)
    dlogstd -= entropy_coef
    grads, _ = nets.mlp_backward(pi, cache, dmu)
    return loss, nets.flatten(grads + [dlogstd])


def value_loss_and_grad(flat, template_vf, obs, returns):
    """0.5 * mean squared error of the value head."""
    vf = nets.unflatten_like(flat, template_vf)
    v, cache = nets.mlp_forward(vf, obs)
    v = v[:, 0]
    err = v - returns
    loss = 0.5 * np.mean(err * err)
    dv = (err / err.shape[0])[:, None]
    grads, _ = nets.mlp_backward(vf, cache, dv)
    return loss, nets.flatten(grads)


def policy_gradient_check(policy: GaussianPolicy, batch: dict | None = None,
                          seed: int = 0, eps: float = 1e-5) -> float:
    """Finite-difference check of both loss gradients at a generic point.

    Returns the max relative error; synthesizes a small batch when none is
    given (perturbed logp_old so both clip branches appear).
    """
    if batch is None:
        rng = np.random.default_rng(child_seed("gradcheck", seed))
        B = 8
        obs = rng.normal(0.0, 1.0, (B, policy.obs_dim))
        mu = policy.mean_u(obs)
        u = mu + np.exp(policy.log_std) * rng.standard_normal(mu.shape)
        logp_old = policy.log_prob(obs, u) + rng.normal(0.0, 0.3, B)
        adv = rng.normal(0.0, 1.0, B)
        ret = rng.normal(0.0, 1.0, B)
        batch = {"obs": obs, "u": u, "logp_old": logp_old, "adv": adv,
                 "returns": ret}

    flat_pi = policy.pi_vector()
    _, g_pi = policy_loss_and_grad(flat_pi, policy.pi, policy.act_dim,
                                   batch["obs"], batch["u"],
                                   batch["logp_old"], batch["adv"], 0.2)
    fd_pi = nets.finite_difference_grad(
        lambda v: policy_loss_and_grad(v, policy.pi, policy.act_dim,
                                       batch["obs"], batch["u"],
                                       batch["logp_old"], batch["adv"], 0.2)[0],
        flat_pi, eps)
    err_pi = nets.relative_error(g_pi, fd_pi)

    flat_vf = policy.vf_vector()
    _, g_vf = value_loss_and_grad(flat_vf, policy.vf, batch["obs"],
                                  batch["returns"])
    fd_vf = nets.finite_difference_grad(
        lambda v: value_loss_and_grad(v, policy.vf, batch["obs"],
                                      batch["returns"])[0],
        flat_vf, eps)
    err_vf = nets.relative_error(g_vf, fd_vf)
    return max(err_pi, err_vf)


# ---------------------------------------------------------------------------
# training


def train_policy(task: TrafficTask, cfg: PpoConfig = PpoConfig(), seed: int = 0,
                 sim_cfg: SimConfig = SimConfig(), policy_id: str | None = None,
                 ) -> tuple[GaussianPolicy, int]:
    """Train a fresh policy on one task; returns (policy, env steps used).

    Fully deterministic in (task, cfg, seed, sim_cfg). Episodes last
    sim_cfg.episode_steps control steps; each reset reseeds the sim from the
    episode counter.
    """
    cfg.validate()
    policy = GaussianPolicy(policy_id or f"train-{task.task_id}-{seed}",
                            sim_cfg.n_cells, log_std_init=cfg.log_std_init,
                            seed=child_seed("init", seed))
    noise_rng = np.random.default_rng(child_seed("noise", seed))
    shuffle_rng = np.random.default_rng(child_seed("shuffle", seed))

    episode = 0
    sim = SectorSim(sim_cfg, task, seed=child_seed("env", seed, episode))
    obs_raw = sim.reset().to_vector()
    ep_len = 0

    n_updates = cfg.total_env_steps // cfg.steps_per_update
    S = cfg.steps_per_update
    pi_adam = nets.Adam(policy.pi_vector().size, lr=cfg.learning_rate)
    vf_adam = nets.Adam(policy.vf_vector().size, lr=cfg.learning_rate)
    env_steps = 0
    last_losses = (np.nan, np.nan)

    for upd in range(n_updates):
        obs = np.empty((S, policy.obs_dim))
        next_obs = np.empty((S, policy.obs_dim))
        us = np.empty((S, policy.act_dim))
        logps = np.empty(S)
        rews = np.empty(S)
        bounds_flags = np.zeros(S, dtype=bool)

        for t in range(S):
            policy.obs_norm.update(obs_raw)
            o = policy.obs_norm.normalize(obs_raw)
            mu = policy.mean_u(o[None, :])[0]
            std = np.exp(policy.log_std)
            u = mu + std * noise_rng.standard_normal(policy.act_dim)
            z = (u - mu) / std
            logp = (-0.5 * np.sum(z * z) - np.sum(policy.log_std)
                    - 0.5 * policy.act_dim * _LOG2PI)
            action = policy.squash(u)
            res = sim.step(ActionParams.from_vector(action, sim_cfg.n_cells))
            env_steps += 1
            ep_len += 1

            obs[t] = o
            us[t] = u
            logps[t] = logp
            rews[t] = res.reward
            nxt = res.state.to_vector()
            next_obs[t] = policy.obs_norm.normalize(nxt)
            if ep_len >= sim_cfg.episode_steps:
                bounds_flags[t] = True
                episode += 1
                sim = SectorSim(sim_cfg, task, seed=child_seed("env", seed, episode))
                obs_raw = sim.reset().to_vector()
                ep_len = 0
            else:
                obs_raw = nxt

        values = policy.value(obs)
        next_values = policy.value(next_obs)
        adv, rets = gae(rews, values, next_values, bounds_flags,
                        cfg.gamma, cfg.gae_lambda)

        flat_pi = policy.pi_vector()
        flat_vf = policy.vf_vector()
        for _ in range(cfg.epochs_per_update):
            perm = shuffle_rng.permutation(S)
            for start in range(0, S, cfg.minibatch_size):
                idx = perm[start:start + cfg.minibatch_size]
                a_mb = adv[idx]
                a_mb = (a_mb - a_mb.mean()) / (a_mb.std() + 1e-8)
                pl, g_pi = policy_loss_and_grad(
                    flat_pi, policy.pi, policy.act_dim, obs[idx], us[idx],
                    logps[idx], a_mb, cfg.clip_epsilon, cfg.entropy_coef)
                vl, g_vf = value_loss_and_grad(flat_vf, policy.vf, obs[idx],
                                               rets[idx])
                if not (np.isfinite(pl) and np.isfinite(vl)):
                    raise TrainingDiverged(
                        f"non-finite loss (policy={pl}, value={vl})", upd)
                flat_pi = pi_adam.step(flat_pi, g_pi)
                # keep log_std inside its box after every step
                flat_pi[-policy.act_dim:] = np.clip(flat_pi[-policy.act_dim:],
                                                    LOG_STD_MIN, LOG_STD_MAX)
                flat_vf = vf_adam.step(flat_vf, g_vf)
                last_losses = (pl, vl)
            policy.set_pi_vector(flat_pi)
            policy.set_vf_vector(flat_vf)
        if not (np.all(np.isfinite(flat_pi)) and np.all(np.isfinite(flat_vf))):
            raise TrainingDiverged("non-finite parameters", upd)

    policy.obs_norm.frozen = True
    policy.trained_task_id = task.task_id
    policy.lineage_task_ids = (task.task_id,)
    _, final_reward = evaluate_policy(policy, task, cfg.final_eval_steps,
                                      seed=child_seed("final-eval", seed),
                                      sim_cfg=sim_cfg)
    policy.metrics = {
        "train_seed": seed,
        "env_steps": env_steps,
        "updates": n_updates,
        "final_eval_steps": cfg.final_eval_steps,
        "final_eval_reward": final_reward,
        "last_policy_loss": float(last_losses[0]),
        "last_value_loss": float(last_losses[1]),
    }
    return policy, env_steps


def evaluate_policy(policy: GaussianPolicy, task: TrafficTask, eval_steps: int,
                    seed: int = 0, sim_cfg: SimConfig = SimConfig(),
                    ) -> tuple[Experience, float]:
    """Deterministic rollout; returns (Experience, cumulative reward).

    One continuous run of eval_steps control steps (the sim is open-ended;
    episode_steps only matters for training truncation).
    """
    if eval_steps <= 0:
        raise ValueError("eval_steps must be positive")
    sim = SectorSim(sim_cfg, task, seed=child_seed("eval", seed))
    sim.reset()
    state = np.zeros(policy.obs_dim)
    states = np.empty((eval_steps, policy.obs_dim))
    rewards = np.empty(eval_steps)
    for t in range(eval_steps):
        action = policy.act_batch(state, deterministic=True)[0]
        res = sim.step(ActionParams.from_vector(action, sim_cfg.n_cells))
        state = res.state.to_vector()
        states[t] = state
        rewards[t] = res.reward
    exp = Experience(policy_id=policy.policy_id, task_id=task.task_id,
                     seed=seed, states=states, rewards=rewards)
    return exp, float(np.sum(rewards))
