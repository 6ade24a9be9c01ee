"""Policy similarity and KL distillation for merging bank policies.

Similarity delta(i, j) is the mean L2 gap between deterministic (squashed)
actions over a state set; the symmetrized delta-bar picks the merge pair.
Distillation minimizes the summed forward KL from each teacher to one fresh
student over the teachers' own experience states; distributions are the
pre-squash diagonal Gaussians, so the KL is closed-form. The optimizer is
full-batch projected gradient descent with a halving line search, which
makes the objective non-increasing at every accepted step by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .bank import MergeRecord, PolicyBank
from .policy import GaussianPolicy, LOG_STD_MIN, LOG_STD_MAX, ObsNorm
from .utils import child_seed


@dataclass(frozen=True)
class DistillConfig:
    epochs: int = 200
    lr: float = 1e-3
    max_halvings: int = 30
    seed: int = 0

    def validate(self) -> None:
        if self.epochs <= 0 or self.lr <= 0 or self.max_halvings <= 0:
            raise ValueError("epochs, lr and max_halvings must be positive")


# ---------------------------------------------------------------------------
# similarity


def policy_similarity(pol_a: GaussianPolicy, pol_b: GaussianPolicy,
                      states: np.ndarray) -> float:
    """Mean L2 distance between the two policies' deterministic actions."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if states.shape[0] == 0:
        raise ValueError("need at least one state")
    if pol_a.act_dim != pol_b.act_dim or pol_a.obs_dim != pol_b.obs_dim:
        raise ValueError("policies act on different spaces")
    aa = pol_a.act_batch(states, deterministic=True)
    ab = pol_b.act_batch(states, deterministic=True)
    return float(np.mean(np.linalg.norm(aa - ab, axis=1)))


def _exp_states(pol: GaussianPolicy) -> np.ndarray:
    if not pol.experiences:
        raise ValueError(f"policy {pol.policy_id} has no experiences")
    return np.vstack([e.states for e in pol.experiences])


def pair_similarity(pol_i: GaussianPolicy, pol_j: GaussianPolicy) -> float:
    """Symmetrized: 0.5 * (delta over S_j + delta over S_i)."""
    s_j = _exp_states(pol_j)
    s_i = _exp_states(pol_i)
    return 0.5 * (policy_similarity(pol_i, pol_j, s_j)
                  + policy_similarity(pol_j, pol_i, s_i))


def most_similar_pair(bank: PolicyBank) -> tuple[str, str, float]:
    """Unordered pair with minimal delta-bar; ties break lexicographically."""
    ids = sorted(bank.ids())
    if len(ids) < 2:
        raise ValueError("need at least two policies")
    best = None
    for a in range(len(ids)):
        for b in range(a + 1, len(ids)):
            d = pair_similarity(bank.get(ids[a]), bank.get(ids[b]))
            if best is None or d < best[2]:
                best = (ids[a], ids[b], d)
    return best


# ---------------------------------------------------------------------------
# KL objective


def kl_loss_and_grad(flat, template_pi, act_dim, norm_obs, mu_t, log_std_t):
    """Sum over rows of KL(teacher || student) for diagonal Gaussians.

    norm_obs are already normalized with the *student's* normalizer; mu_t and
    log_std_t are per-row teacher moments (computed with each teacher's own
    normalizer). Returns (J, flat gradient w.r.t. the student's pi vector).
    """
    arrs = nets.unflatten_like(flat, template_pi + [np.zeros(act_dim)])
    pi, log_std_s = arrs[:-1], arrs[-1]
    mu_s, cache = nets.mlp_forward(pi, norm_obs)
    var_s = np.exp(2.0 * log_std_s)[None, :]
    var_t = np.exp(2.0 * log_std_t)
    gap = mu_t - mu_s
    ratio = (var_t + gap * gap) / var_s
    kl = log_std_s[None, :] - log_std_t + 0.5 * ratio - 0.5
    J = float(np.sum(kl))
    dmu = -gap / var_s                      # d/dmu_s of 0.5*(mu_t-mu_s)^2/var_s
    dlogstd = np.sum(1.0 - ratio, axis=0)
    grads, _ = nets.mlp_backward(pi, cache, dmu)
    return J, nets.flatten(grads + [dlogstd])


def distill_gradient_check(pol: GaussianPolicy, seed: int = 0,
                           eps: float = 1e-5) -> float:
    """Finite-difference check of the KL gradient at a generic point."""
    rng = np.random.default_rng(child_seed("distill-gradcheck", seed))
    B = 8
    obs = rng.normal(0.0, 1.0, (B, pol.obs_dim))
    mu_t = rng.normal(0.0, 1.0, (B, pol.act_dim))
    log_std_t = rng.normal(-0.5, 0.3, (B, pol.act_dim))
    flat = pol.pi_vector()
    _, g = kl_loss_and_grad(flat, pol.pi, pol.act_dim, obs, mu_t, log_std_t)
    fd = nets.finite_difference_grad(
        lambda v: kl_loss_and_grad(v, pol.pi, pol.act_dim, obs, mu_t,
                                   log_std_t)[0], flat, eps)
    return nets.relative_error(g, fd)


# ---------------------------------------------------------------------------
# distillation


def _teacher_targets(pol: GaussianPolicy, states: np.ndarray):
    mu = pol.mean_u(pol.obs_norm.normalize(states))
    log_std = np.broadcast_to(pol.log_std, mu.shape).copy()
    return mu, log_std


def _project(flat: np.ndarray, act_dim: int) -> np.ndarray:
    out = flat.copy()
    out[-act_dim:] = np.clip(out[-act_dim:], LOG_STD_MIN, LOG_STD_MAX)
    return out


def distill_pair(pol_i: GaussianPolicy, pol_j: GaussianPolicy,
                 cfg: DistillConfig = DistillConfig(),
                 student_id: str = "student",
                 init_policy: GaussianPolicy | None = None,
                 ) -> tuple[GaussianPolicy, list[float]]:
    """Merge two teachers into one student; returns (student, J history).

    J history starts at the initial objective J0 and has one entry per
    accepted epoch; it is non-increasing by construction (line search only
    accepts non-increasing steps and stops early otherwise).

    The student is fresh-initialized (or starts from init_policy, keeping
    its normalizer, so identical teachers give J0 = 0). A fresh student's
    normalizer is fit to the union of the teachers' experience states and
    frozen. The value head is not distilled: the KL objective only
    constrains the action distribution, so the student keeps a fresh value
    net.
    """
    cfg.validate()
    s_i = _exp_states(pol_i)
    s_j = _exp_states(pol_j)
    union = np.vstack([s_i, s_j])

    if init_policy is not None:
        student = GaussianPolicy.from_json(init_policy.to_json())
        student.policy_id = student_id
    else:
        student = GaussianPolicy(student_id, pol_i.n_cells,
                                 hidden=pol_i.hidden,
                                 seed=child_seed("distill-init", cfg.seed, student_id))
        norm = ObsNorm(student.obs_dim)
        norm.update(union)
        norm.frozen = True
        student.obs_norm = norm

    mu_i, ls_i = _teacher_targets(pol_i, s_i)
    mu_j, ls_j = _teacher_targets(pol_j, s_j)
    mu_t = np.vstack([mu_i, mu_j])
    log_std_t = np.vstack([ls_i, ls_j])
    norm_obs = student.obs_norm.normalize(union)

    flat = _project(student.pi_vector(), student.act_dim)
    J, grad = kl_loss_and_grad(flat, student.pi, student.act_dim, norm_obs,
                               mu_t, log_std_t)
    history = [J]
    for _ in range(cfg.epochs):
        step = cfg.lr
        accepted = False
        for _ in range(cfg.max_halvings):
            cand = _project(flat - step * grad, student.act_dim)
            J_c, g_c = kl_loss_and_grad(cand, student.pi, student.act_dim,
                                        norm_obs, mu_t, log_std_t)
            if np.isfinite(J_c) and J_c <= J:
                flat, J, grad = cand, J_c, g_c
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break  # no non-increasing step found; converged/flat
        history.append(J)

    student.set_pi_vector(flat)
    student.trained_task_id = None
    student.parent_ids = (pol_i.policy_id, pol_j.policy_id)
    student.lineage_task_ids = tuple(dict.fromkeys(
        list(pol_i.lineage_task_ids) + list(pol_j.lineage_task_ids)))
    student.experiences = list(pol_i.experiences) + list(pol_j.experiences)
    student.metrics = {
        "distill_J0": history[0],
        "distill_J_final": history[-1],
        "distill_epochs_run": len(history) - 1,
        "parents": [pol_i.policy_id, pol_j.policy_id],
    }
    return student, history


def cap_bank(bank: PolicyBank, n: int,
             cfg: DistillConfig = DistillConfig()) -> list[MergeRecord]:
    """Merge most-similar pairs until the bank holds at most n policies.

    Each merge removes exactly one policy and adds zero interaction steps.
    Returns the merge records (also appended to bank.merge_records).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    records = []
    while len(bank) > n:
        id_i, id_j, delta = most_similar_pair(bank)
        student_id = bank.new_policy_id(prefix="m")
        student, history = distill_pair(bank.get(id_i), bank.get(id_j),
                                        cfg=cfg, student_id=student_id)
        bank.replace_pair(id_i, id_j, student)
        rec = MergeRecord(student_id=student_id, parent_ids=(id_i, id_j),
                          similarity=delta, initial_loss=history[0],
                          final_loss=history[-1],
                          epochs_run=len(history) - 1,
                          iteration=bank.iteration,
                          inherited_task_ids=tuple(bank.group_of(student_id)),
                          n_experiences=len(student.experiences))
        bank.merge_records.append(rec)
        records.append(rec)
    return records
