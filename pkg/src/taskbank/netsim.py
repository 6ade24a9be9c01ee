"""Discrete-time simulator of one multi-carrier cellular sector.

Co-located cells on distinct carriers serve a disc of users. UEs cycle
idle -> active (file download) -> idle/depart. Load balancing actuates three
control surfaces re-evaluated every tick:

  handover   (active UEs): move i -> j iff RSRP_j > RSRP_i + alpha[i,j] + H
  reselection (idle UEs):  move i -> j iff RSRP_i < beta[i] and RSRP_j > lam[j]
                           and RSRP_j > RSRP_i

with the max-RSRP qualifying cell as target (ties -> lowest cell index).
Control steps last `ticks_per_step` ticks; per-step KPIs are computed from
per-cell mean throughput and fed to a scalar reward.

UEs do not move, so per-UE RSRP and spectral efficiency are fixed at spawn;
the tick loop is a numba kernel over struct-of-arrays state with all
randomness pre-drawn outside (see `_step_kernel`). Running the same kernel
uncompiled (`SectorSim(use_jit=False)`) is bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .tasks import TrafficTask
from .utils import child_seed

ALPHA_MIN, ALPHA_MAX = -6.0, 6.0
THRESH_MIN, THRESH_MAX = -110.0, -80.0

# pre-drawn lifecycle cycles per UE; index wraps past this (p ~ 0.3^16 of
# a UE surviving that long, unobservable at sim scales)
_POOL = 16


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SimConfig:
    n_cells: int = 4
    carrier_freqs_mhz: tuple = (800.0, 1800.0, 2100.0, 2600.0)
    bandwidths_mhz: tuple = (10.0, 15.0, 20.0, 20.0)
    tx_power_dbm: tuple = (70.0, 70.0, 70.0, 70.0)  # EIRP-ish, lands RSRP in the beta/lambda band
    pathloss_exponent: float = 3.5
    pathloss_const_db: float = 32.0
    shadow_sigma_db: float = 6.0
    noise_floor_dbm: float = -104.0
    interference_dbm: tuple = (-100.0, -100.0, -100.0, -100.0)
    cell_radius_m: tuple = (35.0, 500.0)
    hysteresis_db: float = 2.0
    tick_s: float = 1.0
    ticks_per_step: int = 60
    episode_steps: int = 240
    chi_mbps: float = 1.0
    phi: tuple = (0.25, 0.25, 0.25, 0.25)
    kpi_scale_mbps: float = 10.0  # nominal throughput scale dividing G_avg, G_min in the reward
    max_ues: int = 20000

    def validate(self) -> None:
        n = self.n_cells
        if n < 2:
            raise ValueError("need at least two cells")
        for name in ("carrier_freqs_mhz", "bandwidths_mhz", "tx_power_dbm",
                     "interference_dbm"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} must have length n_cells={n}")
        rmin, rmax = self.cell_radius_m
        if not 0.0 < rmin < rmax:
            raise ValueError("cell_radius_m must satisfy 0 < rmin < rmax")
        if min(self.bandwidths_mhz) <= 0 or min(self.carrier_freqs_mhz) <= 0:
            raise ValueError("bandwidths and carrier freqs must be > 0")
        if self.shadow_sigma_db < 0:
            raise ValueError("shadow_sigma_db must be >= 0")
        if self.tick_s <= 0 or self.ticks_per_step <= 0 or self.episode_steps <= 0:
            raise ValueError("tick/step/episode sizes must be positive")
        if len(self.phi) != 4:
            raise ValueError("phi must have four components")
        if self.kpi_scale_mbps <= 0 or self.chi_mbps < 0:
            raise ValueError("kpi_scale_mbps must be > 0 and chi_mbps >= 0")
        if self.max_ues <= 0:
            raise ValueError("max_ues must be > 0")

    @property
    def action_dim(self) -> int:
        return action_dim(self.n_cells)

    @property
    def state_dim(self) -> int:
        return 3 * self.n_cells


def action_dim(n_cells: int) -> int:
    # per-pair alpha offsets plus per-cell beta and lambda thresholds
    return n_cells * (n_cells - 1) + 2 * n_cells


def action_bounds(n_cells: int) -> tuple[np.ndarray, np.ndarray]:
    """(lo, hi) vectors in the ActionParams.to_vector layout."""
    n_pairs = n_cells * (n_cells - 1)
    lo = np.concatenate([np.full(n_pairs, ALPHA_MIN),
                         np.full(2 * n_cells, THRESH_MIN)])
    hi = np.concatenate([np.full(n_pairs, ALPHA_MAX),
                         np.full(2 * n_cells, THRESH_MAX)])
    return lo, hi


@dataclass
class ActionParams:
    """Per-pair handover offsets and per-cell reselection thresholds.

    alpha[i, j] biases handover from serving cell i to candidate j (dB,
    diagonal unused). beta[i] is the serving-cell RSRP below which an idle
    UE looks elsewhere; lam[j] the candidate RSRP it must clear.
    """

    alpha: np.ndarray  # (n, n)
    beta: np.ndarray   # (n,)
    lam: np.ndarray    # (n,)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.lam = np.asarray(self.lam, dtype=np.float64)
        n = self.beta.shape[0]
        if self.alpha.shape != (n, n) or self.lam.shape != (n,):
            raise ValueError("inconsistent action shapes")

    @property
    def n_cells(self) -> int:
        return self.beta.shape[0]

    @classmethod
    def from_vector(cls, vec, n_cells: int) -> "ActionParams":
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if vec.shape[0] != action_dim(n_cells):
            raise ValueError(f"action vector must have length {action_dim(n_cells)}")
        alpha = np.zeros((n_cells, n_cells))
        k = 0
        for i in range(n_cells):
            for j in range(n_cells):
                if i != j:
                    alpha[i, j] = vec[k]
                    k += 1
        beta = vec[k:k + n_cells].copy()
        lam = vec[k + n_cells:].copy()
        return cls(alpha=alpha, beta=beta, lam=lam)

    def to_vector(self) -> np.ndarray:
        n = self.n_cells
        off = [self.alpha[i, j] for i in range(n) for j in range(n) if i != j]
        return np.concatenate([np.asarray(off), self.beta, self.lam])

    def clamped(self) -> tuple["ActionParams", bool]:
        """Bounds-clamped copy plus a flag telling whether anything moved."""
        a = np.clip(self.alpha, ALPHA_MIN, ALPHA_MAX)
        np.fill_diagonal(a, 0.0)
        b = np.clip(self.beta, THRESH_MIN, THRESH_MAX)
        l = np.clip(self.lam, THRESH_MIN, THRESH_MAX)
        changed = not (np.array_equal(a, self.alpha)
                       and np.array_equal(b, self.beta)
                       and np.array_equal(l, self.lam))
        return ActionParams(alpha=a, beta=b, lam=l), changed

    @classmethod
    def midpoint(cls, n_cells: int) -> "ActionParams":
        mid = 0.5 * (THRESH_MIN + THRESH_MAX)
        return cls(alpha=np.zeros((n_cells, n_cells)),
                   beta=np.full(n_cells, mid), lam=np.full(n_cells, mid))


@dataclass
class StateVector:
    """Per-step observation: per-cell mean active count, utilization and
    throughput (Mbps), averaged over the ticks of the control step."""

    active: np.ndarray
    util: np.ndarray
    thr: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.active, self.util, self.thr])

    @classmethod
    def from_vector(cls, vec, n_cells: int) -> "StateVector":
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if vec.shape[0] != 3 * n_cells:
            raise ValueError(f"state vector must have length {3 * n_cells}")
        return cls(active=vec[:n_cells].copy(),
                   util=vec[n_cells:2 * n_cells].copy(),
                   thr=vec[2 * n_cells:].copy())


@dataclass(frozen=True)
class KpiSet:
    g_min: float
    g_avg: float
    g_sd: float
    g_below: int


def kpis(throughput: np.ndarray, chi: float) -> KpiSet:
    """Per-step KPIs from the vector of per-cell throughputs."""
    x = np.asarray(throughput, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("throughput must be a nonempty 1-D vector")
    avg = float(np.mean(x))
    sd = float(np.sqrt(np.mean((x - avg) ** 2)))
    return KpiSet(g_min=float(np.min(x)), g_avg=avg, g_sd=sd,
                  g_below=int(np.sum(x < chi)))


def reward(k: KpiSet, phi, n_cells: int) -> float:
    """phi1*G_avg + phi2*G_min + phi3/(1+G_sd) + phi4*(N_c - G_below)."""
    p1, p2, p3, p4 = phi
    return (p1 * k.g_avg + p2 * k.g_min + p3 / (1.0 + k.g_sd)
            + p4 * (n_cells - k.g_below))


# ---------------------------------------------------------------------------
# radio model


@dataclass
class UE:
    """Snapshot view of one user (testing / inspection)."""

    uid: int
    x: float
    y: float
    shadow_db: np.ndarray  # per-cell fixed shadowing offset
    mode: str              # "idle" | "active"
    cell: int              # camped (idle) or serving (active) cell
    remaining_bits: float
    idle_timer_s: float


def rsrp(ue: UE, cell: int, cfg: SimConfig) -> float:
    """Received power from `cell` at the UE's position (dBm)."""
    d = math.hypot(ue.x, ue.y)
    if d <= 0.0:
        raise ValueError("UE must be strictly away from the site")
    pl = (20.0 * math.log10(cfg.carrier_freqs_mhz[cell])
          + 10.0 * cfg.pathloss_exponent * math.log10(d)
          + cfg.pathloss_const_db)
    return cfg.tx_power_dbm[cell] - pl + float(ue.shadow_db[cell])


def rsrp_vector(ue: UE, cfg: SimConfig) -> np.ndarray:
    return np.array([rsrp(ue, c, cfg) for c in range(cfg.n_cells)])


def _interference_denom_dbm(cfg: SimConfig) -> np.ndarray:
    noise_mw = 10.0 ** (cfg.noise_floor_dbm / 10.0)
    intf_mw = 10.0 ** (np.asarray(cfg.interference_dbm) / 10.0)
    return 10.0 * np.log10(noise_mw + intf_mw)


def spectral_efficiency(rsrp_dbm: np.ndarray, cfg: SimConfig) -> np.ndarray:
    """Shannon efficiency log2(1+SINR) per cell, from per-cell RSRP."""
    sinr_db = np.asarray(rsrp_dbm) - _interference_denom_dbm(cfg)
    return np.log2(1.0 + 10.0 ** (sinr_db / 10.0))


def try_handover(ue: UE, action: ActionParams, cfg: SimConfig) -> int | None:
    """Target cell for an active UE, or None if no candidate qualifies.

    Candidate j beats serving i iff RSRP_j > RSRP_i + alpha[i,j] + H
    (strict); among qualifiers the max-RSRP cell wins, ties to the lowest
    index.
    """
    if ue.mode != "active":
        raise ValueError("handover applies to active UEs")
    r = rsrp_vector(ue, cfg)
    i = ue.cell
    best, best_r = None, -np.inf
    for j in range(cfg.n_cells):
        if j == i:
            continue
        if r[j] > r[i] + action.alpha[i, j] + cfg.hysteresis_db and r[j] > best_r:
            best, best_r = j, r[j]
    return best


def try_reselect(ue: UE, action: ActionParams, cfg: SimConfig) -> int | None:
    """Target cell for an idle UE, or None.

    Leaves camped cell i only if RSRP_i < beta[i]; candidate j qualifies if
    RSRP_j > lam[j] and improves on RSRP_i (without the improvement guard a
    UE camped on its best cell would hop to the runner-up and back forever
    under wide-open thresholds). Max-RSRP qualifier wins, ties to the
    lowest index.
    """
    if ue.mode != "idle":
        raise ValueError("reselection applies to idle UEs")
    r = rsrp_vector(ue, cfg)
    i = ue.cell
    if r[i] >= action.beta[i]:
        return None
    best, best_r = None, -np.inf
    for j in range(cfg.n_cells):
        if j == i:
            continue
        if r[j] > action.lam[j] and r[j] > r[i] and r[j] > best_r:
            best, best_r = j, r[j]
    return best


# ---------------------------------------------------------------------------
# tick kernel

# Struct-of-arrays layout; the kernel owns all per-tick semantics so the
# compiled and interpreted paths are the same code object. No RNG inside:
# arrival counts and all per-UE draws come in pre-drawn. Returns updated
# n_live plus event counters.


@njit(cache=True)
def _step_kernel(uid, pos, rsrp_arr, se_arr, mode, cell, demand, idle_t, acts,
                 dwell_pool, file_pool, depart_pool,
                 n_live,
                 arr_counts, new_uid, new_pos, new_rsrp, new_se,
                 new_dwell, new_file, new_depart,
                 alpha, hyst, beta, lam,
                 bw_hz, p_depart, tick_len, max_ues,
                 sum_active, sum_util, sum_thr,
                 tick_nlive, tick_arrived, tick_departed):
    ticks = arr_counts.shape[0]
    n_cells = arr_counts.shape[1]
    pool = dwell_pool.shape[1]
    cursor = 0
    admitted = 0
    dropped = 0
    departed = 0
    handovers = 0
    reselections = 0
    nact = np.zeros(n_cells, np.int64)
    served = np.zeros(n_cells, np.float64)
    offered = np.zeros(n_cells, np.float64)

    for t in range(ticks):
        arr_t = 0
        dep_t = 0

        # arrivals camp idle on their arrival cell with a fresh dwell timer
        for c in range(n_cells):
            for _ in range(arr_counts[t, c]):
                if n_live >= max_ues:
                    dropped += 1
                    cursor += 1
                    continue
                i = n_live
                uid[i] = new_uid[cursor]
                pos[i, 0] = new_pos[cursor, 0]
                pos[i, 1] = new_pos[cursor, 1]
                for q in range(n_cells):
                    rsrp_arr[i, q] = new_rsrp[cursor, q]
                    se_arr[i, q] = new_se[cursor, q]
                for q in range(pool):
                    dwell_pool[i, q] = new_dwell[cursor, q]
                    file_pool[i, q] = new_file[cursor, q]
                    depart_pool[i, q] = new_depart[cursor, q]
                mode[i] = 1
                cell[i] = c
                demand[i] = 0.0
                idle_t[i] = dwell_pool[i, 0]
                acts[i] = 0
                n_live += 1
                admitted += 1
                arr_t += 1
                cursor += 1

        # idle dwell ticks down; expiry starts a download
        for i in range(n_live):
            if mode[i] == 1:
                idle_t[i] -= tick_len
                if idle_t[i] <= 0.0:
                    mode[i] = 2
                    demand[i] = file_pool[i, acts[i] % pool]
                    acts[i] += 1

        # equal-share service within each cell at per-UE Shannon rate
        for c in range(n_cells):
            nact[c] = 0
            served[c] = 0.0
            offered[c] = 0.0
        for i in range(n_live):
            if mode[i] == 2:
                nact[cell[i]] += 1
        for i in range(n_live):
            if mode[i] == 2:
                c = cell[i]
                can = bw_hz[c] * se_arr[i, c] / nact[c] * tick_len
                take = demand[i] if demand[i] < can else can
                demand[i] -= take
                served[c] += take
                offered[c] += can
        for c in range(n_cells):
            sum_active[c] += nact[c]
            if offered[c] > 0.0:
                sum_util[c] += served[c] / offered[c]
            sum_thr[c] += served[c] / tick_len * 1e-6

        # finished downloads: depart or return to idle (swap-remove keeps
        # the live block dense; the swapped-in row is revisited)
        i = 0
        while i < n_live:
            if mode[i] == 2 and demand[i] <= 0.0:
                a_done = acts[i] - 1
                if depart_pool[i, a_done % pool] < p_depart:
                    last = n_live - 1
                    uid[i] = uid[last]
                    pos[i, 0] = pos[last, 0]
                    pos[i, 1] = pos[last, 1]
                    for q in range(n_cells):
                        rsrp_arr[i, q] = rsrp_arr[last, q]
                        se_arr[i, q] = se_arr[last, q]
                    for q in range(pool):
                        dwell_pool[i, q] = dwell_pool[last, q]
                        file_pool[i, q] = file_pool[last, q]
                        depart_pool[i, q] = depart_pool[last, q]
                    mode[i] = mode[last]
                    cell[i] = cell[last]
                    demand[i] = demand[last]
                    idle_t[i] = idle_t[last]
                    acts[i] = acts[last]
                    n_live = last
                    departed += 1
                    dep_t += 1
                    continue
                mode[i] = 1
                idle_t[i] = dwell_pool[i, acts[i] % pool]
            i += 1

        # reselection for idle UEs (target must improve on the camped cell)
        for i in range(n_live):
            if mode[i] == 1:
                srv = cell[i]
                if rsrp_arr[i, srv] < beta[srv]:
                    best = -1
                    best_r = rsrp_arr[i, srv]
                    for j in range(n_cells):
                        if j != srv and rsrp_arr[i, j] > lam[j] and rsrp_arr[i, j] > best_r:
                            best = j
                            best_r = rsrp_arr[i, j]
                    if best >= 0:
                        cell[i] = best
                        reselections += 1

        # handover for active UEs
        for i in range(n_live):
            if mode[i] == 2:
                srv = cell[i]
                base = rsrp_arr[i, srv] + hyst
                best = -1
                best_r = -1.0e30
                for j in range(n_cells):
                    if j != srv and rsrp_arr[i, j] > base + alpha[srv, j] and rsrp_arr[i, j] > best_r:
                        best = j
                        best_r = rsrp_arr[i, j]
                if best >= 0:
                    cell[i] = best
                    handovers += 1

        tick_nlive[t] = n_live
        tick_arrived[t] = arr_t
        tick_departed[t] = dep_t

    return n_live, admitted, dropped, departed, handovers, reselections


# ---------------------------------------------------------------------------
# simulator


@dataclass
class StepResult:
    state: StateVector
    kpis: KpiSet
    reward: float
    info: dict


class SectorSim:
    """One sector under one traffic task; step() advances one control step.

    Open-ended: episode lengths are the caller's business. Determinism: all
    draws come from one np.random.Generator seeded from (task.seed, seed);
    identical (cfg, task, seed, action sequence) gives identical trajectories
    with or without jit.
    """

    def __init__(self, cfg: SimConfig, task: TrafficTask, seed: int = 0,
                 use_jit: bool = True):
        cfg.validate()
        task.validate()
        if len(task.cells) != cfg.n_cells:
            raise ValueError("task cell count must match cfg.n_cells")
        self.cfg = cfg
        self.task = task
        self._base_seed = seed
        self._use_jit = use_jit
        self._bw_hz = np.asarray(cfg.bandwidths_mhz, dtype=np.float64) * 1e6
        self.reset()

    # -- state management ---------------------------------------------------

    def reset(self, seed: int | None = None) -> StateVector:
        if seed is not None:
            self._base_seed = seed
        self._rng = np.random.default_rng(
            np.random.SeedSequence(child_seed("sim", self.task.seed, self._base_seed)))
        self.sim_time = 0.0
        self.steps_done = 0
        self.n_live = 0
        self._next_uid = 0
        self._alloc(512)
        n = self.cfg.n_cells
        return StateVector(active=np.zeros(n), util=np.zeros(n), thr=np.zeros(n))

    def _alloc(self, cap: int) -> None:
        n = self.cfg.n_cells
        self._cap = cap
        self._uid = np.zeros(cap, np.int64)
        self._pos = np.zeros((cap, 2), np.float64)
        self._rsrp = np.zeros((cap, n), np.float64)
        self._se = np.zeros((cap, n), np.float64)
        self._mode = np.zeros(cap, np.int8)
        self._cell = np.zeros(cap, np.int64)
        self._demand = np.zeros(cap, np.float64)
        self._idle_t = np.zeros(cap, np.float64)
        self._acts = np.zeros(cap, np.int64)
        self._dwell_pool = np.zeros((cap, _POOL), np.float64)
        self._file_pool = np.zeros((cap, _POOL), np.float64)
        self._depart_pool = np.zeros((cap, _POOL), np.float64)

    def _ensure_capacity(self, need: int) -> None:
        if need <= self._cap:
            return
        new_cap = max(2 * self._cap, need + 64)
        old = (self._uid, self._pos, self._rsrp, self._se, self._mode,
               self._cell, self._demand, self._idle_t, self._acts,
               self._dwell_pool, self._file_pool, self._depart_pool)
        self._alloc(new_cap)
        m = self.n_live
        for dst, src in zip((self._uid, self._pos, self._rsrp, self._se,
                             self._mode, self._cell, self._demand,
                             self._idle_t, self._acts, self._dwell_pool,
                             self._file_pool, self._depart_pool), old):
            dst[:m] = src[:m]

    # -- draws ---------------------------------------------------------------

    def _draw_new_ues(self, total: int):
        cfg, rng = self.cfg, self._rng
        rmin, rmax = cfg.cell_radius_m
        r = np.sqrt(rng.uniform(rmin * rmin, rmax * rmax, total))
        theta = rng.uniform(0.0, 2.0 * np.pi, total)
        shadow = rng.normal(0.0, cfg.shadow_sigma_db, (total, cfg.n_cells))
        dwell = rng.exponential(self.task.idle_dwell_mean_s, (total, _POOL))
        fsize = rng.exponential(self.task.mean_file_size_mb * 8e6, (total, _POOL))
        dep = rng.random((total, _POOL))
        pos = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        freqs = np.asarray(cfg.carrier_freqs_mhz)
        pl = (20.0 * np.log10(freqs)[None, :]
              + 10.0 * cfg.pathloss_exponent * np.log10(r)[:, None]
              + cfg.pathloss_const_db)
        rs = np.asarray(cfg.tx_power_dbm)[None, :] - pl + shadow
        se = np.log2(1.0 + 10.0 ** ((rs - _interference_denom_dbm(cfg)[None, :]) / 10.0))
        uids = np.arange(self._next_uid, self._next_uid + total, dtype=np.int64)
        self._next_uid += total
        return uids, pos, rs, se, dwell, fsize, dep

    # -- stepping ------------------------------------------------------------

    def step(self, action) -> StepResult:
        cfg = self.cfg
        if not isinstance(action, ActionParams):
            action = ActionParams.from_vector(action, cfg.n_cells)
        act, was_clamped = action.clamped()

        ticks = cfg.ticks_per_step
        t_abs = self.sim_time + np.arange(ticks) * cfg.tick_s
        rates = self.task.rates(t_abs) * cfg.tick_s
        counts = self._rng.poisson(rates).astype(np.int64)
        total_new = int(counts.sum())
        new = self._draw_new_ues(total_new)
        self._ensure_capacity(min(self.n_live + total_new, cfg.max_ues))

        n = cfg.n_cells
        sum_active = np.zeros(n)
        sum_util = np.zeros(n)
        sum_thr = np.zeros(n)
        tick_nlive = np.zeros(ticks, np.int64)
        tick_arrived = np.zeros(ticks, np.int64)
        tick_departed = np.zeros(ticks, np.int64)

        kern = _step_kernel if self._use_jit else _step_kernel.py_func
        (self.n_live, admitted, dropped, departed, handovers,
         reselections) = kern(
            self._uid, self._pos, self._rsrp, self._se, self._mode,
            self._cell, self._demand, self._idle_t, self._acts,
            self._dwell_pool, self._file_pool, self._depart_pool,
            self.n_live,
            counts, new[0], new[1], new[2], new[3], new[4], new[5], new[6],
            act.alpha, cfg.hysteresis_db, act.beta, act.lam,
            self._bw_hz, self.task.p_depart, cfg.tick_s, cfg.max_ues,
            sum_active, sum_util, sum_thr,
            tick_nlive, tick_arrived, tick_departed)

        self.sim_time += ticks * cfg.tick_s
        self.steps_done += 1

        state = StateVector(active=sum_active / ticks, util=sum_util / ticks,
                            thr=sum_thr / ticks)
        k = kpis(state.thr, cfg.chi_mbps)
        k_scaled = KpiSet(g_min=k.g_min / cfg.kpi_scale_mbps,
                          g_avg=k.g_avg / cfg.kpi_scale_mbps,
                          g_sd=k.g_sd, g_below=k.g_below)
        r = reward(k_scaled, cfg.phi, cfg.n_cells)
        info = {
            "admitted": int(admitted), "dropped": int(dropped),
            "departed": int(departed), "handovers": int(handovers),
            "reselections": int(reselections), "clamped": was_clamped,
            "n_ues": int(self.n_live), "sim_time": self.sim_time,
            "tick_nlive": tick_nlive, "tick_arrived": tick_arrived,
            "tick_departed": tick_departed,
        }
        return StepResult(state=state, kpis=k, reward=r, info=info)

    # -- inspection / testing -------------------------------------------------

    def ue_views(self) -> list[UE]:
        out = []
        for i in range(self.n_live):
            out.append(UE(uid=int(self._uid[i]), x=float(self._pos[i, 0]),
                          y=float(self._pos[i, 1]),
                          shadow_db=self._shadow_of(i),
                          mode="idle" if self._mode[i] == 1 else "active",
                          cell=int(self._cell[i]),
                          remaining_bits=float(self._demand[i]),
                          idle_timer_s=float(self._idle_t[i])))
        return out

    def _shadow_of(self, i: int) -> np.ndarray:
        # recover the shadow offsets from stored RSRP and the deterministic
        # path-loss part
        cfg = self.cfg
        d = math.hypot(self._pos[i, 0], self._pos[i, 1])
        freqs = np.asarray(cfg.carrier_freqs_mhz)
        pl = (20.0 * np.log10(freqs) + 10.0 * cfg.pathloss_exponent * math.log10(d)
              + cfg.pathloss_const_db)
        return self._rsrp[i] - (np.asarray(cfg.tx_power_dbm) - pl)

    def inject_ue(self, x: float, y: float, shadow_db=None, mode: str = "idle",
                  cell: int = 0, demand_bits: float = 0.0,
                  idle_timer_s: float = 1e18) -> int:
        """Testing hook: place a UE with chosen attributes; lifecycle pools
        are drawn from the sim RNG."""
        cfg = self.cfg
        self._ensure_capacity(self.n_live + 1)
        i = self.n_live
        if shadow_db is None:
            shadow_db = np.zeros(cfg.n_cells)
        shadow_db = np.asarray(shadow_db, dtype=np.float64)
        d = math.hypot(x, y)
        if d <= 0.0:
            raise ValueError("UE must be strictly away from the site")
        freqs = np.asarray(cfg.carrier_freqs_mhz)
        pl = (20.0 * np.log10(freqs) + 10.0 * cfg.pathloss_exponent * math.log10(d)
              + cfg.pathloss_const_db)
        rs = np.asarray(cfg.tx_power_dbm) - pl + shadow_db
        self._uid[i] = self._next_uid
        self._next_uid += 1
        self._pos[i] = (x, y)
        self._rsrp[i] = rs
        self._se[i] = np.log2(1.0 + 10.0 ** ((rs - _interference_denom_dbm(cfg)) / 10.0))
        self._mode[i] = 1 if mode == "idle" else 2
        self._cell[i] = cell
        self._demand[i] = demand_bits
        self._idle_t[i] = idle_timer_s
        self._acts[i] = 1 if mode == "active" else 0
        self._dwell_pool[i] = self._rng.exponential(self.task.idle_dwell_mean_s, _POOL)
        self._file_pool[i] = self._rng.exponential(self.task.mean_file_size_mb * 8e6, _POOL)
        self._depart_pool[i] = self._rng.random(_POOL)
        self.n_live += 1
        return int(self._uid[i])


# ---------------------------------------------------------------------------
# traces


TRACE_HEADER_BASE = ("step", "reward")


def trace_header(n_cells: int) -> list[str]:
    h = list(TRACE_HEADER_BASE)
    h += [f"active_{c}" for c in range(n_cells)]
    h += [f"util_{c}" for c in range(n_cells)]
    h += [f"thr_{c}" for c in range(n_cells)]
    return h


def write_trace(path, records, n_cells: int) -> None:
    """records: iterable of (step_index, reward, StateVector)."""
    from .utils import write_csv, fmt_float
    rows = []
    for step_i, rew, sv in records:
        row = [step_i, fmt_float(rew)]
        row += [fmt_float(v) for v in sv.active]
        row += [fmt_float(v) for v in sv.util]
        row += [fmt_float(v) for v in sv.thr]
        rows.append(row)
    write_csv(path, trace_header(n_cells), rows)
